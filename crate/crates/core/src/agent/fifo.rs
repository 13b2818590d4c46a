use std::collections::VecDeque;

/// Default depth of each ingress FIFO.
pub const DEFAULT_FIFO_DEPTH: usize = 4096;

/// A bounded FIFO that refuses pushes when full, like a hardware FIFO
/// with its `full` flag asserted.
#[derive(Debug, Clone)]
pub struct BoundedFifo<T> {
    items: VecDeque<T>,
    capacity: usize,
    overflows: u64,
}

impl<T> BoundedFifo<T> {
    pub fn new(capacity: usize) -> Self {
        BoundedFifo {
            items: VecDeque::new(),
            capacity,
            overflows: 0,
        }
    }

    /// Returns the item back when the FIFO is full.
    pub fn push(&mut self, item: T) -> Result<(), T> {
        if self.items.len() >= self.capacity {
            self.overflows += 1;
            return Err(item);
        }
        self.items.push_back(item);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn overflows(&self) -> u64 {
        self.overflows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_and_bounds() {
        let mut f = BoundedFifo::new(3);
        for i in 0..3 {
            f.push(i).unwrap();
        }
        assert_eq!(f.push(3), Err(3));
        assert_eq!(f.overflows(), 1);
        assert_eq!((f.pop(), f.pop(), f.pop(), f.pop()), (Some(0), Some(1), Some(2), None));
    }
}
