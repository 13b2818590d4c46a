//! Half-open byte interval sets, used for bitstream coverage, DDR argument
//! coverage and output stream reassembly.

use std::collections::BTreeMap;

/// Disjoint, non-adjacent `[start, end)` intervals keyed by start.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntervalSet {
    spans: BTreeMap<u64, u64>,
    covered: u64,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn covered_bytes(&self) -> u64 {
        self.covered
    }

    pub fn span_count(&self) -> usize {
        self.spans.len()
    }

    /// True when `[0, len)` is fully covered.
    pub fn covers_prefix(&self, len: u64) -> bool {
        if len == 0 {
            return true;
        }
        matches!(self.spans.first_key_value(), Some((&0, &end)) if end >= len)
    }

    pub fn contains(&self, start: u64, end: u64) -> bool {
        if start >= end {
            return true;
        }
        match self.spans.range(..=start).next_back() {
            Some((_, &e)) => e >= end,
            None => false,
        }
    }

    /// Inserts `[start, end)` and returns the sub-intervals that were not
    /// already covered, in ascending order.
    pub fn insert(&mut self, start: u64, end: u64) -> Vec<(u64, u64)> {
        if start >= end {
            return Vec::new();
        }
        let mut fresh = Vec::new();
        let mut cursor = start;
        let mut lo = start;
        let mut hi = end;

        // Merge with a span that starts before `start` and reaches it.
        if let Some((&s, &e)) = self.spans.range(..=start).next_back() {
            if e >= start {
                lo = s;
                hi = hi.max(e);
                cursor = cursor.max(e);
                self.spans.remove(&s);
            }
        }
        let overlapping: Vec<(u64, u64)> = self
            .spans
            .range(start..=end)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in overlapping {
            if s > cursor {
                fresh.push((cursor, s.min(end)));
            }
            cursor = cursor.max(e);
            hi = hi.max(e);
            self.spans.remove(&s);
        }
        if cursor < end {
            fresh.push((cursor, end));
        }
        self.spans.insert(lo, hi);
        self.covered += fresh.iter().map(|(s, e)| e - s).sum::<u64>();
        fresh
    }

    pub fn clear(&mut self) {
        self.spans.clear();
        self.covered = 0;
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.spans.iter().map(|(&s, &e)| (s, e))
    }
}
