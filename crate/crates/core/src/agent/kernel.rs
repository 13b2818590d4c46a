//! Kernel slots in the reconfigurable region.
//!
//! Each slot owns a 0x100-byte control window at `kernel_id × 0x100`.
//! Writing the start register (offset 0) runs the kernel; the command's
//! data word is handed to the kernel as an opaque run parameter. Inputs
//! are arguments `0..arg_count-1`; the last argument is the output region.

use std::fmt;

use thiserror::Error;

pub const CONTROL_WINDOW: u64 = 0x100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("kernel fault {status}: {reason}")]
pub struct KernelFault {
    pub status: u64,
    pub reason: String,
}

impl KernelFault {
    pub fn new(status: u64, reason: impl Into<String>) -> Self {
        assert!(status != 0, "fault status must be nonzero");
        KernelFault {
            status,
            reason: reason.into(),
        }
    }
}

pub trait Kernel: Send {
    fn name(&self) -> &str;

    /// Number of DDR arguments including the trailing output region.
    fn arg_count(&self) -> u16;

    fn run(&mut self, param: u64, inputs: &[Vec<u64>]) -> Result<Vec<u64>, KernelFault>;

    /// 64-bit words the kernel moves through memory for this run; drives
    /// the modeled execution time. Defaults to every input word read plus
    /// every output word written.
    fn work_words(&self, _param: u64, inputs: &[Vec<u64>], output: &[u64]) -> u64 {
        inputs.iter().map(|i| i.len() as u64).sum::<u64>() + output.len() as u64
    }
}

pub struct KernelSlot {
    pub kernel_id: u32,
    pub kernel: Box<dyn Kernel>,
    registers: [u64; (CONTROL_WINDOW / 8) as usize],
}

impl KernelSlot {
    pub fn new(kernel_id: u32, kernel: impl Kernel + 'static) -> Self {
        KernelSlot {
            kernel_id,
            kernel: Box::new(kernel),
            registers: [0; (CONTROL_WINDOW / 8) as usize],
        }
    }

    pub fn control_base(&self) -> u64 {
        self.kernel_id as u64 * CONTROL_WINDOW
    }

    pub fn output_arg(&self) -> u16 {
        self.kernel.arg_count().saturating_sub(1)
    }

    pub fn input_args(&self) -> std::ops::Range<u16> {
        0..self.output_arg()
    }

    pub(crate) fn set_register(&mut self, offset: u64, value: u64) {
        self.registers[(offset / 8) as usize] = value;
    }

    pub fn register(&self, offset: u64) -> u64 {
        self.registers[(offset / 8) as usize]
    }
}

impl fmt::Debug for KernelSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSlot")
            .field("kernel_id", &self.kernel_id)
            .field("kernel", &self.kernel.name())
            .field("control_base", &format_args!("{:#x}", self.control_base()))
            .finish()
    }
}

/// Copies argument 0 to the output region.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityKernel;

impl Kernel for IdentityKernel {
    fn name(&self) -> &str {
        "identity"
    }

    fn arg_count(&self) -> u16 {
        2
    }

    fn run(&mut self, _param: u64, inputs: &[Vec<u64>]) -> Result<Vec<u64>, KernelFault> {
        Ok(inputs.first().cloned().unwrap_or_default())
    }
}

/// Matrix transpose. Argument 0 holds a row-major `rows × cols` matrix of
/// 64-bit elements; the result is the row-major `cols × rows` transpose.
///
/// The run parameter packs the shape as `rows << 32 | cols`. A parameter
/// with zero in the upper half is a square `cols × cols` matrix; one with
/// zero in the lower half takes `cols` from the argument length, so a
/// single broadcast parameter fits column blocks of different widths.
#[derive(Debug, Default, Clone, Copy)]
pub struct PtransKernel;

impl PtransKernel {
    pub fn param(rows: u32, cols: u32) -> u64 {
        (rows as u64) << 32 | cols as u64
    }

    pub fn shape(param: u64) -> (usize, usize) {
        let cols = (param & 0xffff_ffff) as usize;
        let rows = (param >> 32) as usize;
        if rows == 0 {
            (cols, cols)
        } else {
            (rows, cols)
        }
    }
}

pub const FAULT_SHAPE: u64 = 0x5;

impl Kernel for PtransKernel {
    fn name(&self) -> &str {
        "ptrans"
    }

    fn arg_count(&self) -> u16 {
        2
    }

    fn run(&mut self, param: u64, inputs: &[Vec<u64>]) -> Result<Vec<u64>, KernelFault> {
        let a = inputs.first().map(Vec::as_slice).unwrap_or(&[]);
        let (rows, mut cols) = Self::shape(param);
        if cols == 0 && rows > 0 && a.len() % rows == 0 {
            cols = a.len() / rows;
        }
        if a.len() != rows * cols {
            return Err(KernelFault::new(
                FAULT_SHAPE,
                format!("{} words do not form a {rows}x{cols} matrix", a.len()),
            ));
        }
        let mut out = vec![0u64; a.len()];
        // blocked to stay cache friendly on large matrices
        const B: usize = 32;
        for rb in (0..rows).step_by(B) {
            for cb in (0..cols).step_by(B) {
                for r in rb..(rb + B).min(rows) {
                    for c in cb..(cb + B).min(cols) {
                        out[c * rows + r] = a[r * cols + c];
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ptrans_small() {
        let mut k = PtransKernel;
        let a: Vec<u64> = (1..=6).collect(); // 2x3
        let t = k.run(PtransKernel::param(2, 3), &[a]).unwrap();
        assert_eq!(t, vec![1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn ptrans_square_param_shorthand() {
        assert_eq!(PtransKernel::shape(4), (4, 4));
        assert_eq!(PtransKernel::shape(PtransKernel::param(3, 5)), (3, 5));
    }

    #[test]
    fn ptrans_shape_fault() {
        let mut k = PtransKernel;
        let err = k.run(4, &[vec![1, 2, 3]]).unwrap_err();
        assert_eq!(err.status, FAULT_SHAPE);
    }

    #[test]
    fn ptrans_infers_width() {
        let mut k = PtransKernel;
        let a: Vec<u64> = (1..=6).collect();
        let t = k.run(PtransKernel::param(2, 0), &[a]).unwrap();
        assert_eq!(t, vec![1, 4, 2, 5, 3, 6]);
        assert!(k.run(PtransKernel::param(4, 0), &[vec![1; 6]]).is_err());
    }

    #[test]
    fn slot_bases() {
        assert_eq!(KernelSlot::new(0, PtransKernel).control_base(), 0);
        assert_eq!(KernelSlot::new(1, IdentityKernel).control_base(), 0x100);
        assert_eq!(KernelSlot::new(1, IdentityKernel).output_arg(), 1);
    }
}
