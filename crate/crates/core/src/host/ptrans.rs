//! Distributed matrix transpose across independent devices.
//!
//! The matrix is split into block-columns, one per device. Each device
//! transposes its `rows × w` block into `w` consecutive rows of the global
//! transpose, so the host reassembles by concatenation. Devices never talk
//! to each other.
//!
//! Strong scaling keeps an `n × n` matrix and splits its columns as evenly
//! as possible (the first `n mod k` devices take one extra column). Weak
//! scaling gives every device its own `n × n` block of an `n × k·n` matrix.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Host, HostError, Result, TargetSet};
use crate::agent::kernel::PtransKernel;
use crate::frame::{KernelCmd, MacAddress};
use crate::transport::Transport;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Columns `c0..c1` as a row-major `rows × (c1-c0)` matrix.
    pub fn column_block(&self, c0: usize, c1: usize) -> Matrix {
        Matrix::from_fn(self.rows, c1 - c0, |r, c| self.get(r, c0 + c))
    }

    pub fn to_words(&self) -> Vec<u64> {
        self.data.iter().map(|x| x.to_bits()).collect()
    }

    pub fn from_words(rows: usize, cols: usize, words: &[u64]) -> Self {
        assert_eq!(words.len(), rows * cols);
        Matrix {
            rows,
            cols,
            data: words.iter().map(|&w| f64::from_bits(w)).collect(),
        }
    }

    /// Equality of the bit patterns, so NaNs and signed zeros count.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    Strong,
    Weak,
}

/// Column ranges for `k` devices over `n` columns.
pub fn partition(n: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k > n {
        return Err(HostError::IndivisiblePartition { n, k });
    }
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut c = 0;
    for i in 0..k {
        let w = base + (i < extra) as usize;
        out.push((c, c + w));
        c += w;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DevicePtrans {
    pub device: MacAddress,
    pub columns: (usize, usize),
    pub transfer_s: f64,
    pub compute_s: f64,
    pub collect_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PtransRun {
    pub k: usize,
    pub n: usize,
    pub scaling: Scaling,
    pub rows: usize,
    pub cols: usize,
    /// The reassembled result equals the direct transpose bit for bit.
    pub correct: bool,
    /// First argument frame to last argument acknowledgement.
    pub transfer_s: f64,
    /// Execute command leaving the host to the first output frame of the
    /// slowest device.
    pub compute_s: f64,
    /// Slowest first output frame to the last output frame.
    pub collect_s: f64,
    pub total_s: f64,
    pub per_device: Vec<DevicePtrans>,
    #[serde(skip)]
    pub result: Matrix,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Runs one transpose on `devices`, which must already be programmed with
/// the transpose kernel in slot `kernel_id`.
pub fn run_ptrans<T: Transport>(
    host: &mut Host<T>,
    devices: &[MacAddress],
    n: usize,
    scaling: Scaling,
    kernel_id: u32,
    seed: u64,
) -> Result<PtransRun> {
    let k = devices.len();
    let (cols, blocks) = match scaling {
        Scaling::Strong => (n, partition(n, k)?),
        Scaling::Weak => {
            if k == 0 || n == 0 {
                return Err(HostError::IndivisiblePartition { n, k });
            }
            (k * n, (0..k).map(|i| (i * n, (i + 1) * n)).collect())
        }
    };
    let a = Matrix::random(n, cols, seed);
    let inputs: Vec<Vec<u64>> = blocks.iter().map(|&(c0, c1)| a.column_block(c0, c1).to_words()).collect();
    let args: Vec<(MacAddress, u16, &[u64])> = devices
        .iter()
        .zip(&inputs)
        .map(|(&m, w)| (m, 0u16, w.as_slice()))
        .collect();

    let t0 = host.now();
    let loads = host.load_args(&args)?;
    let transfer_end = loads.iter().map(|l| l.acked_at).max().unwrap_or(t0);

    let mut live = host.registry().live();
    let mut sorted = devices.to_vec();
    live.sort();
    sorted.sort();
    let targets = if live == sorted {
        TargetSet::Broadcast
    } else {
        TargetSet::Devices(devices.to_vec())
    };
    let cmd = KernelCmd {
        address: kernel_id as u64 * crate::agent::kernel::CONTROL_WINDOW,
        data: PtransKernel::param(n as u32, 0),
    };
    host.execute(&targets, cmd)?;
    let exec_at = host.last_execute_at().unwrap_or(transfer_end);

    let mut data = Vec::with_capacity(n * cols);
    let mut per_device = Vec::with_capacity(k);
    let mut first_max = exec_at;
    let mut last_max = exec_at;
    for (i, &m) in devices.iter().enumerate() {
        let out = host.collect(m)?;
        if let Some(status) = out.status {
            log::warn!("transpose on {m} failed with status {status}");
        }
        data.extend(out.words.iter().map(|&w| f64::from_bits(w)));
        first_max = first_max.max(out.first_at);
        last_max = last_max.max(out.last_at);
        let transfer = loads[i].acked_at.saturating_sub(loads[i].sent_at);
        let compute = out.first_at.saturating_sub(exec_at);
        let collect = out.last_at.saturating_sub(out.first_at);
        per_device.push(DevicePtrans {
            device: m,
            columns: blocks[i],
            transfer_s: secs(transfer),
            compute_s: secs(compute),
            collect_s: secs(collect),
            total_s: secs(transfer + compute + collect),
        });
    }
    let result = if data.len() == n * cols {
        Matrix {
            rows: cols,
            cols: n,
            data,
        }
    } else {
        Matrix {
            rows: 0,
            cols: 0,
            data: Vec::new(),
        }
    };
    let correct = result.bit_eq(&a.transpose());
    Ok(PtransRun {
        k,
        n,
        scaling,
        rows: n,
        cols,
        correct,
        transfer_s: secs(transfer_end - t0),
        compute_s: secs(first_max - exec_at),
        collect_s: secs(last_max - first_max),
        total_s: secs(last_max - t0),
        per_device,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_partition() {
        assert_eq!(partition(4, 1).unwrap(), vec![(0, 4)]);
        assert_eq!(partition(10, 4).unwrap(), vec![(0, 3), (3, 6), (6, 8), (8, 10)]);
        let p = partition(512, 20).unwrap();
        assert_eq!(p.last().unwrap().1, 512);
        assert!(p.iter().all(|(a, b)| b - a == 25 || b - a == 26));
        assert!(partition(3, 4).is_err());
        assert!(partition(3, 0).is_err());
    }

    #[test]
    fn transpose_involution() {
        let m = Matrix::random(7, 5, 1);
        assert!(m.transpose().transpose().bit_eq(&m));
        assert_eq!(m.transpose().get(4, 6), m.get(6, 4));
    }
}
