//! DDR model behind the MEM FIFO.
//!
//! Argument `i` lives at `i × arg_region_size`. Payload words are 64 bits
//! wide but the memory interface is 512 bits: consecutive words are
//! collected in an eight-slot staging register and committed as one wide
//! word, word `j` of a group occupying bit lanes `[64·j, 64·(j+1))`.
//! Partially filled groups are flushed with a lane-masked write at the end
//! of each message.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::frame::MemWrite;
use crate::interval::IntervalSet;

pub const DEFAULT_ARG_REGION: u64 = 64 << 20;
pub const DEFAULT_DDR_CAPACITY: u64 = 8 << 30;
pub const LANES: usize = 8;
pub const WIDE_BYTES: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DdrError {
    #[error("argument {arg_index}: {end} bytes exceed the {region}-byte region")]
    RegionOverflow { arg_index: u16, end: u64, region: u64 },
    #[error("argument {0} lies beyond DDR capacity")]
    BeyondCapacity(u16),
}

/// One 512-bit memory word.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Wide512(pub [u64; LANES]);

impl Wide512 {
    pub fn lane(&self, j: usize) -> u64 {
        self.0[j]
    }

    /// The word as 64 little-endian bytes: lane `j` is bits `[64j, 64j+64)`.
    pub fn to_le_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        for (j, w) in self.0.iter().enumerate() {
            out[8 * j..8 * j + 8].copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Bit `b` of the 512-bit word.
    pub fn bit(&self, b: usize) -> bool {
        (self.0[b / 64] >> (b % 64)) & 1 == 1
    }
}

pub fn pack(words: [u64; LANES]) -> Wide512 {
    Wide512(words)
}

pub fn unpack(w: Wide512) -> [u64; LANES] {
    w.0
}

#[derive(Debug, Clone, Copy)]
struct Staging {
    wide_index: u64,
    lanes: [Option<u64>; LANES],
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DdrCounters {
    pub words_written: u64,
    pub full_commits: u64,
    pub masked_commits: u64,
}

#[derive(Debug)]
pub struct DdrMemory {
    capacity: u64,
    arg_region_size: u64,
    cells: HashMap<u64, Wide512>,
    staging: Option<Staging>,
    coverage: HashMap<u16, (u64, IntervalSet)>,
    arg_len: HashMap<u16, u64>,
    counters: DdrCounters,
}

impl DdrMemory {
    pub fn new(capacity: u64, arg_region_size: u64) -> Self {
        assert!(arg_region_size % WIDE_BYTES == 0, "region must be 64-byte aligned");
        DdrMemory {
            capacity,
            arg_region_size,
            cells: HashMap::new(),
            staging: None,
            coverage: HashMap::new(),
            arg_len: HashMap::new(),
            counters: DdrCounters::default(),
        }
    }

    pub fn arg_region_size(&self) -> u64 {
        self.arg_region_size
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn counters(&self) -> &DdrCounters {
        &self.counters
    }

    pub fn arg_base(&self, arg_index: u16) -> u64 {
        arg_index as u64 * self.arg_region_size
    }

    /// Length in bytes of the most recently completed contents of `arg_index`.
    pub fn arg_len(&self, arg_index: u16) -> Option<u64> {
        self.arg_len.get(&arg_index).copied()
    }

    fn check_region(&self, arg_index: u16, end: u64) -> Result<(), DdrError> {
        if end > self.arg_region_size {
            return Err(DdrError::RegionOverflow {
                arg_index,
                end,
                region: self.arg_region_size,
            });
        }
        if self.arg_base(arg_index) + self.arg_region_size > self.capacity {
            return Err(DdrError::BeyondCapacity(arg_index));
        }
        Ok(())
    }

    fn stage(&mut self, addr: u64, word: u64) {
        let wide_index = addr / WIDE_BYTES;
        let lane = ((addr % WIDE_BYTES) / 8) as usize;
        if self.staging.map(|s| s.wide_index) != Some(wide_index) {
            self.flush();
            self.staging = Some(Staging {
                wide_index,
                lanes: [None; LANES],
            });
        }
        let s = self.staging.as_mut().unwrap();
        s.lanes[lane] = Some(word);
        if s.lanes.iter().all(Option::is_some) {
            let words = s.lanes.map(Option::unwrap);
            self.cells.insert(wide_index, pack(words));
            self.counters.full_commits += 1;
            self.staging = None;
        }
    }

    fn flush(&mut self) {
        if let Some(s) = self.staging.take() {
            let cell = self.cells.entry(s.wide_index).or_default();
            for (j, w) in s.lanes.iter().enumerate() {
                if let Some(w) = w {
                    cell.0[j] = *w;
                }
            }
            self.counters.masked_commits += 1;
        }
    }

    /// Stores one message. Returns `true` when this write completed the
    /// coverage of `[0, total_len)` for its argument.
    pub fn write(&mut self, mw: &MemWrite) -> Result<bool, DdrError> {
        let end = mw.offset + 8 * mw.words.len() as u64;
        self.check_region(mw.arg_index, end.max(mw.total_len))?;
        let base = self.arg_base(mw.arg_index);
        for (k, &w) in mw.words.iter().enumerate() {
            self.stage(base + mw.offset + 8 * k as u64, w);
        }
        self.flush();
        self.counters.words_written += mw.words.len() as u64;

        let entry = self
            .coverage
            .entry(mw.arg_index)
            .or_insert_with(|| (mw.total_len, IntervalSet::new()));
        if entry.0 != mw.total_len {
            *entry = (mw.total_len, IntervalSet::new());
        }
        entry.1.insert(mw.offset, end);
        if entry.1.covers_prefix(mw.total_len) {
            self.coverage.remove(&mw.arg_index);
            self.arg_len.insert(mw.arg_index, mw.total_len);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn read_wide(&self, addr: u64) -> Wide512 {
        self.cells
            .get(&(addr / WIDE_BYTES))
            .copied()
            .unwrap_or_default()
    }

    pub fn read_word(&self, addr: u64) -> u64 {
        debug_assert!(addr % 8 == 0);
        self.read_wide(addr).lane(((addr % WIDE_BYTES) / 8) as usize)
    }

    /// Reads `len` bytes of argument `arg_index` as 64-bit words.
    pub fn read_arg_words(&self, arg_index: u16, len: u64) -> Vec<u64> {
        let base = self.arg_base(arg_index);
        (0..len / 8).map(|k| self.read_word(base + 8 * k)).collect()
    }

    pub fn read_arg(&self, arg_index: u16) -> Vec<u64> {
        self.read_arg_words(arg_index, self.arg_len(arg_index).unwrap_or(0))
    }

    /// Writes a kernel result into an argument region.
    pub fn write_arg(&mut self, arg_index: u16, words: &[u64]) -> Result<(), DdrError> {
        let len = 8 * words.len() as u64;
        self.check_region(arg_index, len)?;
        let base = self.arg_base(arg_index);
        for (k, &w) in words.iter().enumerate() {
            self.stage(base + 8 * k as u64, w);
        }
        self.flush();
        self.arg_len.insert(arg_index, len);
        Ok(())
    }
}
