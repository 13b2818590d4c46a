//! Partial-reconfiguration engine behind the PR FIFO.
//!
//! Chunks may arrive in any order and any number of times. Coverage of
//! `[0, total_len)` is tracked as an interval set; the SHA-256 digest is
//! fed strictly in offset order, buffering chunks that arrive ahead of the
//! hashed prefix. Completion asserts "done", which the shell turns into a
//! 0x80AB acknowledgement.
//!
//! The bitstream mux admits one source at a time. While a PCIe-side
//! session holds it, Ethernet chunks are dropped with [`PrError::SourceBusy`].
//!
//! A chunk arriving after completion opens a new session without
//! disturbing the active image; the new image replaces it only once that
//! session is itself complete. A chunk whose `total_len` disagrees with
//! the open session is rejected, unless it is the first chunk (`offset 0`)
//! of a different bitstream, which restarts the session.

use std::collections::BTreeMap;

use bytes::Bytes;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frame::{PrAck, PrChunk};
use crate::interval::IntervalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PrState {
    Idle,
    Receiving,
    Done,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MuxSource {
    Pcie,
    Ethernet,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrError {
    #[error("bitstream mux is occupied by {0:?}")]
    SourceBusy(MuxSource),
    #[error("chunk total_len {chunk} conflicts with session total_len {session}")]
    LengthMismatch { session: u64, chunk: u64 },
    #[error("empty bitstream")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProgrammedImage {
    pub len: u64,
    #[serde(serialize_with = "crate::report::hex32")]
    pub digest: [u8; 32],
    pub source: MuxSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrCounters {
    pub chunks: u64,
    pub duplicate_bytes: u64,
    pub rejected_busy: u64,
    pub rejected_length: u64,
    pub sessions_completed: u64,
}

#[derive(Debug)]
struct Session {
    total_len: u64,
    received: IntervalSet,
    hashed: u64,
    hasher: Sha256,
    pending: BTreeMap<u64, Bytes>,
}

impl Session {
    fn new(total_len: u64) -> Self {
        Session {
            total_len,
            received: IntervalSet::new(),
            hashed: 0,
            hasher: Sha256::new(),
            pending: BTreeMap::new(),
        }
    }

    /// Returns the number of bytes that were new.
    fn insert(&mut self, chunk: &PrChunk) -> u64 {
        let mut fresh = 0;
        for (s, e) in self.received.insert(chunk.offset, chunk.end()) {
            let lo = (s - chunk.offset) as usize;
            let hi = (e - chunk.offset) as usize;
            self.pending.insert(s, chunk.data.slice(lo..hi));
            fresh += e - s;
        }
        while let Some(bytes) = self.pending.remove(&self.hashed) {
            self.hasher.update(&bytes);
            self.hashed += bytes.len() as u64;
        }
        fresh
    }

    fn complete(&self) -> bool {
        self.received.covers_prefix(self.total_len)
    }
}

#[derive(Debug, Default)]
pub struct PrEngine {
    session: Option<Session>,
    image: Option<ProgrammedImage>,
    pcie_busy: bool,
    errored: bool,
    counters: PrCounters,
}

impl PrEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> PrState {
        if self.errored {
            PrState::Error
        } else if self.session.is_some() {
            PrState::Receiving
        } else if self.image.is_some() {
            PrState::Done
        } else {
            PrState::Idle
        }
    }

    pub fn active_source(&self) -> Option<MuxSource> {
        if self.pcie_busy {
            Some(MuxSource::Pcie)
        } else if self.session.is_some() {
            Some(MuxSource::Ethernet)
        } else {
            None
        }
    }

    pub fn image(&self) -> Option<&ProgrammedImage> {
        self.image.as_ref()
    }

    pub fn counters(&self) -> &PrCounters {
        &self.counters
    }

    /// Bytes received in the open session, if any.
    pub fn received_bytes(&self) -> Option<u64> {
        self.session.as_ref().map(|s| s.received.covered_bytes())
    }

    /// Feeds one Ethernet chunk. Returns the acknowledgement once the
    /// bitstream is fully covered.
    pub fn accept(&mut self, chunk: &PrChunk) -> Result<Option<PrAck>, PrError> {
        if self.pcie_busy {
            self.counters.rejected_busy += 1;
            return Err(PrError::SourceBusy(MuxSource::Pcie));
        }
        if chunk.total_len == 0 {
            return Err(PrError::Empty);
        }
        match &self.session {
            Some(s) if s.total_len != chunk.total_len => {
                if chunk.offset != 0 {
                    self.counters.rejected_length += 1;
                    self.errored = true;
                    return Err(PrError::LengthMismatch {
                        session: s.total_len,
                        chunk: chunk.total_len,
                    });
                }
                self.session = Some(Session::new(chunk.total_len));
            }
            Some(_) => {}
            None => self.session = Some(Session::new(chunk.total_len)),
        }
        self.errored = false;
        self.counters.chunks += 1;
        let session = self.session.as_mut().unwrap();
        let fresh = session.insert(chunk);
        self.counters.duplicate_bytes += chunk.data.len() as u64 - fresh;
        if !session.complete() {
            return Ok(None);
        }
        let session = self.session.take().unwrap();
        debug_assert_eq!(session.hashed, session.total_len);
        let digest: [u8; 32] = session.hasher.finalize().into();
        self.image = Some(ProgrammedImage {
            len: session.total_len,
            digest,
            source: MuxSource::Ethernet,
        });
        self.counters.sessions_completed += 1;
        Ok(Some(PrAck { status: 0, digest }))
    }

    /// Claims the mux for the PCIe programming path.
    pub fn begin_pcie(&mut self) -> Result<(), PrError> {
        if self.session.is_some() {
            return Err(PrError::SourceBusy(MuxSource::Ethernet));
        }
        if self.pcie_busy {
            return Err(PrError::SourceBusy(MuxSource::Pcie));
        }
        self.pcie_busy = true;
        Ok(())
    }

    /// Completes a PCIe-side programming session and releases the mux.
    pub fn finish_pcie(&mut self, bitstream: &[u8]) {
        if !self.pcie_busy {
            return;
        }
        self.pcie_busy = false;
        self.image = Some(ProgrammedImage {
            len: bitstream.len() as u64,
            digest: Sha256::digest(bitstream).into(),
            source: MuxSource::Pcie,
        });
    }

    /// Releases the mux without programming.
    pub fn abort_pcie(&mut self) {
        self.pcie_busy = false;
    }
}
