//! Emulated accelerator shell.
//!
//! Inbound frames go through the packet analyzer ([`AgentShell::ingest`]),
//! which advances the auto-discovery FSM and sorts payloads into the PR,
//! CMD and MEM FIFOs. [`AgentShell::drain`] then feeds the PR engine, the
//! DDR interface and the kernel interface, and collects the response
//! frames the control kernels emit.
//!
//! Response frames go back to the source MAC of the frame that caused them.
//! Discovery frames are broadcast.

pub mod ddr;
pub mod fifo;
pub mod kernel;
pub mod pr;

use std::any::Any;
use std::collections::BTreeMap;
use std::time::Duration;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{Emission, Node};
use crate::frame::payload::MAX_WORDS_PER_FRAME;
use crate::frame::{
    decode_frame, DiscoveryPayload, Frame, FrameError, KernelCmd, MacAddress, MemAck, MemWrite,
    OutputChunk, Payload, PrAck, PrChunk, SafEtherType,
};
use crate::time::SimTime;

pub use ddr::{DdrError, DdrMemory, Wide512};
pub use fifo::{BoundedFifo, DEFAULT_FIFO_DEPTH};
pub use kernel::{IdentityKernel, Kernel, KernelFault, KernelSlot, PtransKernel, CONTROL_WINDOW};
pub use pr::{MuxSource, PrEngine, PrError, PrState};

/// Status codes carried in 0x80DB acknowledgements.
pub mod mem_status {
    pub const OK: u8 = 0;
    pub const REGION_OVERFLOW: u8 = 1;
    pub const NO_KERNEL: u8 = 2;
    pub const BAD_ARG_INDEX: u8 = 3;
}

/// Default vendor/product identity. These are configuration values, not
/// properties of any particular card.
pub const DEFAULT_VENDOR_ID: u16 = 0x1172;
pub const DEFAULT_PRODUCT_ID: u16 = 0x385a;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("{0:?} FIFO full, frame dropped")]
    FifoOverflow(SafEtherType),
    #[error(transparent)]
    Pr(#[from] PrError),
    #[error("a kernel is running")]
    KernelBusy,
    #[error(transparent)]
    Ddr(#[from] DdrError),
    #[error("no kernel configured")]
    NoKernelConfigured,
    #[error("argument {arg_index} out of range for {arg_count} kernel arguments")]
    BadArgIndex { arg_index: u16, arg_count: u16 },
    #[error("no kernel control register at {0:#x}")]
    UnknownControlAddress(u64),
    #[error("control base {0:#x} already occupied")]
    AddressCollision(u64),
    #[error(transparent)]
    Kernel(#[from] KernelFault),
    #[error(transparent)]
    Malformed(#[from] FrameError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AgentConfig {
    pub identity: DiscoveryPayload,
    pub fifo_depth: usize,
    pub arg_region_size: u64,
    pub ddr_capacity: u64,
    /// Modeled kernel cost per 64-bit word streamed through DDR.
    pub kernel_ns_per_word: u64,
}

/// 8 ns per 64-bit word, about 1 GB/s of kernel memory traffic.
pub const DEFAULT_KERNEL_NS_PER_WORD: u64 = 8;

impl AgentConfig {
    pub fn new(identity: DiscoveryPayload) -> Self {
        AgentConfig {
            identity,
            fifo_depth: DEFAULT_FIFO_DEPTH,
            arg_region_size: ddr::DEFAULT_ARG_REGION,
            ddr_capacity: ddr::DEFAULT_DDR_CAPACITY,
            kernel_ns_per_word: DEFAULT_KERNEL_NS_PER_WORD,
        }
    }

    /// Agent `i` with MAC channel addresses derived from the index.
    pub fn numbered(i: u16) -> Self {
        Self::new(DiscoveryPayload {
            mac0: MacAddress::local(0x100 + i),
            mac1: MacAddress::local(0x8100 + i),
            vendor_id: DEFAULT_VENDOR_ID,
            product_id: DEFAULT_PRODUCT_ID,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiscoveryState {
    AwaitFirstFrame,
    DiscoverySent,
}

/// Where every inbound frame ended up; the fields other than `frames_in`
/// always sum to `frames_in`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RouteCounters {
    pub frames_in: u64,
    pub pr_fifo: u64,
    pub cmd_fifo: u64,
    pub mem_fifo: u64,
    /// Handled by the analyzer itself (host probes).
    pub direct: u64,
    /// Protocol frames that only flow device-to-host.
    pub ignored: u64,
    pub foreign: u64,
    pub malformed: u64,
    pub overflow: u64,
}

impl RouteCounters {
    pub fn routed_total(&self) -> u64 {
        self.pr_fifo
            + self.cmd_fifo
            + self.mem_fifo
            + self.direct
            + self.ignored
            + self.foreign
            + self.malformed
            + self.overflow
    }
}

#[derive(Debug)]
struct Queued<T> {
    from: MacAddress,
    item: T,
}

const ERROR_LOG_DEPTH: usize = 64;

pub struct AgentShell {
    config: AgentConfig,
    discovery: DiscoveryState,
    attached: bool,
    epoch: u64,
    discoveries_this_epoch: u64,
    now: SimTime,
    reply_to: MacAddress,
    pr_fifo: BoundedFifo<Queued<PrChunk>>,
    cmd_fifo: BoundedFifo<Queued<KernelCmd>>,
    mem_fifo: BoundedFifo<Queued<MemWrite>>,
    pr: PrEngine,
    ddr: DdrMemory,
    slots: BTreeMap<u64, KernelSlot>,
    busy_until: SimTime,
    outbox: Vec<Emission>,
    counters: RouteCounters,
    frames_out: BTreeMap<SafEtherType, u64>,
    errors: Vec<AgentError>,
}

impl std::fmt::Debug for AgentShell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentShell")
            .field("mac", &self.mac())
            .field("discovery", &self.discovery)
            .field("pr", &self.pr.state())
            .field("slots", &self.slots)
            .finish_non_exhaustive()
    }
}

impl AgentShell {
    pub fn new(config: AgentConfig) -> Self {
        AgentShell {
            pr_fifo: BoundedFifo::new(config.fifo_depth),
            cmd_fifo: BoundedFifo::new(config.fifo_depth),
            mem_fifo: BoundedFifo::new(config.fifo_depth),
            ddr: DdrMemory::new(config.ddr_capacity, config.arg_region_size),
            config,
            discovery: DiscoveryState::AwaitFirstFrame,
            attached: false,
            epoch: 0,
            discoveries_this_epoch: 0,
            now: SimTime::ZERO,
            reply_to: MacAddress::BROADCAST,
            pr: PrEngine::new(),
            slots: BTreeMap::new(),
            busy_until: SimTime::ZERO,
            outbox: Vec::new(),
            counters: RouteCounters::default(),
            frames_out: BTreeMap::new(),
            errors: Vec::new(),
        }
    }

    /// An agent with PTRANS in slot 0 and the identity kernel in slot 1.
    pub fn with_default_kernels(config: AgentConfig) -> Self {
        let mut a = Self::new(config);
        a.register_kernel(KernelSlot::new(0, PtransKernel)).unwrap();
        a.register_kernel(KernelSlot::new(1, IdentityKernel)).unwrap();
        a
    }

    pub fn mac(&self) -> MacAddress {
        self.config.identity.mac0
    }

    pub fn identity(&self) -> &DiscoveryPayload {
        &self.config.identity
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn discovery_state(&self) -> DiscoveryState {
        self.discovery
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn discoveries_this_epoch(&self) -> u64 {
        self.discoveries_this_epoch
    }

    pub fn is_attached(&self) -> bool {
        self.attached
    }

    pub fn pr_engine(&self) -> &PrEngine {
        &self.pr
    }

    pub fn ddr(&self) -> &DdrMemory {
        &self.ddr
    }

    pub fn counters(&self) -> &RouteCounters {
        &self.counters
    }

    pub fn frames_out(&self, t: SafEtherType) -> u64 {
        self.frames_out.get(&t).copied().unwrap_or(0)
    }

    pub fn errors(&self) -> &[AgentError] {
        &self.errors
    }

    pub fn fifo_lens(&self) -> (usize, usize, usize) {
        (self.pr_fifo.len(), self.cmd_fifo.len(), self.mem_fifo.len())
    }

    pub fn kernel_running(&self) -> bool {
        self.now < self.busy_until
    }

    pub fn slots(&self) -> impl Iterator<Item = &KernelSlot> {
        self.slots.values()
    }

    fn log_error(&mut self, e: AgentError) {
        log::debug!("agent {}: {e}", self.mac());
        if self.errors.len() == ERROR_LOG_DEPTH {
            self.errors.remove(0);
        }
        self.errors.push(e);
    }

    fn reply(&mut self, payload: &Payload) -> Frame {
        *self.frames_out.entry(payload.ethertype()).or_default() += 1;
        Frame::new(self.reply_to, self.mac(), payload)
    }

    pub fn on_link_up(&mut self) {
        self.attached = true;
        self.epoch += 1;
        self.discoveries_this_epoch = 0;
        self.discovery = DiscoveryState::AwaitFirstFrame;
    }

    pub fn on_link_down(&mut self) {
        self.attached = false;
        self.discovery = DiscoveryState::AwaitFirstFrame;
        self.outbox.clear();
    }

    pub fn register_kernel(&mut self, slot: KernelSlot) -> Result<(), AgentError> {
        let base = slot.control_base();
        if self.slots.contains_key(&base) {
            return Err(AgentError::AddressCollision(base));
        }
        let last_arg = slot.kernel.arg_count().max(1) - 1;
        if self.ddr.arg_base(last_arg) + self.ddr.arg_region_size() > self.ddr.capacity() {
            return Err(DdrError::BeyondCapacity(last_arg).into());
        }
        self.slots.insert(base, slot);
        Ok(())
    }

    fn arg_count(&self) -> Option<u16> {
        self.slots.values().map(|s| s.kernel.arg_count()).max()
    }

    /// Packet analyzer: sorts one raw frame into a FIFO. The first frame
    /// after link-up (of any type) queues the discovery announcement.
    pub fn ingest(&mut self, now: SimTime, bytes: Bytes) -> Result<(), AgentError> {
        self.now = self.now.max(now);
        self.counters.frames_in += 1;
        if self.discovery == DiscoveryState::AwaitFirstFrame {
            self.discovery = DiscoveryState::DiscoverySent;
            self.discoveries_this_epoch += 1;
            *self.frames_out.entry(SafEtherType::Discovery).or_default() += 1;
            let frame = Frame::new(
                MacAddress::BROADCAST,
                self.mac(),
                &Payload::Discovery(self.config.identity),
            );
            self.outbox.push(Emission::now(frame));
        }
        let frame = match decode_frame(bytes) {
            Ok(f) => f,
            Err(FrameError::UnknownEtherType { .. }) => {
                self.counters.foreign += 1;
                return Ok(());
            }
            Err(e) => {
                self.counters.malformed += 1;
                return Err(e.into());
            }
        };
        let from = frame.src;
        let payload = match frame.decode_payload() {
            Ok(p) => p,
            Err(e) => {
                self.counters.malformed += 1;
                return Err(e.into());
            }
        };
        let ethertype = payload.ethertype();
        let pushed = match payload {
            Payload::PrChunk(item) => {
                let r = self.pr_fifo.push(Queued { from, item }).is_ok();
                self.counters.pr_fifo += r as u64;
                r
            }
            Payload::KernelCmd(item) => {
                let r = self.cmd_fifo.push(Queued { from, item }).is_ok();
                self.counters.cmd_fifo += r as u64;
                r
            }
            Payload::MemWrite(item) => {
                let r = self.mem_fifo.push(Queued { from, item }).is_ok();
                self.counters.mem_fifo += r as u64;
                r
            }
            Payload::Probe(_) => {
                self.counters.direct += 1;
                true
            }
            Payload::Discovery(_) | Payload::PrAck(_) | Payload::MemAck(_) | Payload::Output(_) => {
                self.counters.ignored += 1;
                true
            }
        };
        if pushed {
            Ok(())
        } else {
            self.counters.overflow += 1;
            Err(AgentError::FifoOverflow(ethertype))
        }
    }

    /// Empties the FIFOs through the PR engine, DDR and kernel interfaces.
    pub fn drain(&mut self) -> Vec<Emission> {
        let mut out = std::mem::take(&mut self.outbox);
        while let Some(Queued { from, item }) = self.pr_fifo.pop() {
            self.reply_to = from;
            match self.pr_process(&item) {
                Ok(Some(f)) => out.push(Emission::now(f)),
                Ok(None) => {}
                Err(e) => self.log_error(e),
            }
        }
        while let Some(Queued { from, item }) = self.mem_fifo.pop() {
            self.reply_to = from;
            match self.ddr_write(&item) {
                Ok(Some(f)) => out.push(Emission::now(f)),
                Ok(None) => {}
                Err(e) => {
                    let status = match &e {
                        AgentError::Ddr(_) => mem_status::REGION_OVERFLOW,
                        AgentError::NoKernelConfigured => mem_status::NO_KERNEL,
                        _ => mem_status::BAD_ARG_INDEX,
                    };
                    let nack = self.reply(&Payload::MemAck(MemAck {
                        arg_index: item.arg_index,
                        status,
                    }));
                    out.push(Emission::now(nack));
                    self.log_error(e);
                }
            }
        }
        while let Some(Queued { from, item }) = self.cmd_fifo.pop() {
            self.reply_to = from;
            match self.exec_timed(&item) {
                Ok((delay, frames)) => {
                    out.extend(frames.into_iter().map(|frame| Emission { delay, frame }))
                }
                Err(e) => self.log_error(e),
            }
        }
        out
    }

    /// Analyzer plus drain for one frame.
    pub fn on_frame(&mut self, now: SimTime, bytes: Bytes) -> Result<Vec<Emission>, AgentError> {
        self.ingest(now, bytes)?;
        Ok(self.drain())
    }

    pub fn pr_process(&mut self, chunk: &PrChunk) -> Result<Option<Frame>, AgentError> {
        if self.kernel_running() {
            return Err(AgentError::KernelBusy);
        }
        Ok(self
            .pr
            .accept(chunk)?
            .map(|ack: PrAck| self.reply(&Payload::PrAck(ack))))
    }

    /// Occupies the bitstream mux for a PCIe-side programming session.
    pub fn begin_pcie_programming(&mut self) -> Result<(), AgentError> {
        Ok(self.pr.begin_pcie()?)
    }

    pub fn finish_pcie_programming(&mut self, bitstream: &[u8]) {
        self.pr.finish_pcie(bitstream)
    }

    pub fn ddr_write(&mut self, mw: &MemWrite) -> Result<Option<Frame>, AgentError> {
        let arg_count = self.arg_count().ok_or(AgentError::NoKernelConfigured)?;
        if mw.arg_index >= arg_count {
            return Err(AgentError::BadArgIndex {
                arg_index: mw.arg_index,
                arg_count,
            });
        }
        if !self.ddr.write(mw)? {
            return Ok(None);
        }
        Ok(Some(self.reply(&Payload::MemAck(MemAck {
            arg_index: mw.arg_index,
            status: mem_status::OK,
        }))))
    }

    pub fn exec_cmd(&mut self, cmd: &KernelCmd) -> Result<Vec<Frame>, AgentError> {
        self.exec_timed(cmd).map(|(_, frames)| frames)
    }

    fn exec_timed(&mut self, cmd: &KernelCmd) -> Result<(Duration, Vec<Frame>), AgentError> {
        let base = match self.slots.range(..=cmd.address).next_back() {
            Some((&b, _)) if cmd.address < b + CONTROL_WINDOW => b,
            _ => return Err(AgentError::UnknownControlAddress(cmd.address)),
        };
        let offset = cmd.address - base;
        if offset != 0 {
            self.slots.get_mut(&base).unwrap().set_register(offset, cmd.data);
            return Ok((Duration::ZERO, Vec::new()));
        }
        if self.kernel_running() {
            return Err(AgentError::KernelBusy);
        }
        let slot = self.slots.get(&base).unwrap();
        let output_arg = slot.output_arg();
        let inputs: Vec<Vec<u64>> = slot.input_args().map(|i| self.ddr.read_arg(i)).collect();
        let slot = self.slots.get_mut(&base).unwrap();
        slot.set_register(0, cmd.data);
        let result = slot.kernel.run(cmd.data, &inputs);
        let written = result.as_deref().unwrap_or(&[]);
        let work = slot.kernel.work_words(cmd.data, &inputs, written);
        let compute = Duration::from_nanos(work * self.config.kernel_ns_per_word);
        self.busy_until = self.now + compute;

        let words = match result.and_then(|w| {
            self.ddr
                .write_arg(output_arg, &w)
                .map(|_| w)
                .map_err(|e| KernelFault::new(0xE, e.to_string()))
        }) {
            Ok(w) => w,
            Err(fault) => {
                let frame = self.reply(&Payload::Output(OutputChunk::status_frame(fault.status)));
                self.log_error(fault.into());
                return Ok((compute, vec![frame]));
            }
        };
        Ok((compute, self.packetize_output(&words)))
    }

    /// Control kernel: slices the output region into 0x80CB frames.
    fn packetize_output(&mut self, words: &[u64]) -> Vec<Frame> {
        if words.is_empty() {
            return vec![self.reply(&Payload::Output(OutputChunk::status_frame(0)))];
        }
        let total_len = 8 * words.len() as u64;
        words
            .chunks(MAX_WORDS_PER_FRAME)
            .enumerate()
            .map(|(i, part)| {
                self.reply(&Payload::Output(OutputChunk {
                    stream_offset: (8 * MAX_WORDS_PER_FRAME * i) as u64,
                    total_len,
                    words: part.to_vec(),
                }))
            })
            .collect()
    }
}

impl Node for AgentShell {
    fn mac(&self) -> MacAddress {
        AgentShell::mac(self)
    }

    fn link_up(&mut self, _now: SimTime) {
        self.on_link_up();
    }

    fn link_down(&mut self, _now: SimTime) {
        self.on_link_down();
    }

    fn receive(&mut self, now: SimTime, frame: Bytes) -> Vec<Emission> {
        if let Err(e) = self.ingest(now, frame) {
            self.log_error(e);
        }
        self.drain()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
