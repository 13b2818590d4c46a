//! The remote host: discovers devices, programs them by broadcast, loads
//! kernel arguments, starts kernels and collects their output.
//!
//! One control loop owns the registry and multiplexes transport events
//! with timers. Every phase waits for per-device confirmations; missing
//! ones are retried by resending the whole phase to just those devices,
//! and devices that stay silent are marked unreachable.

pub mod ptrans;
pub mod registry;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frame::{
    KernelCmd, MacAddress, MemAck, MemWrite, OutputChunk, Payload, PrAck, PrChunk, Probe,
    MAX_WORDS_PER_FRAME, PR_CHUNK_BYTES,
};
use crate::frame::Frame;
use crate::interval::IntervalSet;
use crate::transport::{Received, Transport, TransportError};

pub use registry::{DeviceEntry, DeviceRegistry, DeviceState, InvalidState};

#[derive(Debug, Error)]
pub enum HostError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    InvalidState(#[from] InvalidState),
    #[error("device {0} is not in the registry")]
    UnknownDevice(MacAddress),
    #[error("bitstream is empty")]
    EmptyBitstream,
    #[error("device {device} did not confirm {phase} after retries")]
    Timeout { device: MacAddress, phase: &'static str },
    #[error("device {device} rejected argument {arg_index} with status {status}")]
    AgentStatus {
        device: MacAddress,
        arg_index: u16,
        status: u8,
    },
    #[error("output from {device} has {missing} bytes missing after retries")]
    GapInStream { device: MacAddress, missing: u64 },
    #[error("cannot split {n} columns over {k} devices")]
    IndivisiblePartition { n: usize, k: usize },
}

pub type Result<T, E = HostError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSet {
    Broadcast,
    Devices(Vec<MacAddress>),
}

impl TargetSet {
    pub fn one(mac: MacAddress) -> Self {
        TargetSet::Devices(vec![mac])
    }
}

/// How long to wait for a phase's confirmations and how often to retry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Fixed confirmation timeout in seconds. When absent, the timeout is
    /// `timeout_factor` times the measured duration of the send phase.
    pub ack_timeout_s: Option<f64>,
    pub timeout_factor: f64,
    /// Lower bound on the derived timeout, seconds.
    pub min_timeout_s: f64,
    pub max_retries: u32,
    /// How long to wait for a kernel's output, seconds.
    pub collect_timeout_s: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            ack_timeout_s: None,
            timeout_factor: 3.0,
            min_timeout_s: 0.05,
            max_retries: 2,
            collect_timeout_s: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn timeout_for(&self, send_phase: Duration) -> Duration {
        match self.ack_timeout_s {
            Some(t) => Duration::from_secs_f64(t),
            None => send_phase
                .mul_f64(self.timeout_factor)
                .max(Duration::from_secs_f64(self.min_timeout_s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HostConfig {
    pub probe_period_s: f64,
    pub retry: RetryPolicy,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            probe_period_s: 1.0,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProgramFailure {
    Timeout,
    DigestMismatch {
        #[serde(serialize_with = "crate::report::hex32")]
        reported: [u8; 32],
    },
    Rejected { status: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceAck {
    #[serde(serialize_with = "crate::report::hex32")]
    pub digest: [u8; 32],
    #[serde(serialize_with = "crate::report::duration_s")]
    pub at: Duration,
    /// 0 for the first send, then one per retry.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramReport {
    pub bitstream_len: u64,
    #[serde(serialize_with = "crate::report::hex32")]
    pub expected_digest: [u8; 32],
    pub acks: BTreeMap<MacAddress, DeviceAck>,
    pub failures: BTreeMap<MacAddress, ProgramFailure>,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub started: Duration,
    /// Time of the last acknowledgement (or of giving up).
    #[serde(serialize_with = "crate::report::duration_s")]
    pub finished: Duration,
    pub frames_sent: u64,
    pub retries: u32,
}

impl ProgramReport {
    pub fn elapsed(&self) -> Duration {
        self.finished.saturating_sub(self.started)
    }

    pub fn all_ok(&self) -> bool {
        self.failures.is_empty()
    }

    /// Time until the last successful acknowledgement.
    pub fn time_to_last_ack(&self) -> Option<Duration> {
        self.acks.values().map(|a| a.at).max().map(|t| t - self.started)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgLoad {
    pub device: MacAddress,
    pub arg_index: u16,
    pub bytes: u64,
    pub frames: u64,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub sent_at: Duration,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub acked_at: Duration,
}

/// One kernel's output as reassembled by the host.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelOutput {
    #[serde(skip)]
    pub words: Vec<u64>,
    pub len_bytes: u64,
    /// Set when the kernel answered with a status frame instead of data.
    pub status: Option<u64>,
    pub frames: u64,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub first_at: Duration,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub last_at: Duration,
}

impl KernelOutput {
    pub fn to_bytes(&self) -> Vec<u8> {
        words_to_bytes(&self.words, self.len_bytes as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRecord {
    pub phase: String,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub start: Duration,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub end: Duration,
    pub devices: usize,
    pub ok: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub host: MacAddress,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub time: Duration,
    pub registry: DeviceRegistry,
    pub phases: Vec<PhaseRecord>,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub probes_sent: u64,
}

/// Packs bytes into little-endian 64-bit words, zero-padding the tail.
pub fn bytes_to_words(data: &[u8]) -> Vec<u64> {
    data.chunks(8)
        .map(|c| {
            let mut w = [0u8; 8];
            w[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(w)
        })
        .collect()
}

pub fn words_to_bytes(words: &[u64], len: usize) -> Vec<u8> {
    let mut out: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    out.truncate(len);
    out
}

/// Number of argument frames a payload of `bytes` takes.
pub fn mem_write_frames(bytes: u64) -> u64 {
    bytes.div_ceil(8 * MAX_WORDS_PER_FRAME as u64).max(1)
}

#[derive(Debug, Default)]
struct Assembly {
    total_len: Option<u64>,
    words: Vec<u64>,
    covered: IntervalSet,
    status: Option<u64>,
    frames: u64,
    first_at: Option<Duration>,
    last_at: Duration,
}

impl Assembly {
    fn add(&mut self, at: Duration, chunk: OutputChunk) {
        self.frames += 1;
        self.first_at.get_or_insert(at);
        self.last_at = at;
        if chunk.is_status_frame() {
            self.status = Some(chunk.words[0]);
            self.total_len = Some(0);
            return;
        }
        if self.total_len != Some(chunk.total_len) {
            self.total_len = Some(chunk.total_len);
            self.words = vec![0; (chunk.total_len / 8) as usize];
            self.covered.clear();
            self.status = None;
        }
        let start = (chunk.stream_offset / 8) as usize;
        let end = start + chunk.words.len();
        if end > self.words.len() {
            return;
        }
        self.words[start..end].copy_from_slice(&chunk.words);
        self.covered.insert(chunk.stream_offset, 8 * end as u64);
    }

    fn complete(&self) -> bool {
        match self.total_len {
            Some(len) => self.status.is_some() || self.covered.covers_prefix(len),
            None => false,
        }
    }

    fn missing(&self) -> u64 {
        self.total_len.map_or(0, |l| l - self.covered.covered_bytes().min(l))
    }
}

pub struct Host<T: Transport> {
    transport: T,
    registry: DeviceRegistry,
    config: HostConfig,
    next_probe: Duration,
    probe_seq: u32,
    pr_acks: BTreeMap<MacAddress, (Duration, PrAck)>,
    mem_acks: BTreeMap<(MacAddress, u16), (Duration, MemAck)>,
    outputs: BTreeMap<MacAddress, Assembly>,
    last_cmd: BTreeMap<MacAddress, KernelCmd>,
    last_execute_at: Option<Duration>,
    phases: Vec<PhaseRecord>,
    frames_sent: u64,
    frames_received: u64,
    probes_sent: u64,
}

impl<T: Transport> Host<T> {
    pub fn new(transport: T, config: HostConfig) -> Self {
        Host {
            transport,
            registry: DeviceRegistry::new(),
            config,
            next_probe: Duration::ZERO,
            probe_seq: 0,
            pr_acks: BTreeMap::new(),
            mem_acks: BTreeMap::new(),
            outputs: BTreeMap::new(),
            last_cmd: BTreeMap::new(),
            last_execute_at: None,
            phases: Vec::new(),
            frames_sent: 0,
            frames_received: 0,
            probes_sent: 0,
        }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn registry(&self) -> &DeviceRegistry {
        &self.registry
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    pub fn mac(&self) -> MacAddress {
        self.transport.local_mac()
    }

    pub fn now(&self) -> Duration {
        self.transport.now()
    }

    pub fn phases(&self) -> &[PhaseRecord] {
        &self.phases
    }

    /// When the most recent execute command finished leaving the host.
    pub fn last_execute_at(&self) -> Option<Duration> {
        self.last_execute_at
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            host: self.mac(),
            time: self.now(),
            registry: self.registry.clone(),
            phases: self.phases.clone(),
            frames_sent: self.frames_sent,
            frames_received: self.frames_received,
            probes_sent: self.probes_sent,
        }
    }

    fn probe_period(&self) -> Duration {
        Duration::from_secs_f64(self.config.probe_period_s)
    }

    fn send(&mut self, dst: MacAddress, payload: &Payload) -> Result<()> {
        let frame = Frame::new(dst, self.mac(), payload);
        self.transport.send(&frame)?;
        self.frames_sent += 1;
        Ok(())
    }

    /// Broadcasts one probe. Devices that have not announced themselves
    /// since their link came up answer with a discovery frame.
    pub fn probe(&mut self) -> Result<()> {
        self.probe_seq = self.probe_seq.wrapping_add(1);
        let seq = self.probe_seq;
        self.send(MacAddress::BROADCAST, &Payload::Probe(Probe { sequence: seq }))?;
        self.probes_sent += 1;
        self.next_probe = self.now() + self.probe_period();
        Ok(())
    }

    fn maybe_probe(&mut self) -> Result<()> {
        if self.now() >= self.next_probe {
            self.probe()?;
        }
        Ok(())
    }

    fn handle(&mut self, r: Received) {
        self.frames_received += 1;
        let src = r.frame.src;
        let payload = match r.frame.decode_payload() {
            Ok(p) => p,
            Err(e) => {
                log::debug!("host dropped frame from {src}: {e}");
                return;
            }
        };
        match payload {
            Payload::Discovery(d) => {
                if self.registry.upsert(d, r.at) {
                    log::info!("discovered {}", d.mac0);
                }
                return;
            }
            Payload::PrAck(a) => {
                self.pr_acks.insert(src, (r.at, a));
            }
            Payload::MemAck(a) => {
                self.mem_acks.insert((src, a.arg_index), (r.at, a));
            }
            Payload::Output(o) => self.outputs.entry(src).or_default().add(r.at, o),
            Payload::Probe(_) | Payload::PrChunk(_) | Payload::MemWrite(_) | Payload::KernelCmd(_) => {}
        }
        self.registry.touch(&src, r.at);
    }

    /// Handles everything that has already arrived, without waiting.
    fn pump(&mut self) -> Result<()> {
        while let Some(r) = self.transport.poll()? {
            self.handle(r);
        }
        self.maybe_probe()
    }

    /// Processes traffic and periodic probes until `done` holds or
    /// `deadline` passes. Returns whether `done` held.
    fn wait_until(&mut self, deadline: Duration, mut done: impl FnMut(&Self) -> bool) -> Result<bool> {
        loop {
            if done(self) {
                return Ok(true);
            }
            if self.now() >= deadline {
                return Ok(false);
            }
            self.maybe_probe()?;
            let until = deadline.min(self.next_probe);
            if let Some(r) = self.transport.recv_until(until)? {
                self.handle(r);
            }
        }
    }

    /// Probes once and listens for `listen`. Returns the registry size.
    pub fn discover(&mut self, listen: Duration) -> Result<usize> {
        let start = self.now();
        self.probe()?;
        self.wait_until(start + listen, |_| false)?;
        self.phases.push(PhaseRecord {
            phase: "discover".into(),
            start,
            end: self.now(),
            devices: self.registry.len(),
            ok: self.registry.len(),
        });
        Ok(self.registry.len())
    }

    /// Keeps the control loop (probes and inbox) running for `d`.
    pub fn idle(&mut self, d: Duration) -> Result<()> {
        let end = self.now() + d;
        self.wait_until(end, |_| false)?;
        Ok(())
    }

    fn resolve(&self, targets: &TargetSet, to: DeviceState) -> Result<Vec<MacAddress>> {
        let macs = match targets {
            TargetSet::Broadcast => self.registry.live(),
            TargetSet::Devices(list) => {
                let mut seen = BTreeSet::new();
                list.iter().copied().filter(|m| seen.insert(*m)).collect()
            }
        };
        for m in &macs {
            if self.registry.get(m).is_none() {
                return Err(HostError::UnknownDevice(*m));
            }
            self.registry.check(m, to)?;
        }
        Ok(macs)
    }

    fn send_bitstream(&mut self, dst: MacAddress, bitstream: &Bytes) -> Result<u64> {
        let total_len = bitstream.len() as u64;
        let mut frames = 0;
        for offset in (0..bitstream.len()).step_by(PR_CHUNK_BYTES) {
            let end = (offset + PR_CHUNK_BYTES).min(bitstream.len());
            let chunk = PrChunk {
                offset: offset as u64,
                total_len,
                data: bitstream.slice(offset..end),
            };
            self.send(dst, &Payload::PrChunk(chunk))?;
            frames += 1;
            self.pump()?;
        }
        Ok(frames)
    }

    /// Programs `targets` with `bitstream`. A broadcast target set sends
    /// the bitstream once to every device; an explicit list sends it to
    /// each device in turn. Per-device failures are reported, not raised.
    pub fn program(&mut self, targets: &TargetSet, bitstream: impl Into<Bytes>) -> Result<ProgramReport> {
        let bitstream: Bytes = bitstream.into();
        if bitstream.is_empty() {
            return Err(HostError::EmptyBitstream);
        }
        let macs = self.resolve(targets, DeviceState::Programmed)?;
        let expected: [u8; 32] = Sha256::digest(&bitstream).into();
        let started = self.now();
        let mut report = ProgramReport {
            bitstream_len: bitstream.len() as u64,
            expected_digest: expected,
            acks: BTreeMap::new(),
            failures: BTreeMap::new(),
            started,
            finished: started,
            frames_sent: 0,
            retries: 0,
        };
        if macs.is_empty() {
            return Ok(report);
        }
        for m in &macs {
            self.pr_acks.remove(m);
        }
        let mut pending: BTreeSet<MacAddress> = macs.iter().copied().collect();
        for attempt in 0..=self.config.retry.max_retries {
            let phase_start = self.now();
            if attempt == 0 && *targets == TargetSet::Broadcast {
                report.frames_sent += self.send_bitstream(MacAddress::BROADCAST, &bitstream)?;
            } else {
                for m in pending.clone() {
                    report.frames_sent += self.send_bitstream(m, &bitstream)?;
                }
            }
            let deadline = phase_start + self.config.retry.timeout_for(self.now() - phase_start);
            let waiting = pending.clone();
            self.wait_until(deadline, |h| waiting.iter().all(|m| h.pr_acks.contains_key(m)))?;
            for m in waiting {
                let Some(&(at, ack)) = self.pr_acks.get(&m) else {
                    continue;
                };
                pending.remove(&m);
                if ack.status != 0 {
                    report.failures.insert(m, ProgramFailure::Rejected { status: ack.status });
                } else if ack.digest != expected {
                    report.failures.insert(m, ProgramFailure::DigestMismatch { reported: ack.digest });
                } else {
                    report.acks.insert(m, DeviceAck {
                        digest: ack.digest,
                        at,
                        attempt,
                    });
                    self.registry.set_digest(&m, ack.digest);
                    self.registry.transition(&m, DeviceState::Programmed)?;
                }
            }
            if pending.is_empty() {
                break;
            }
            if attempt < self.config.retry.max_retries {
                report.retries += 1;
                log::warn!("retrying bitstream to {} device(s)", pending.len());
            }
        }
        for m in pending {
            self.registry.mark_unreachable(&m);
            report.failures.insert(m, ProgramFailure::Timeout);
        }
        report.finished = report
            .acks
            .values()
            .map(|a| a.at)
            .max()
            .filter(|_| report.failures.is_empty())
            .unwrap_or_else(|| self.now());
        self.phases.push(PhaseRecord {
            phase: "program".into(),
            start: started,
            end: report.finished,
            devices: macs.len(),
            ok: report.acks.len(),
        });
        Ok(report)
    }

    fn send_arg(&mut self, dst: MacAddress, arg_index: u16, words: &[u64]) -> Result<u64> {
        let total_len = 8 * words.len() as u64;
        let mut frames = 0;
        let mut send = |h: &mut Self, offset: usize, part: &[u64]| -> Result<()> {
            let mw = MemWrite {
                arg_index,
                offset: 8 * offset as u64,
                total_len,
                words: part.to_vec(),
            };
            h.send(dst, &Payload::MemWrite(mw))?;
            frames += 1;
            h.pump()
        };
        if words.is_empty() {
            send(self, 0, &[])?;
        }
        for (i, part) in words.chunks(MAX_WORDS_PER_FRAME).enumerate() {
            send(self, i * MAX_WORDS_PER_FRAME, part)?;
        }
        Ok(frames)
    }

    /// Writes one kernel argument (bytes are zero-padded to whole words).
    pub fn write_arg(&mut self, device: MacAddress, arg_index: u16, data: &[u8]) -> Result<MemAck> {
        self.write_arg_words(device, arg_index, &bytes_to_words(data))
    }

    pub fn write_arg_words(&mut self, device: MacAddress, arg_index: u16, words: &[u64]) -> Result<MemAck> {
        let loads = self.load_args(&[(device, arg_index, words)])?;
        debug_assert_eq!(loads.len(), 1);
        Ok(MemAck {
            arg_index,
            status: 0,
        })
    }

    /// Sends several arguments back to back, then waits for every
    /// acknowledgement. Devices move to ArgsLoaded as their arguments land.
    pub fn load_args(&mut self, args: &[(MacAddress, u16, &[u64])]) -> Result<Vec<ArgLoad>> {
        for (m, _, _) in args {
            if self.registry.get(m).is_none() {
                return Err(HostError::UnknownDevice(*m));
            }
            self.registry.check(m, DeviceState::ArgsLoaded)?;
        }
        let started = self.now();
        let mut loads: Vec<ArgLoad> = Vec::with_capacity(args.len());
        let mut pending: BTreeSet<usize> = (0..args.len()).collect();
        for &(m, idx, _) in args {
            self.mem_acks.remove(&(m, idx));
        }
        let mut first_error = None;
        for attempt in 0..=self.config.retry.max_retries {
            let phase_start = self.now();
            for &i in &pending {
                let (m, idx, words) = args[i];
                let sent_at = self.now();
                let frames = self.send_arg(m, idx, words)?;
                if attempt == 0 {
                    loads.push(ArgLoad {
                        device: m,
                        arg_index: idx,
                        bytes: 8 * words.len() as u64,
                        frames,
                        sent_at,
                        acked_at: Duration::ZERO,
                    });
                } else {
                    loads[i].frames += frames;
                }
            }
            let deadline = phase_start + self.config.retry.timeout_for(self.now() - phase_start);
            let keys: Vec<(MacAddress, u16)> = pending.iter().map(|&i| (args[i].0, args[i].1)).collect();
            self.wait_until(deadline, |h| keys.iter().all(|k| h.mem_acks.contains_key(k)))?;
            for i in pending.clone() {
                let (m, idx, _) = args[i];
                let Some(&(at, ack)) = self.mem_acks.get(&(m, idx)) else {
                    continue;
                };
                pending.remove(&i);
                loads[i].acked_at = at;
                if ack.status != 0 {
                    first_error.get_or_insert(HostError::AgentStatus {
                        device: m,
                        arg_index: idx,
                        status: ack.status,
                    });
                } else {
                    self.registry.transition(&m, DeviceState::ArgsLoaded)?;
                }
            }
            if pending.is_empty() {
                break;
            }
        }
        let lost: BTreeSet<MacAddress> = pending.iter().map(|&i| args[i].0).collect();
        for m in &lost {
            self.registry.mark_unreachable(m);
        }
        self.phases.push(PhaseRecord {
            phase: "write_args".into(),
            start: started,
            end: self.now(),
            devices: args.len(),
            ok: args.len() - pending.len(),
        });
        if let Some(&m) = lost.iter().next() {
            return Err(HostError::Timeout {
                device: m,
                phase: "argument write",
            });
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(loads),
        }
    }

    /// Sends one kernel command. A broadcast target set sends a single
    /// broadcast frame; an explicit list sends one unicast frame each.
    pub fn execute(&mut self, targets: &TargetSet, cmd: KernelCmd) -> Result<Vec<MacAddress>> {
        let macs = self.resolve(targets, DeviceState::Running)?;
        for m in &macs {
            let s = self.registry.state(m);
            if !matches!(s, Some(DeviceState::ArgsLoaded | DeviceState::Done)) {
                return Err(InvalidState {
                    mac: *m,
                    from: s.unwrap_or(DeviceState::Unreachable),
                    to: DeviceState::Running,
                }
                .into());
            }
        }
        for m in &macs {
            self.outputs.remove(m);
            self.last_cmd.insert(*m, cmd);
        }
        let start = self.now();
        match targets {
            TargetSet::Broadcast => self.send(MacAddress::BROADCAST, &Payload::KernelCmd(cmd))?,
            TargetSet::Devices(_) => {
                for m in &macs {
                    self.send(*m, &Payload::KernelCmd(cmd))?;
                }
            }
        }
        self.last_execute_at = Some(self.now());
        for m in &macs {
            self.registry.transition(m, DeviceState::Running)?;
        }
        self.phases.push(PhaseRecord {
            phase: "execute".into(),
            start,
            end: self.now(),
            devices: macs.len(),
            ok: macs.len(),
        });
        self.pump()?;
        Ok(macs)
    }

    /// Writes a control register without starting the kernel.
    pub fn write_register(&mut self, device: MacAddress, cmd: KernelCmd) -> Result<()> {
        if self.registry.get(&device).is_none() {
            return Err(HostError::UnknownDevice(device));
        }
        self.send(device, &Payload::KernelCmd(cmd))
    }

    /// Waits for a running device's output. On timeout the command is
    /// re-sent; a device that never answers becomes unreachable.
    pub fn collect(&mut self, device: MacAddress) -> Result<KernelOutput> {
        self.registry.check(&device, DeviceState::Done)?;
        let start = self.now();
        let timeout = Duration::from_secs_f64(self.config.retry.collect_timeout_s);
        let mut ok = false;
        for attempt in 0..=self.config.retry.max_retries {
            if attempt > 0 {
                if let Some(cmd) = self.last_cmd.get(&device).copied() {
                    log::warn!("re-running kernel on {device}");
                    self.send(device, &Payload::KernelCmd(cmd))?;
                }
            }
            let deadline = self.now() + timeout;
            ok = self.wait_until(deadline, |h| h.outputs.get(&device).is_some_and(Assembly::complete))?;
            if ok {
                break;
            }
        }
        let assembly = self.outputs.remove(&device).unwrap_or_default();
        self.phases.push(PhaseRecord {
            phase: "collect".into(),
            start,
            end: self.now(),
            devices: 1,
            ok: ok as usize,
        });
        if !ok {
            if assembly.frames == 0 {
                self.registry.mark_unreachable(&device);
                return Err(HostError::Timeout {
                    device,
                    phase: "output",
                });
            }
            return Err(HostError::GapInStream {
                device,
                missing: assembly.missing(),
            });
        }
        self.registry.transition(&device, DeviceState::Done)?;
        let len_bytes = assembly.total_len.unwrap_or(0);
        Ok(KernelOutput {
            words: if assembly.status.is_some() { Vec::new() } else { assembly.words },
            len_bytes,
            status: assembly.status.filter(|&s| s != 0),
            frames: assembly.frames,
            first_at: assembly.first_at.unwrap_or(start),
            last_at: assembly.last_at,
        })
    }
}
