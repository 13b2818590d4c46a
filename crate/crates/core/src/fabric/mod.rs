//! Discrete-event L2 network.
//!
//! Switches learn source MACs on ingress, forward known unicast, and flood
//! broadcast or unknown unicast to every occupied port except the ingress
//! port. Trunks must form a tree, so flooding never loops.
//!
//! Timing per hop: a sender's frames leave back to back, each occupying it
//! for `per_frame_overhead + serialization`; every switch egress port is
//! a FIFO with infinite buffering that serializes one frame at a time; each
//! link adds its latency. Time is integer nanoseconds and ties are broken
//! by scheduling order, so runs are bit-for-bit reproducible.
//!
//! Accounting is per frame copy: `sent` counts copies put on the wire
//! (injections plus flood replicas), and every copy ends up either
//! `delivered` or `dropped`.

pub mod raw;
pub mod topology;

use std::any::Any;
use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::rc::Rc;
use std::time::Duration;

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::frame::{encode_frame, peek_dst, peek_src, Frame, MacAddress};
use crate::time::SimTime;

pub use topology::{LinkParams, PortRef, SwitchSpec, TopologySpec, TrunkSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("switch {0} does not exist")]
    UnknownSwitch(u32),
    #[error("switch {0} already exists")]
    DuplicateSwitch(u32),
    #[error("port {port} on switch {switch} is occupied")]
    PortOccupied { switch: u32, port: usize },
    #[error("switch {switch} has no port {port}")]
    NoSuchPort { switch: u32, port: usize },
    #[error("endpoint {0} is not attached")]
    NotAttached(usize),
    #[error("endpoint {0} is already attached")]
    AlreadyAttached(usize),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(usize),
    #[error("trunk between switches {0} and {1} would close a loop")]
    LoopDetected(u32, u32),
    #[error("invalid link parameters {0:?}")]
    InvalidLink(LinkParams),
    #[error("frame could not be encoded: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EndpointId(pub usize);

/// A frame handed back by a node, to be sent `delay` after the frame that
/// caused it was received.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub delay: Duration,
    pub frame: Frame,
}

impl Emission {
    pub fn now(frame: Frame) -> Self {
        Emission {
            delay: Duration::ZERO,
            frame,
        }
    }
}

/// Something plugged into a switch port.
pub trait Node {
    fn mac(&self) -> MacAddress;
    fn link_up(&mut self, _now: SimTime) {}
    fn link_down(&mut self, _now: SimTime) {}
    fn receive(&mut self, now: SimTime, frame: Bytes) -> Vec<Emission>;
    fn as_any(&self) -> &dyn Any;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

/// Frames received by an endpoint that is driven from outside the event
/// loop (the host). The queue is shared with whoever drains it.
pub type MailboxQueue = Rc<RefCell<VecDeque<(SimTime, Bytes)>>>;

pub struct Mailbox {
    mac: MacAddress,
    queue: MailboxQueue,
}

impl Mailbox {
    pub fn new(mac: MacAddress) -> (Self, MailboxQueue) {
        let queue = MailboxQueue::default();
        (
            Mailbox {
                mac,
                queue: queue.clone(),
            },
            queue,
        )
    }
}

impl Node for Mailbox {
    fn mac(&self) -> MacAddress {
        self.mac
    }

    fn receive(&mut self, now: SimTime, frame: Bytes) -> Vec<Emission> {
        self.queue.borrow_mut().push_back((now, frame));
        Vec::new()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FabricStats {
    /// Frames handed to the fabric by endpoints.
    pub injected: u64,
    /// Frame copies on the wire: injections plus flood replicas.
    pub sent: u64,
    pub delivered: u64,
    /// `lost + unroutable + filtered`.
    pub dropped: u64,
    /// Discarded by loss injection.
    pub lost: u64,
    /// No egress port, hairpin, or destination detached while in flight.
    pub unroutable: u64,
    /// Flooded copies discarded by a receiving NIC's address filter.
    pub filtered: u64,
    pub sim_time_ns: u64,
}

impl FabricStats {
    /// `delivered + dropped == sent` once no frame copy is in flight.
    pub fn is_conserved(&self) -> bool {
        self.delivered + self.dropped == self.sent
    }

    pub fn sim_time(&self) -> SimTime {
        SimTime(self.sim_time_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    /// Process every event at or before this time, then set the clock to it.
    Until(SimTime),
    /// Process events until the queue is empty.
    Quiescent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FabricAction {
    Attach {
        endpoint: EndpointId,
        switch: u32,
        port: usize,
    },
    Detach {
        endpoint: EndpointId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TraceKind {
    Deliver,
    Lost,
    Unroutable,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TraceEntry {
    pub at: SimTime,
    pub kind: TraceKind,
    pub endpoint: Option<EndpointId>,
    pub src: MacAddress,
    pub dst: MacAddress,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
enum Port {
    Free,
    Endpoint(usize),
    Trunk(usize),
}

struct Switch {
    id: u32,
    ports: Vec<Port>,
    egress_free: Vec<SimTime>,
    mac_table: HashMap<MacAddress, usize>,
}

struct Trunk {
    ends: [(usize, usize); 2],
    link: LinkParams,
}

struct Endpoint {
    node: Box<dyn Node>,
    link: LinkParams,
    at: Option<(usize, usize)>,
    tx_free: SimTime,
    epoch: u64,
}

enum EventKind {
    AtSwitch { sw: usize, port: usize, frame: Bytes },
    Deliver { ep: usize, epoch: u64, frame: Bytes },
    Emit { ep: usize, epoch: u64, frame: Bytes },
    Action(FabricAction),
}

struct Event {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct Fabric {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Event>,
    switches: Vec<Switch>,
    trunks: Vec<Trunk>,
    endpoints: Vec<Endpoint>,
    rng: ChaCha8Rng,
    stats: FabricStats,
    trace: Option<Vec<TraceEntry>>,
    action_errors: Vec<FabricError>,
    /// union-find parents over switch indices, for loop detection
    forest: Vec<usize>,
}

impl Fabric {
    pub fn new(seed: u64) -> Self {
        Fabric {
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            switches: Vec::new(),
            trunks: Vec::new(),
            endpoints: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: FabricStats::default(),
            trace: None,
            action_errors: Vec::new(),
            forest: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> FabricStats {
        FabricStats {
            sim_time_ns: self.now.0,
            ..self.stats.clone()
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> &[TraceEntry] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Errors raised by scheduled actions when they fired.
    pub fn action_errors(&self) -> &[FabricError] {
        &self.action_errors
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.at)
    }

    fn switch_index(&self, id: u32) -> Result<usize, FabricError> {
        self.switches
            .iter()
            .position(|s| s.id == id)
            .ok_or(FabricError::UnknownSwitch(id))
    }

    pub fn add_switch(&mut self, id: u32, ports: usize) -> Result<(), FabricError> {
        if self.switch_index(id).is_ok() {
            return Err(FabricError::DuplicateSwitch(id));
        }
        self.forest.push(self.switches.len());
        self.switches.push(Switch {
            id,
            ports: vec![Port::Free; ports],
            egress_free: vec![SimTime::ZERO; ports],
            mac_table: HashMap::new(),
        });
        Ok(())
    }

    fn root(&mut self, mut i: usize) -> usize {
        while self.forest[i] != i {
            self.forest[i] = self.forest[self.forest[i]];
            i = self.forest[i];
        }
        i
    }

    fn free_port(&self, r: PortRef) -> Result<(usize, usize), FabricError> {
        let sw = self.switch_index(r.switch)?;
        match self.switches[sw].ports.get(r.port) {
            None => Err(FabricError::NoSuchPort {
                switch: r.switch,
                port: r.port,
            }),
            Some(Port::Free) => Ok((sw, r.port)),
            Some(_) => Err(FabricError::PortOccupied {
                switch: r.switch,
                port: r.port,
            }),
        }
    }

    pub fn add_trunk(&mut self, a: PortRef, b: PortRef, link: LinkParams) -> Result<(), FabricError> {
        link.validate()?;
        let ea = self.free_port(a)?;
        let eb = self.free_port(b)?;
        let (ra, rb) = (self.root(ea.0), self.root(eb.0));
        if ra == rb {
            return Err(FabricError::LoopDetected(a.switch, b.switch));
        }
        self.forest[ra] = rb;
        let t = self.trunks.len();
        self.trunks.push(Trunk { ends: [ea, eb], link });
        self.switches[ea.0].ports[ea.1] = Port::Trunk(t);
        self.switches[eb.0].ports[eb.1] = Port::Trunk(t);
        Ok(())
    }

    /// Registers an endpoint without plugging it in.
    pub fn add_endpoint(&mut self, node: Box<dyn Node>, link: LinkParams) -> EndpointId {
        self.endpoints.push(Endpoint {
            node,
            link,
            at: None,
            tx_free: SimTime::ZERO,
            epoch: 0,
        });
        EndpointId(self.endpoints.len() - 1)
    }

    pub fn endpoint_count(&self) -> usize {
        self.endpoints.len()
    }

    pub fn node(&self, id: EndpointId) -> Option<&dyn Node> {
        self.endpoints.get(id.0).map(|e| e.node.as_ref())
    }

    pub fn node_as<T: 'static>(&self, id: EndpointId) -> Option<&T> {
        self.endpoints.get(id.0)?.node.as_any().downcast_ref()
    }

    pub fn node_as_mut<T: 'static>(&mut self, id: EndpointId) -> Option<&mut T> {
        self.endpoints.get_mut(id.0)?.node.as_any_mut().downcast_mut()
    }

    pub fn find_endpoint(&self, mac: MacAddress) -> Option<EndpointId> {
        self.endpoints
            .iter()
            .position(|e| e.node.mac() == mac)
            .map(EndpointId)
    }

    pub fn is_attached(&self, id: EndpointId) -> bool {
        self.endpoints.get(id.0).is_some_and(|e| e.at.is_some())
    }

    pub fn set_link(&mut self, id: EndpointId, link: LinkParams) -> Result<(), FabricError> {
        link.validate()?;
        self.endpoints
            .get_mut(id.0)
            .ok_or(FabricError::UnknownEndpoint(id.0))?
            .link = link;
        Ok(())
    }

    pub fn link(&self, id: EndpointId) -> Option<LinkParams> {
        self.endpoints.get(id.0).map(|e| e.link)
    }

    pub fn attach(&mut self, id: EndpointId, switch: u32, port: usize) -> Result<(), FabricError> {
        let ep = self
            .endpoints
            .get(id.0)
            .ok_or(FabricError::UnknownEndpoint(id.0))?;
        if ep.at.is_some() {
            return Err(FabricError::AlreadyAttached(id.0));
        }
        let (sw, port) = self.free_port(PortRef { switch, port })?;
        self.switches[sw].ports[port] = Port::Endpoint(id.0);
        let now = self.now;
        let ep = &mut self.endpoints[id.0];
        ep.at = Some((sw, port));
        ep.tx_free = ep.tx_free.max(now);
        ep.node.link_up(now);
        Ok(())
    }

    /// Unplugs an endpoint. Its MAC is flushed from every switch table and
    /// frames still in flight towards it are dropped on arrival.
    pub fn detach(&mut self, id: EndpointId) -> Result<(), FabricError> {
        let ep = self
            .endpoints
            .get_mut(id.0)
            .ok_or(FabricError::UnknownEndpoint(id.0))?;
        let (sw, port) = ep.at.take().ok_or(FabricError::NotAttached(id.0))?;
        ep.epoch += 1;
        ep.node.link_down(self.now);
        let mac = ep.node.mac();
        self.switches[sw].ports[port] = Port::Free;
        for s in &mut self.switches {
            s.mac_table.remove(&mac);
        }
        Ok(())
    }

    /// Queues a hot-plug action for time `at`.
    pub fn schedule(&mut self, at: SimTime, action: FabricAction) {
        self.push(at.max(self.now), EventKind::Action(action));
    }

    fn push(&mut self, at: SimTime, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event {
            at,
            seq: self.seq,
            kind,
        });
    }

    fn lose(&mut self, link: &LinkParams) -> bool {
        link.loss > 0.0 && self.rng.gen_bool(link.loss)
    }

    fn record(&mut self, kind: TraceKind, endpoint: Option<usize>, frame: &[u8]) {
        match kind {
            TraceKind::Deliver => self.stats.delivered += 1,
            TraceKind::Lost => {
                self.stats.lost += 1;
                self.stats.dropped += 1;
            }
            TraceKind::Unroutable => {
                self.stats.unroutable += 1;
                self.stats.dropped += 1;
            }
            TraceKind::Filtered => {
                self.stats.filtered += 1;
                self.stats.dropped += 1;
            }
        }
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEntry {
                at: self.now,
                kind,
                endpoint: endpoint.map(EndpointId),
                src: peek_src(frame).unwrap_or_default(),
                dst: peek_dst(frame).unwrap_or_default(),
                len: frame.len(),
            });
        }
    }

    /// Hands a frame to the fabric from endpoint `id` at the current time.
    /// Returns the time at which the sender is free again.
    pub fn send(&mut self, id: EndpointId, frame: &Frame) -> Result<SimTime, FabricError> {
        let bytes = encode_frame(frame).map_err(|e| FabricError::Encode(e.to_string()))?;
        self.send_bytes(id, bytes)
    }

    pub fn send_bytes(&mut self, id: EndpointId, bytes: Bytes) -> Result<SimTime, FabricError> {
        let ep = self
            .endpoints
            .get_mut(id.0)
            .ok_or(FabricError::UnknownEndpoint(id.0))?;
        let (sw, port) = ep.at.ok_or(FabricError::NotAttached(id.0))?;
        let link = ep.link;
        let start = ep.tx_free.max(self.now);
        let done = start + link.overhead() + link.serialization(bytes.len());
        ep.tx_free = done;
        self.stats.injected += 1;
        self.stats.sent += 1;
        if self.lose(&link) {
            self.record(TraceKind::Lost, Some(id.0), &bytes);
        } else {
            self.push(done + link.latency(), EventKind::AtSwitch { sw, port, frame: bytes });
        }
        Ok(done)
    }

    fn port_link(&self, sw: usize, port: usize) -> LinkParams {
        match self.switches[sw].ports[port] {
            Port::Endpoint(ep) => self.endpoints[ep].link,
            Port::Trunk(t) => self.trunks[t].link,
            Port::Free => LinkParams::default(),
        }
    }

    fn at_switch(&mut self, sw: usize, in_port: usize, frame: Bytes) {
        let src = peek_src(&frame).unwrap_or_default();
        let dst = peek_dst(&frame).unwrap_or_default();
        if !src.is_broadcast() {
            self.switches[sw].mac_table.insert(src, in_port);
        }
        let known = if dst.is_broadcast() {
            None
        } else {
            self.switches[sw].mac_table.get(&dst).copied()
        };
        let egress: Vec<usize> = match known {
            Some(p) if p == in_port => Vec::new(),
            Some(p) => vec![p],
            None => (0..self.switches[sw].ports.len())
                .filter(|&p| p != in_port && !matches!(self.switches[sw].ports[p], Port::Free))
                .collect(),
        };
        if egress.is_empty() {
            self.record(TraceKind::Unroutable, None, &frame);
            return;
        }
        self.stats.sent += egress.len() as u64 - 1;
        for p in egress {
            let link = self.port_link(sw, p);
            let start = self.switches[sw].egress_free[p].max(self.now);
            let done = start + link.serialization(frame.len());
            self.switches[sw].egress_free[p] = done;
            if self.lose(&link) {
                self.record(TraceKind::Lost, None, &frame);
                continue;
            }
            let arrive = done + link.latency();
            match self.switches[sw].ports[p] {
                Port::Endpoint(ep) => {
                    let epoch = self.endpoints[ep].epoch;
                    self.push(
                        arrive,
                        EventKind::Deliver {
                            ep,
                            epoch,
                            frame: frame.clone(),
                        },
                    );
                }
                Port::Trunk(t) => {
                    let [a, b] = self.trunks[t].ends;
                    let (nsw, nport) = if a == (sw, p) { b } else { a };
                    self.push(
                        arrive,
                        EventKind::AtSwitch {
                            sw: nsw,
                            port: nport,
                            frame: frame.clone(),
                        },
                    );
                }
                Port::Free => unreachable!(),
            }
        }
    }

    fn deliver(&mut self, ep: usize, epoch: u64, frame: Bytes) {
        let e = &self.endpoints[ep];
        if e.epoch != epoch || e.at.is_none() {
            self.record(TraceKind::Unroutable, Some(ep), &frame);
            return;
        }
        let dst = peek_dst(&frame).unwrap_or_default();
        if !dst.is_broadcast() && dst != e.node.mac() {
            self.record(TraceKind::Filtered, Some(ep), &frame);
            return;
        }
        self.record(TraceKind::Deliver, Some(ep), &frame);
        let now = self.now;
        let emissions = self.endpoints[ep].node.receive(now, frame);
        for Emission { delay, frame } in emissions {
            let bytes = match encode_frame(&frame) {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("endpoint {ep} emitted an unencodable frame: {e}");
                    continue;
                }
            };
            if delay.is_zero() {
                let _ = self.send_bytes(EndpointId(ep), bytes);
            } else {
                self.push(now + delay, EventKind::Emit { ep, epoch, frame: bytes });
            }
        }
    }

    fn apply(&mut self, action: FabricAction) {
        let r = match action {
            FabricAction::Attach {
                endpoint,
                switch,
                port,
            } => self.attach(endpoint, switch, port),
            FabricAction::Detach { endpoint } => self.detach(endpoint),
        };
        if let Err(e) = r {
            log::warn!("scheduled action failed: {e}");
            self.action_errors.push(e);
        }
    }

    /// Processes the earliest event. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(ev) = self.queue.pop() else {
            return false;
        };
        debug_assert!(ev.at >= self.now);
        self.now = ev.at;
        match ev.kind {
            EventKind::AtSwitch { sw, port, frame } => self.at_switch(sw, port, frame),
            EventKind::Deliver { ep, epoch, frame } => self.deliver(ep, epoch, frame),
            EventKind::Emit { ep, epoch, frame } => {
                if self.endpoints[ep].epoch == epoch && self.endpoints[ep].at.is_some() {
                    let _ = self.send_bytes(EndpointId(ep), frame);
                }
            }
            EventKind::Action(a) => self.apply(a),
        }
        true
    }

    pub fn run_until(&mut self, limit: RunLimit) -> FabricStats {
        match limit {
            RunLimit::Until(t) => {
                while self.queue.peek().is_some_and(|e| e.at <= t) {
                    self.step();
                }
                self.now = self.now.max(t);
            }
            RunLimit::Quiescent => while self.step() {},
        }
        self.stats()
    }
}
