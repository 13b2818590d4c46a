//! What the host orchestrator talks through: the simulated fabric or a raw
//! L2 socket.

use std::time::Duration;

use bytes::Bytes;
use thiserror::Error;

use crate::agent::AgentShell;
use crate::fabric::raw::{RawLink, RawSocketError};
use crate::fabric::{EndpointId, Fabric, FabricError, LinkParams, Mailbox, MailboxQueue, RunLimit};
use crate::frame::{decode_frame, encode_frame, Frame, MacAddress};
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Raw(#[from] RawSocketError),
    #[error("frame encode failed: {0}")]
    Encode(String),
}

pub trait Transport {
    fn local_mac(&self) -> MacAddress;

    /// Time since the transport started (virtual or wall clock).
    fn now(&self) -> Duration;

    /// Sends one frame. Returns once the sender is free to build the next.
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError>;

    /// Waits until a protocol frame addressed to this station arrives, or
    /// until `deadline`. Foreign and malformed traffic is skipped.
    fn recv_until(&mut self, deadline: Duration) -> Result<Option<Received>, TransportError>;

    /// Non-blocking receive.
    fn poll(&mut self) -> Result<Option<Received>, TransportError> {
        let now = self.now();
        self.recv_until(now)
    }
}

/// A frame plus the time it reached this station.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub at: Duration,
    pub frame: Frame,
}

fn accept(mac: MacAddress, bytes: Bytes) -> Option<Frame> {
    let f = decode_frame(bytes).ok()?;
    (f.dst == mac || f.dst.is_broadcast()).then_some(f)
}

/// Host endpoint on a simulated [`Fabric`]. Sending blocks in virtual time
/// until the host's per-frame overhead and serialization have elapsed;
/// waiting advances the event loop.
pub struct SimTransport {
    fabric: Fabric,
    host: EndpointId,
    mailbox: MailboxQueue,
    mac: MacAddress,
}

impl SimTransport {
    /// Adds a host endpoint to `fabric` and plugs it into `switch`/`port`.
    pub fn attach(
        mut fabric: Fabric,
        mac: MacAddress,
        link: LinkParams,
        switch: u32,
        port: usize,
    ) -> Result<Self, FabricError> {
        let (node, mailbox) = Mailbox::new(mac);
        let host = fabric.add_endpoint(Box::new(node), link);
        fabric.attach(host, switch, port)?;
        Ok(SimTransport {
            fabric,
            host,
            mailbox,
            mac,
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn fabric_mut(&mut self) -> &mut Fabric {
        &mut self.fabric
    }

    pub fn host_endpoint(&self) -> EndpointId {
        self.host
    }

    pub fn agent(&self, mac: MacAddress) -> Option<&AgentShell> {
        let id = self.fabric.find_endpoint(mac)?;
        self.fabric.node_as::<AgentShell>(id)
    }

    pub fn agent_mut(&mut self, mac: MacAddress) -> Option<&mut AgentShell> {
        let id = self.fabric.find_endpoint(mac)?;
        self.fabric.node_as_mut::<AgentShell>(id)
    }
}

impl Transport for SimTransport {
    fn local_mac(&self) -> MacAddress {
        self.mac
    }

    fn now(&self) -> Duration {
        self.fabric.now().since_start()
    }

    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        let free_at = self.fabric.send(self.host, frame)?;
        self.fabric.run_until(RunLimit::Until(free_at));
        Ok(())
    }

    fn recv_until(&mut self, deadline: Duration) -> Result<Option<Received>, TransportError> {
        let deadline = SimTime::from(deadline);
        loop {
            let next = self.mailbox.borrow_mut().pop_front();
            if let Some((at, bytes)) = next {
                if let Some(frame) = accept(self.mac, bytes) {
                    return Ok(Some(Received {
                        at: at.since_start(),
                        frame,
                    }));
                }
                continue;
            }
            match self.fabric.next_event_time() {
                Some(t) if t <= deadline => {
                    self.fabric.step();
                }
                _ => {
                    self.fabric.run_until(RunLimit::Until(deadline));
                    return Ok(None);
                }
            }
        }
    }
}

/// Host endpoint on a real interface.
pub struct RawTransport {
    link: RawLink,
}

impl RawTransport {
    pub fn open(iface: &str, mac: Option<MacAddress>) -> Result<Self, TransportError> {
        Ok(RawTransport {
            link: RawLink::open(iface, mac)?,
        })
    }

    pub fn link(&self) -> &RawLink {
        &self.link
    }
}

impl Transport for RawTransport {
    fn local_mac(&self) -> MacAddress {
        self.link.mac()
    }

    fn now(&self) -> Duration {
        self.link.elapsed()
    }

    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        let bytes = encode_frame(frame).map_err(|e| TransportError::Encode(e.to_string()))?;
        Ok(self.link.send(&bytes)?)
    }

    fn recv_until(&mut self, deadline: Duration) -> Result<Option<Received>, TransportError> {
        loop {
            let left = deadline.saturating_sub(self.now());
            let Some(bytes) = self.link.recv_timeout(left) else {
                return Ok(None);
            };
            let at = self.now();
            if let Some(frame) = accept(self.link.mac(), bytes) {
                return Ok(Some(Received { at, frame }));
            }
            if self.now() >= deadline {
                return Ok(None);
            }
        }
    }
}

/// Runs `agent` on a raw link until `duration` of wall time has passed.
/// Kernel compute delays are not modeled on real links; responses go out
/// immediately. Returns the number of frames the agent sent.
pub fn serve_agent(
    link: &RawLink,
    agent: &mut AgentShell,
    duration: Duration,
) -> Result<u64, TransportError> {
    let end = link.elapsed() + duration;
    let mut sent = 0;
    if !agent.is_attached() {
        agent.on_link_up();
    }
    while link.elapsed() < end {
        let Some(bytes) = link.recv_timeout(end.saturating_sub(link.elapsed())) else {
            continue;
        };
        match crate::frame::peek_dst(&bytes) {
            Some(d) if d == agent.mac() || d.is_broadcast() => {}
            _ => continue,
        }
        let now = SimTime::from(link.elapsed());
        let out = match agent.on_frame(now, bytes) {
            Ok(out) => out,
            Err(e) => {
                log::debug!("agent dropped frame: {e}");
                agent.drain()
            }
        };
        for e in out {
            let b = encode_frame(&e.frame).map_err(|e| TransportError::Encode(e.to_string()))?;
            link.send(&b)?;
            sent += 1;
        }
    }
    Ok(sent)
}
