//! Ethernet II framing for the accelerator protocol.
//!
//! Frame layout in simulated mode (no preamble, no FCS):
//! ```text
//! [0..6]   destination MAC
//! [6..12]  source MAC
//! [12..14] ethertype, big-endian
//! [14..]   payload, zero-padded to at least 46 bytes
//! ```
//!
//! Every protocol message has its own ethertype. Typed payloads live in
//! [`payload`]; the raw-socket FCS helper lives in [`fcs`].

pub mod fcs;
pub mod payload;

use std::fmt;
use std::str::FromStr;

use bytes::{BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fcs::{fcs32, FCS_RESIDUE};
pub use payload::{
    DiscoveryPayload, KernelCmd, MemAck, MemWrite, OutputChunk, Payload, PrAck, PrChunk, Probe,
    MAX_WORDS_PER_FRAME, PR_CHUNK_BYTES,
};

pub const HEADER_LEN: usize = 14;
pub const MIN_PAYLOAD: usize = 46;
pub const MAX_PAYLOAD: usize = 1500;
/// Shortest legal encoded frame (header plus minimum payload).
pub const MIN_FRAME: usize = HEADER_LEN + MIN_PAYLOAD;
pub const MAX_FRAME: usize = HEADER_LEN + MAX_PAYLOAD;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the 1500-byte MTU")]
    OversizedPayload(usize),
    #[error("frame of {0} bytes is shorter than the 60-byte minimum")]
    TruncatedFrame(usize),
    #[error("ethertype {ethertype:#06x} is not a protocol frame")]
    UnknownEtherType { ethertype: u16, raw: Bytes },
    #[error("malformed {kind} payload: bad field `{field}`")]
    MalformedPayload { kind: &'static str, field: &'static str },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xff; 6]);
    pub const ZERO: MacAddress = MacAddress([0; 6]);

    pub const fn new(octets: [u8; 6]) -> Self {
        MacAddress(octets)
    }

    pub fn is_broadcast(&self) -> bool {
        self.0.iter().all(|&b| b == 0xff)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// Locally administered unicast address `02:5a:46:00:hi:lo` for index `i`.
    pub fn local(i: u16) -> Self {
        let [hi, lo] = i.to_be_bytes();
        MacAddress([0x02, 0x5a, 0x46, 0x00, hi, lo])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacAddress({self})")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address `{0}`")]
pub struct ParseMacError(pub String);

impl FromStr for MacAddress {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for o in out.iter_mut() {
            let part = parts.next().ok_or_else(|| ParseMacError(s.to_string()))?;
            if part.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *o = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.to_string()));
        }
        Ok(MacAddress(out))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The eight protocol ethertypes.
#[repr(u16)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SafEtherType {
    /// Device announces MACs, vendor and product IDs.
    Discovery = 0x80EF,
    /// Partial-reconfiguration bitstream chunk.
    PrData = 0x80AA,
    /// Reconfiguration acknowledgement.
    PrAck = 0x80AB,
    /// Kernel argument data destined for DDR.
    MemWrite = 0x80DD,
    /// Kernel argument landed.
    MemAck = 0x80DB,
    /// Kernel control register write.
    KernelCmd = 0x80CC,
    /// Kernel output stream.
    Output = 0x80CB,
    /// Host probe; wakes the discovery FSM of freshly plugged devices.
    HostProbe = 0x80EE,
}

impl SafEtherType {
    pub const ALL: [SafEtherType; 8] = [
        SafEtherType::Discovery,
        SafEtherType::PrData,
        SafEtherType::PrAck,
        SafEtherType::MemWrite,
        SafEtherType::MemAck,
        SafEtherType::KernelCmd,
        SafEtherType::Output,
        SafEtherType::HostProbe,
    ];

    pub fn value(self) -> u16 {
        self as u16
    }
}

impl TryFrom<u16> for SafEtherType {
    type Error = u16;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        SafEtherType::ALL
            .into_iter()
            .find(|t| t.value() == v)
            .ok_or(v)
    }
}

/// An L2 frame. `payload` may carry trailing pad bytes after decoding;
/// typed decoders ignore them via their own length fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub dst: MacAddress,
    pub src: MacAddress,
    pub ethertype: SafEtherType,
    pub payload: Bytes,
}

impl Frame {
    pub fn new(dst: MacAddress, src: MacAddress, payload: &Payload) -> Self {
        Frame {
            dst,
            src,
            ethertype: payload.ethertype(),
            payload: payload.encode(),
        }
    }

    /// Decodes the typed payload according to the ethertype.
    pub fn decode_payload(&self) -> Result<Payload, FrameError> {
        Payload::decode(self.ethertype, &self.payload)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len().max(MIN_PAYLOAD)
    }

    pub fn encode(&self) -> Result<Bytes, FrameError> {
        encode_frame(self)
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Bytes, FrameError> {
    let len = frame.payload.len();
    if len > MAX_PAYLOAD {
        return Err(FrameError::OversizedPayload(len));
    }
    let mut buf = BytesMut::with_capacity(frame.encoded_len());
    buf.put_slice(&frame.dst.0);
    buf.put_slice(&frame.src.0);
    buf.put_u16(frame.ethertype.value());
    buf.put_slice(&frame.payload);
    if len < MIN_PAYLOAD {
        buf.put_bytes(0, MIN_PAYLOAD - len);
    }
    Ok(buf.freeze())
}

/// Reads the destination MAC without a full decode.
pub fn peek_dst(bytes: &[u8]) -> Option<MacAddress> {
    bytes.get(0..6).map(|d| MacAddress(d.try_into().unwrap()))
}

pub fn peek_src(bytes: &[u8]) -> Option<MacAddress> {
    bytes.get(6..12).map(|d| MacAddress(d.try_into().unwrap()))
}

/// Parses the header and hands back the payload (pad bytes retained) as a
/// zero-copy slice of `bytes`.
pub fn decode_frame(bytes: Bytes) -> Result<Frame, FrameError> {
    if bytes.len() < MIN_FRAME {
        return Err(FrameError::TruncatedFrame(bytes.len()));
    }
    if bytes.len() > MAX_FRAME {
        return Err(FrameError::OversizedPayload(bytes.len() - HEADER_LEN));
    }
    let dst = peek_dst(&bytes).unwrap();
    let src = peek_src(&bytes).unwrap();
    let raw_type = u16::from_be_bytes([bytes[12], bytes[13]]);
    let ethertype = SafEtherType::try_from(raw_type).map_err(|ethertype| {
        FrameError::UnknownEtherType {
            ethertype,
            raw: bytes.clone(),
        }
    })?;
    Ok(Frame {
        dst,
        src,
        ethertype,
        payload: bytes.slice(HEADER_LEN..),
    })
}
