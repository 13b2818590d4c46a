//! Typed payload codecs, one per ethertype. All integers are big-endian.
//!
//! | type   | layout                                                        |
//! |--------|---------------------------------------------------------------|
//! | 0x80EF | mac0(6) mac1(6) vendor_id(2) product_id(2)                    |
//! | 0x80AA | offset(8) total_len(8) len(2) data(len ≤ 1024)                |
//! | 0x80AB | status(1) digest(32)                                          |
//! | 0x80DD | arg_index(2) offset(8) total_len(8) count(2) words(8·count)   |
//! | 0x80DB | arg_index(2) status(1)                                        |
//! | 0x80CC | address(8) data(8)                                            |
//! | 0x80CB | stream_offset(8) total_len(8) count(2) words(8·count)         |
//! | 0x80EE | sequence(4)                                                   |

use bytes::{Buf, BufMut, Bytes, BytesMut};
use serde::{Deserialize, Serialize};

use super::{FrameError, MacAddress, SafEtherType};

/// Bitstream bytes carried by one 0x80AA frame.
pub const PR_CHUNK_BYTES: usize = 1024;
/// 64-bit words per 0x80DD / 0x80CB frame; 20 + 8·180 = 1460 fits the MTU.
pub const MAX_WORDS_PER_FRAME: usize = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscoveryPayload {
    pub mac0: MacAddress,
    pub mac1: MacAddress,
    pub vendor_id: u16,
    pub product_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrChunk {
    pub offset: u64,
    pub total_len: u64,
    pub data: Bytes,
}

impl PrChunk {
    pub fn end(&self) -> u64 {
        self.offset + self.data.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrAck {
    pub status: u8,
    pub digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemWrite {
    pub arg_index: u16,
    pub offset: u64,
    pub total_len: u64,
    pub words: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemAck {
    pub arg_index: u16,
    pub status: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelCmd {
    pub address: u64,
    pub data: u64,
}

/// A slice of the kernel output stream. A chunk with `total_len == 0`
/// is a status frame whose single word is the kernel status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputChunk {
    pub stream_offset: u64,
    pub total_len: u64,
    pub words: Vec<u64>,
}

impl OutputChunk {
    pub fn status_frame(status: u64) -> Self {
        OutputChunk {
            stream_offset: 0,
            total_len: 0,
            words: vec![status],
        }
    }

    pub fn is_status_frame(&self) -> bool {
        self.total_len == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub sequence: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Discovery(DiscoveryPayload),
    PrChunk(PrChunk),
    PrAck(PrAck),
    MemWrite(MemWrite),
    MemAck(MemAck),
    KernelCmd(KernelCmd),
    Output(OutputChunk),
    Probe(Probe),
}

fn malformed(kind: &'static str, field: &'static str) -> FrameError {
    FrameError::MalformedPayload { kind, field }
}

struct Reader<'a> {
    kind: &'static str,
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize, field: &'static str) -> Result<(), FrameError> {
        if self.buf.remaining() < n {
            Err(malformed(self.kind, field))
        } else {
            Ok(())
        }
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, FrameError> {
        self.need(1, field)?;
        Ok(self.buf.get_u8())
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, FrameError> {
        self.need(2, field)?;
        Ok(self.buf.get_u16())
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, FrameError> {
        self.need(4, field)?;
        Ok(self.buf.get_u32())
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, FrameError> {
        self.need(8, field)?;
        Ok(self.buf.get_u64())
    }

    fn mac(&mut self, field: &'static str) -> Result<MacAddress, FrameError> {
        self.need(6, field)?;
        let mut m = [0u8; 6];
        self.buf.copy_to_slice(&mut m);
        Ok(MacAddress(m))
    }

    fn words(&mut self, count: usize, field: &'static str) -> Result<Vec<u64>, FrameError> {
        self.need(count * 8, field)?;
        Ok((0..count).map(|_| self.buf.get_u64()).collect())
    }
}

impl DiscoveryPayload {
    pub fn encode_into(&self, b: &mut BytesMut) {
        b.put_slice(&self.mac0.0);
        b.put_slice(&self.mac1.0);
        b.put_u16(self.vendor_id);
        b.put_u16(self.product_id);
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "discovery", buf };
        Ok(DiscoveryPayload {
            mac0: r.mac("mac0")?,
            mac1: r.mac("mac1")?,
            vendor_id: r.u16("vendor_id")?,
            product_id: r.u16("product_id")?,
        })
    }
}

impl PrChunk {
    pub fn encode_into(&self, b: &mut BytesMut) {
        debug_assert!(self.data.len() <= PR_CHUNK_BYTES);
        b.put_u64(self.offset);
        b.put_u64(self.total_len);
        b.put_u16(self.data.len() as u16);
        b.put_slice(&self.data);
    }

    /// Decodes from a shared buffer so `data` stays zero-copy.
    pub fn decode(buf: &Bytes) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "pr-chunk", buf };
        let offset = r.u64("offset")?;
        let total_len = r.u64("total_len")?;
        let len = r.u16("len")? as usize;
        if len > PR_CHUNK_BYTES {
            return Err(malformed("pr-chunk", "len"));
        }
        r.need(len, "data")?;
        let end = offset
            .checked_add(len as u64)
            .ok_or_else(|| malformed("pr-chunk", "offset"))?;
        if end > total_len {
            return Err(malformed("pr-chunk", "total_len"));
        }
        Ok(PrChunk {
            offset,
            total_len,
            data: buf.slice(18..18 + len),
        })
    }
}

impl PrAck {
    pub fn encode_into(&self, b: &mut BytesMut) {
        b.put_u8(self.status);
        b.put_slice(&self.digest);
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "pr-ack", buf };
        let status = r.u8("status")?;
        r.need(32, "digest")?;
        let mut digest = [0u8; 32];
        r.buf.copy_to_slice(&mut digest);
        Ok(PrAck { status, digest })
    }
}

impl MemWrite {
    pub fn encode_into(&self, b: &mut BytesMut) {
        debug_assert!(self.words.len() <= MAX_WORDS_PER_FRAME);
        b.put_u16(self.arg_index);
        b.put_u64(self.offset);
        b.put_u64(self.total_len);
        b.put_u16(self.words.len() as u16);
        for w in &self.words {
            b.put_u64(*w);
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "mem-write", buf };
        let arg_index = r.u16("arg_index")?;
        let offset = r.u64("offset")?;
        let total_len = r.u64("total_len")?;
        let count = r.u16("count")? as usize;
        if count > MAX_WORDS_PER_FRAME {
            return Err(malformed("mem-write", "count"));
        }
        if offset % 8 != 0 {
            return Err(malformed("mem-write", "offset"));
        }
        match offset.checked_add(8 * count as u64) {
            Some(end) if end <= total_len => {}
            _ => return Err(malformed("mem-write", "total_len")),
        }
        let words = r.words(count, "words")?;
        Ok(MemWrite {
            arg_index,
            offset,
            total_len,
            words,
        })
    }
}

impl MemAck {
    pub fn encode_into(&self, b: &mut BytesMut) {
        b.put_u16(self.arg_index);
        b.put_u8(self.status);
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "mem-ack", buf };
        Ok(MemAck {
            arg_index: r.u16("arg_index")?,
            status: r.u8("status")?,
        })
    }
}

impl KernelCmd {
    pub fn encode_into(&self, b: &mut BytesMut) {
        b.put_u64(self.address);
        b.put_u64(self.data);
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "kernel-cmd", buf };
        Ok(KernelCmd {
            address: r.u64("address")?,
            data: r.u64("data")?,
        })
    }
}

impl OutputChunk {
    pub fn encode_into(&self, b: &mut BytesMut) {
        debug_assert!(self.words.len() <= MAX_WORDS_PER_FRAME);
        b.put_u64(self.stream_offset);
        b.put_u64(self.total_len);
        b.put_u16(self.words.len() as u16);
        for w in &self.words {
            b.put_u64(*w);
        }
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "output", buf };
        let stream_offset = r.u64("stream_offset")?;
        let total_len = r.u64("total_len")?;
        let count = r.u16("count")? as usize;
        if count > MAX_WORDS_PER_FRAME {
            return Err(malformed("output", "count"));
        }
        if total_len == 0 {
            if stream_offset != 0 || count != 1 {
                return Err(malformed("output", "status"));
            }
        } else {
            if stream_offset % 8 != 0 {
                return Err(malformed("output", "stream_offset"));
            }
            match stream_offset.checked_add(8 * count as u64) {
                Some(end) if end <= total_len => {}
                _ => return Err(malformed("output", "total_len")),
            }
        }
        let words = r.words(count, "words")?;
        Ok(OutputChunk {
            stream_offset,
            total_len,
            words,
        })
    }
}

impl Probe {
    pub fn encode_into(&self, b: &mut BytesMut) {
        b.put_u32(self.sequence);
    }

    pub fn decode(buf: &[u8]) -> Result<Self, FrameError> {
        let mut r = Reader { kind: "probe", buf };
        Ok(Probe {
            sequence: r.u32("sequence")?,
        })
    }
}

impl Payload {
    pub fn ethertype(&self) -> SafEtherType {
        match self {
            Payload::Discovery(_) => SafEtherType::Discovery,
            Payload::PrChunk(_) => SafEtherType::PrData,
            Payload::PrAck(_) => SafEtherType::PrAck,
            Payload::MemWrite(_) => SafEtherType::MemWrite,
            Payload::MemAck(_) => SafEtherType::MemAck,
            Payload::KernelCmd(_) => SafEtherType::KernelCmd,
            Payload::Output(_) => SafEtherType::Output,
            Payload::Probe(_) => SafEtherType::HostProbe,
        }
    }

    /// Unpadded payload bytes.
    pub fn encode(&self) -> Bytes {
        let mut b = BytesMut::with_capacity(64);
        match self {
            Payload::Discovery(p) => p.encode_into(&mut b),
            Payload::PrChunk(p) => p.encode_into(&mut b),
            Payload::PrAck(p) => p.encode_into(&mut b),
            Payload::MemWrite(p) => p.encode_into(&mut b),
            Payload::MemAck(p) => p.encode_into(&mut b),
            Payload::KernelCmd(p) => p.encode_into(&mut b),
            Payload::Output(p) => p.encode_into(&mut b),
            Payload::Probe(p) => p.encode_into(&mut b),
        }
        b.freeze()
    }

    pub fn decode(ethertype: SafEtherType, buf: &Bytes) -> Result<Payload, FrameError> {
        Ok(match ethertype {
            SafEtherType::Discovery => Payload::Discovery(DiscoveryPayload::decode(buf)?),
            SafEtherType::PrData => Payload::PrChunk(PrChunk::decode(buf)?),
            SafEtherType::PrAck => Payload::PrAck(PrAck::decode(buf)?),
            SafEtherType::MemWrite => Payload::MemWrite(MemWrite::decode(buf)?),
            SafEtherType::MemAck => Payload::MemAck(MemAck::decode(buf)?),
            SafEtherType::KernelCmd => Payload::KernelCmd(KernelCmd::decode(buf)?),
            SafEtherType::Output => Payload::Output(OutputChunk::decode(buf)?),
            SafEtherType::HostProbe => Payload::Probe(Probe::decode(buf)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_cmd_zero_address_layout() {
        let b = Payload::KernelCmd(KernelCmd { address: 0, data: 1 }).encode();
        assert_eq!(b.len(), 16);
        assert!(b[..8].iter().all(|&x| x == 0));
        assert_eq!(&b[8..], &[0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn pr_chunk_full_size_round_trip() {
        let data: Vec<u8> = (0..1024).map(|i| (i * 7) as u8).collect();
        let p = Payload::PrChunk(PrChunk {
            offset: 0,
            total_len: 97_400_000,
            data: Bytes::from(data),
        });
        let enc = p.encode();
        assert_eq!(enc.len(), 18 + 1024);
        assert_eq!(Payload::decode(SafEtherType::PrData, &enc).unwrap(), p);
    }

    #[test]
    fn pr_chunk_rejects_overrun() {
        let p = PrChunk {
            offset: 10,
            total_len: 12,
            data: Bytes::from_static(&[1, 2, 3]),
        };
        let mut b = BytesMut::new();
        p.encode_into(&mut b);
        assert_eq!(
            PrChunk::decode(&b.freeze()),
            Err(FrameError::MalformedPayload {
                kind: "pr-chunk",
                field: "total_len"
            })
        );
    }

    #[test]
    fn mem_write_rejects_unaligned_offset() {
        let mut b = BytesMut::new();
        MemWrite {
            arg_index: 0,
            offset: 4,
            total_len: 64,
            words: vec![1],
        }
        .encode_into(&mut b);
        let err = MemWrite::decode(&b).unwrap_err();
        assert_eq!(
            err,
            FrameError::MalformedPayload {
                kind: "mem-write",
                field: "offset"
            }
        );
    }

    #[test]
    fn truncated_words_reported_by_field() {
        let mut b = BytesMut::new();
        MemWrite {
            arg_index: 0,
            offset: 0,
            total_len: 64,
            words: vec![1, 2],
        }
        .encode_into(&mut b);
        b.truncate(b.len() - 3);
        assert_eq!(
            MemWrite::decode(&b).unwrap_err(),
            FrameError::MalformedPayload {
                kind: "mem-write",
                field: "words"
            }
        );
    }

    #[test]
    fn pad_bytes_ignored_by_typed_decoders() {
        let mut b = BytesMut::new();
        MemAck { arg_index: 3, status: 0 }.encode_into(&mut b);
        b.put_bytes(0, 43);
        assert_eq!(
            MemAck::decode(&b).unwrap(),
            MemAck { arg_index: 3, status: 0 }
        );
    }

    #[test]
    fn status_frame_shape() {
        let s = OutputChunk::status_frame(7);
        assert!(s.is_status_frame());
        let enc = Payload::Output(s.clone()).encode();
        assert_eq!(
            Payload::decode(SafEtherType::Output, &enc).unwrap(),
            Payload::Output(s)
        );
    }

    #[test]
    fn word_frames_fit_mtu() {
        assert!(20 + 8 * MAX_WORDS_PER_FRAME <= super::super::MAX_PAYLOAD);
        assert!(18 + PR_CHUNK_BYTES <= super::super::MAX_PAYLOAD);
    }
}
