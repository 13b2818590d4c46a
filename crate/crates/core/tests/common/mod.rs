//! Shared fixtures: golden frames, an independent byte-level encoder and
//! payload generators.
#![allow(dead_code)]

use bytes::Bytes;
use proptest::collection::vec;
use proptest::prelude::*;
use safnet::frame::{
    DiscoveryPayload, Frame, KernelCmd, MacAddress, MemAck, MemWrite, OutputChunk, Payload, PrAck, PrChunk,
    Probe, MAX_WORDS_PER_FRAME, PR_CHUNK_BYTES,
};

pub const HOST: MacAddress = MacAddress::new([0x02, 0x5a, 0x46, 0x00, 0x00, 0x01]);
pub const DEV: MacAddress = MacAddress::new([0x02, 0x5a, 0x46, 0x00, 0x01, 0x00]);
pub const DEV1: MacAddress = MacAddress::new([0x02, 0x5a, 0x46, 0x00, 0x81, 0x00]);

pub fn unhex(s: &str) -> Vec<u8> {
    let s: String = s.split_whitespace().collect();
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

/// One frame of each type with its expected wire image (no FCS), written
/// out by hand from the layout table.
pub fn golden() -> Vec<(&'static str, Frame, Vec<u8>)> {
    let pad = |mut v: Vec<u8>| {
        v.resize(v.len().max(60), 0);
        v
    };
    vec![
        (
            "discovery",
            Frame::new(
                MacAddress::BROADCAST,
                DEV,
                &Payload::Discovery(DiscoveryPayload {
                    mac0: DEV,
                    mac1: DEV1,
                    vendor_id: 0x1172,
                    product_id: 0x385a,
                }),
            ),
            pad(unhex("ffffffffffff 025a46000100 80ef 025a46000100 025a46008100 1172 385a")),
        ),
        (
            "pr-chunk",
            Frame::new(
                MacAddress::BROADCAST,
                HOST,
                &Payload::PrChunk(PrChunk {
                    offset: 0x400,
                    total_len: 0x1000,
                    data: Bytes::from_static(&[0xde, 0xad, 0xbe, 0xef]),
                }),
            ),
            pad(unhex(
                "ffffffffffff 025a46000001 80aa 0000000000000400 0000000000001000 0004 deadbeef",
            )),
        ),
        (
            "pr-ack",
            Frame::new(
                HOST,
                DEV,
                &Payload::PrAck(PrAck {
                    status: 0,
                    digest: unhex("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
                        .try_into()
                        .unwrap(),
                }),
            ),
            pad(unhex(
                "025a46000001 025a46000100 80ab 00 \
                 ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
            )),
        ),
        (
            "mem-write",
            Frame::new(
                DEV,
                HOST,
                &Payload::MemWrite(MemWrite {
                    arg_index: 1,
                    offset: 8,
                    total_len: 24,
                    words: vec![0x0102030405060708, 0x1112131415161718],
                }),
            ),
            pad(unhex(
                "025a46000100 025a46000001 80dd 0001 0000000000000008 0000000000000018 0002 \
                 0102030405060708 1112131415161718",
            )),
        ),
        (
            "mem-ack",
            Frame::new(HOST, DEV, &Payload::MemAck(MemAck { arg_index: 1, status: 0 })),
            pad(unhex("025a46000001 025a46000100 80db 0001 00")),
        ),
        (
            "kernel-cmd",
            Frame::new(
                MacAddress::BROADCAST,
                HOST,
                &Payload::KernelCmd(KernelCmd {
                    address: 0x100,
                    data: 0x0000_0200_0000_0000,
                }),
            ),
            pad(unhex("ffffffffffff 025a46000001 80cc 0000000000000100 0000020000000000")),
        ),
        (
            "output",
            Frame::new(
                HOST,
                DEV,
                &Payload::Output(OutputChunk {
                    stream_offset: 0x5a0,
                    total_len: 0x5b0,
                    words: vec![0xcafef00d],
                }),
            ),
            pad(unhex(
                "025a46000001 025a46000100 80cb 00000000000005a0 00000000000005b0 0001 00000000cafef00d",
            )),
        ),
        (
            "probe",
            Frame::new(MacAddress::BROADCAST, HOST, &Payload::Probe(Probe { sequence: 7 })),
            pad(unhex("ffffffffffff 025a46000001 80ee 00000007")),
        ),
    ]
}

/// Independent encoder built from the layout table with plain byte pushes.
pub fn oracle_encode(dst: MacAddress, src: MacAddress, p: &Payload) -> Vec<u8> {
    let mut v = Vec::new();
    v.extend_from_slice(&dst.octets());
    v.extend_from_slice(&src.octets());
    let (et, body): (u16, Vec<u8>) = match p {
        Payload::Discovery(d) => {
            let mut b = d.mac0.octets().to_vec();
            b.extend_from_slice(&d.mac1.octets());
            b.extend_from_slice(&d.vendor_id.to_be_bytes());
            b.extend_from_slice(&d.product_id.to_be_bytes());
            (0x80EF, b)
        }
        Payload::PrChunk(c) => {
            let mut b = c.offset.to_be_bytes().to_vec();
            b.extend_from_slice(&c.total_len.to_be_bytes());
            b.extend_from_slice(&(c.data.len() as u16).to_be_bytes());
            b.extend_from_slice(&c.data);
            (0x80AA, b)
        }
        Payload::PrAck(a) => {
            let mut b = vec![a.status];
            b.extend_from_slice(&a.digest);
            (0x80AB, b)
        }
        Payload::MemWrite(m) => {
            let mut b = m.arg_index.to_be_bytes().to_vec();
            b.extend_from_slice(&m.offset.to_be_bytes());
            b.extend_from_slice(&m.total_len.to_be_bytes());
            b.extend_from_slice(&(m.words.len() as u16).to_be_bytes());
            for w in &m.words {
                b.extend_from_slice(&w.to_be_bytes());
            }
            (0x80DD, b)
        }
        Payload::MemAck(a) => {
            let mut b = a.arg_index.to_be_bytes().to_vec();
            b.push(a.status);
            (0x80DB, b)
        }
        Payload::KernelCmd(k) => {
            let mut b = k.address.to_be_bytes().to_vec();
            b.extend_from_slice(&k.data.to_be_bytes());
            (0x80CC, b)
        }
        Payload::Output(o) => {
            let mut b = o.stream_offset.to_be_bytes().to_vec();
            b.extend_from_slice(&o.total_len.to_be_bytes());
            b.extend_from_slice(&(o.words.len() as u16).to_be_bytes());
            for w in &o.words {
                b.extend_from_slice(&w.to_be_bytes());
            }
            (0x80CB, b)
        }
        Payload::Probe(p) => (0x80EE, p.sequence.to_be_bytes().to_vec()),
    };
    v.extend_from_slice(&et.to_be_bytes());
    v.extend_from_slice(&body);
    if v.len() < 60 {
        v.resize(60, 0);
    }
    v
}

pub fn arb_mac() -> impl Strategy<Value = MacAddress> {
    any::<[u8; 6]>().prop_map(MacAddress::new)
}

pub fn arb_discovery() -> impl Strategy<Value = Payload> {
    (arb_mac(), arb_mac(), any::<u16>(), any::<u16>()).prop_map(|(mac0, mac1, vendor_id, product_id)| {
        Payload::Discovery(DiscoveryPayload {
            mac0,
            mac1,
            vendor_id,
            product_id,
        })
    })
}

pub fn arb_pr_chunk() -> impl Strategy<Value = Payload> {
    (vec(any::<u8>(), 0..=PR_CHUNK_BYTES), any::<u64>(), any::<u64>()).prop_map(|(data, a, b)| {
        let len = data.len() as u64;
        let offset = a % (u64::MAX - len);
        let total_len = offset + len + b % (u64::MAX - offset - len).max(1);
        Payload::PrChunk(PrChunk {
            offset,
            total_len,
            data: data.into(),
        })
    })
}

pub fn arb_pr_ack() -> impl Strategy<Value = Payload> {
    (any::<u8>(), any::<[u8; 32]>()).prop_map(|(status, digest)| Payload::PrAck(PrAck { status, digest }))
}

fn word_run() -> impl Strategy<Value = (u64, u64, Vec<u64>)> {
    (vec(any::<u64>(), 0..=MAX_WORDS_PER_FRAME), 0u64..(1 << 40), 0u64..(1 << 40)).prop_map(
        |(words, off, slack)| {
            let offset = off * 8;
            let total = offset + 8 * words.len() as u64 + slack;
            (offset, total, words)
        },
    )
}

pub fn arb_mem_write() -> impl Strategy<Value = Payload> {
    (any::<u16>(), word_run()).prop_map(|(arg_index, (offset, total_len, words))| {
        Payload::MemWrite(MemWrite {
            arg_index,
            offset,
            total_len,
            words,
        })
    })
}

pub fn arb_mem_ack() -> impl Strategy<Value = Payload> {
    (any::<u16>(), any::<u8>()).prop_map(|(arg_index, status)| Payload::MemAck(MemAck { arg_index, status }))
}

pub fn arb_kernel_cmd() -> impl Strategy<Value = Payload> {
    (any::<u64>(), any::<u64>()).prop_map(|(address, data)| Payload::KernelCmd(KernelCmd { address, data }))
}

pub fn arb_output() -> impl Strategy<Value = Payload> {
    prop_oneof![
        word_run().prop_filter("data frames have a length", |(_, t, _)| *t > 0).prop_map(
            |(stream_offset, total_len, words)| Payload::Output(OutputChunk {
                stream_offset,
                total_len,
                words,
            })
        ),
        any::<u64>().prop_map(|s| Payload::Output(OutputChunk::status_frame(s))),
    ]
}

pub fn arb_probe() -> impl Strategy<Value = Payload> {
    any::<u32>().prop_map(|sequence| Payload::Probe(Probe { sequence }))
}

/// Every codec by name.
pub fn codecs() -> Vec<(&'static str, BoxedStrategy<Payload>)> {
    vec![
        ("discovery", arb_discovery().boxed()),
        ("pr-chunk", arb_pr_chunk().boxed()),
        ("pr-ack", arb_pr_ack().boxed()),
        ("mem-write", arb_mem_write().boxed()),
        ("mem-ack", arb_mem_ack().boxed()),
        ("kernel-cmd", arb_kernel_cmd().boxed()),
        ("output", arb_output().boxed()),
        ("probe", arb_probe().boxed()),
    ]
}

/// Encode, compare with the oracle, decode, compare with the input.
pub fn roundtrip(dst: MacAddress, src: MacAddress, p: &Payload) -> Result<(), String> {
    let f = Frame::new(dst, src, p);
    let wire = safnet::frame::encode_frame(&f).map_err(|e| e.to_string())?;
    let want = oracle_encode(dst, src, p);
    if wire.as_ref() != want.as_slice() {
        return Err(format!("wire image differs from oracle for {p:?}"));
    }
    let back = safnet::frame::decode_frame(wire).map_err(|e| e.to_string())?;
    if back.dst != dst || back.src != src || back.ethertype != p.ethertype() {
        return Err("header mismatch".into());
    }
    let q = back.decode_payload().map_err(|e| e.to_string())?;
    if &q != p {
        return Err(format!("decoded {q:?} != {p:?}"));
    }
    Ok(())
}
