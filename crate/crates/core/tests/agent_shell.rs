mod common;

use bytes::Bytes;
use common::HOST;
use proptest::prelude::*;
use safnet::agent::ddr::{pack, unpack};
use safnet::agent::{mem_status, AgentConfig, AgentError, AgentShell, DiscoveryState, PrEngine, PrState};
use safnet::fabric::Emission;
use safnet::frame::{
    Frame, KernelCmd, MacAddress, MemWrite, OutputChunk, Payload, PrChunk, Probe, SafEtherType, MAX_WORDS_PER_FRAME,
};
use safnet::host::ptrans::Matrix;
use safnet::scenario::random_bitstream;
use safnet::time::SimTime;
use sha2::{Digest, Sha256};

fn shell() -> AgentShell {
    let mut a = AgentShell::with_default_kernels(AgentConfig::numbered(3));
    a.on_link_up();
    a
}

fn wire(dst: MacAddress, p: &Payload) -> Bytes {
    Frame::new(dst, HOST, p).encode().unwrap()
}

fn feed(a: &mut AgentShell, p: &Payload) -> Vec<Emission> {
    a.on_frame(SimTime::ZERO, wire(a.mac(), p)).unwrap_or_else(|e| panic!("{e}"))
}

fn payloads(out: &[Emission], t: SafEtherType) -> Vec<Payload> {
    out.iter()
        .filter(|e| e.frame.ethertype == t)
        .map(|e| e.frame.decode_payload().unwrap())
        .collect()
}

fn chunks(data: &[u8], size: usize) -> Vec<PrChunk> {
    let total = data.len() as u64;
    data.chunks(size)
        .enumerate()
        .map(|(i, c)| PrChunk {
            offset: (i * size) as u64,
            total_len: total,
            data: Bytes::copy_from_slice(c),
        })
        .collect()
}

fn mem_writes(arg: u16, words: &[u64]) -> Vec<MemWrite> {
    let total = 8 * words.len() as u64;
    words
        .chunks(MAX_WORDS_PER_FRAME)
        .enumerate()
        .map(|(i, w)| MemWrite {
            arg_index: arg,
            offset: (8 * i * MAX_WORDS_PER_FRAME) as u64,
            total_len: total,
            words: w.to_vec(),
        })
        .collect()
}

#[test]
fn first_frame_of_any_kind_triggers_discovery() {
    let mut a = shell();
    assert_eq!(a.discovery_state(), DiscoveryState::AwaitFirstFrame);
    let mut foreign = HOST.octets().to_vec();
    foreign.extend_from_slice(&HOST.octets());
    foreign.extend_from_slice(&0x0800u16.to_be_bytes());
    foreign.resize(60, 0);
    let out = a.on_frame(SimTime::ZERO, Bytes::from(foreign)).unwrap();
    let d = payloads(&out, SafEtherType::Discovery);
    assert_eq!(d.len(), 1);
    assert_eq!(out[0].frame.dst, MacAddress::BROADCAST);
    match &d[0] {
        Payload::Discovery(p) => {
            assert_eq!(p.mac0, a.mac());
            assert_eq!(*p, *a.identity());
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(a.discovery_state(), DiscoveryState::DiscoverySent);
}

#[test]
fn each_reattach_is_a_new_epoch() {
    let mut a = shell();
    let probe = Payload::Probe(Probe { sequence: 1 });
    for epoch in 1..=4 {
        let n: usize = (0..10).map(|_| payloads(&feed(&mut a, &probe), SafEtherType::Discovery).len()).sum();
        assert_eq!(n, 1);
        assert_eq!(a.epoch(), epoch);
        a.on_link_down();
        a.on_link_up();
    }
}

#[test]
fn frames_route_to_their_fifo() {
    let mut a = shell();
    feed(&mut a, &Payload::Probe(Probe { sequence: 0 }));
    feed(&mut a, &Payload::PrChunk(chunks(&[1, 2, 3], 1024).remove(0)));
    feed(&mut a, &Payload::MemWrite(mem_writes(0, &[9]).remove(0)));
    feed(&mut a, &Payload::KernelCmd(KernelCmd { address: 0x100, data: 0 }));
    feed(&mut a, &Payload::Output(OutputChunk::status_frame(0)));
    let c = a.counters();
    assert_eq!((c.pr_fifo, c.mem_fifo, c.cmd_fifo, c.direct, c.ignored), (1, 1, 1, 1, 1));
    assert_eq!(c.frames_in, 5);
}

#[test]
fn fifo_overflow_drops_and_reports() {
    let mut a = shell();
    let cmd = wire(a.mac(), &Payload::KernelCmd(KernelCmd { address: 0x9999, data: 0 }));
    for _ in 0..a.config().fifo_depth {
        a.ingest(SimTime::ZERO, cmd.clone()).unwrap();
    }
    assert_eq!(a.ingest(SimTime::ZERO, cmd), Err(AgentError::FifoOverflow(SafEtherType::KernelCmd)));
    assert_eq!(a.counters().overflow, 1);
    assert_eq!(a.fifo_lens().1, a.config().fifo_depth);
    a.drain();
    assert_eq!(a.fifo_lens(), (0, 0, 0));
}

#[test]
fn pr_ack_goes_to_sender_with_digest() {
    let mut a = shell();
    let bits = random_bitstream(5000, 2);
    let mut cs = chunks(&bits, 1024);
    cs.reverse();
    let mut acks = Vec::new();
    for c in &cs {
        let out = feed(&mut a, &Payload::PrChunk(c.clone()));
        acks.extend(out.into_iter().filter(|e| e.frame.ethertype == SafEtherType::PrAck));
    }
    assert_eq!(acks.len(), 1);
    assert_eq!(acks[0].frame.dst, HOST);
    match acks[0].frame.decode_payload().unwrap() {
        Payload::PrAck(p) => assert_eq!(p.digest, <[u8; 32]>::from(Sha256::digest(&bits))),
        other => panic!("{other:?}"),
    }
    assert_eq!(a.pr_engine().state(), PrState::Done);
}

#[test]
fn ethernet_pr_blocked_during_pcie_session() {
    let mut a = shell();
    a.begin_pcie_programming().unwrap();
    let out = feed(&mut a, &Payload::PrChunk(chunks(&[7; 10], 1024).remove(0)));
    assert!(payloads(&out, SafEtherType::PrAck).is_empty());
    assert!(matches!(a.errors().last(), Some(AgentError::Pr(_))));
    a.finish_pcie_programming(b"image");
    let out = feed(&mut a, &Payload::PrChunk(chunks(&[7; 10], 1024).remove(0)));
    assert_eq!(payloads(&out, SafEtherType::PrAck).len(), 1);
}

#[test]
fn mem_ack_only_after_last_word() {
    let mut a = shell();
    let words: Vec<u64> = (0..1000).map(|i| i * 0x0101).collect();
    let mut ws = mem_writes(0, &words);
    ws.swap(0, 3);
    let mut acks = 0;
    for (i, w) in ws.iter().enumerate() {
        let n = payloads(&feed(&mut a, &Payload::MemWrite(w.clone())), SafEtherType::MemAck).len();
        assert_eq!(n, (i + 1 == ws.len()) as usize, "frame {i}");
        acks += n;
    }
    assert_eq!(acks, 1);
    assert_eq!(a.ddr().read_arg(0), words);
}

#[test]
fn bad_arg_index_nacks() {
    let mut a = shell();
    let out = feed(&mut a, &Payload::MemWrite(mem_writes(40, &[1]).remove(0)));
    match &payloads(&out, SafEtherType::MemAck)[..] {
        [Payload::MemAck(m)] => assert_eq!((m.arg_index, m.status), (40, mem_status::BAD_ARG_INDEX)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn transpose_kernel_streams_output() {
    let mut a = shell();
    let m = Matrix::random(16, 12, 4);
    for w in mem_writes(0, &m.to_words()) {
        feed(&mut a, &Payload::MemWrite(w));
    }
    let out = feed(
        &mut a,
        &Payload::KernelCmd(KernelCmd {
            address: 0,
            data: safnet::agent::PtransKernel::param(16, 12),
        }),
    );
    let mut words = Vec::new();
    for p in payloads(&out, SafEtherType::Output) {
        let Payload::Output(o) = p else { unreachable!() };
        assert_eq!(o.total_len, 8 * 16 * 12);
        assert_eq!(o.stream_offset, 8 * words.len() as u64);
        words.extend(o.words);
    }
    assert!(Matrix::from_words(12, 16, &words).bit_eq(&m.transpose()));
    // outputs leave after the modeled compute time
    assert!(out.iter().filter(|e| e.frame.ethertype == SafEtherType::Output).all(|e| !e.delay.is_zero()));
}

#[test]
fn unknown_control_address_is_logged() {
    let mut a = shell();
    feed(&mut a, &Payload::KernelCmd(KernelCmd { address: 0x5000, data: 0 }));
    assert!(matches!(a.errors().last(), Some(AgentError::UnknownControlAddress(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    /// Arbitrary delivery orders with duplicates: exactly one ack, on the
    /// frame that completes coverage, carrying the digest of the bitstream.
    #[test]
    fn pr_ack_iff_coverage(len in 1usize..6000, seed in any::<u64>(), order in prop::collection::vec(any::<prop::sample::Index>(), 0..40)) {
        let bits = random_bitstream(len, seed);
        let cs = chunks(&bits, 1024);
        let mut seq: Vec<usize> = order.iter().map(|i| i.index(cs.len())).collect();
        seq.extend(0..cs.len());
        let mut pr = PrEngine::new();
        let mut seen = vec![false; cs.len()];
        let mut acked = false;
        for i in seq {
            if acked { break; }
            seen[i] = true;
            let ack = pr.accept(&cs[i]).unwrap();
            prop_assert_eq!(ack.is_some(), seen.iter().all(|&s| s));
            if let Some(a) = ack {
                prop_assert_eq!(a.digest, <[u8; 32]>::from(Sha256::digest(&bits)));
                acked = true;
            }
        }
        prop_assert!(acked);
    }

    /// Discovery count per epoch is one for any mix of frame types.
    #[test]
    fn one_discovery_per_epoch(kinds in prop::collection::vec(0u8..4, 1..30), epochs in 1usize..4) {
        let mut a = AgentShell::with_default_kernels(AgentConfig::numbered(1));
        for _ in 0..epochs {
            a.on_link_up();
            let mut n = 0;
            for k in &kinds {
                let p = match k {
                    0 => Payload::Probe(Probe { sequence: 0 }),
                    1 => Payload::KernelCmd(KernelCmd { address: 0x7000, data: 0 }),
                    2 => Payload::Output(OutputChunk::status_frame(1)),
                    _ => Payload::MemWrite(mem_writes(0, &[1, 2]).remove(0)),
                };
                let out = a.on_frame(SimTime::ZERO, wire(MacAddress::BROADCAST, &p)).unwrap();
                n += payloads(&out, SafEtherType::Discovery).len();
            }
            prop_assert_eq!(n, 1);
            a.on_link_down();
        }
    }

    #[test]
    fn wide_word_packing_is_bijective(w in proptest::array::uniform8(any::<u64>())) {
        let p = pack(w);
        prop_assert_eq!(unpack(p), w);
        for j in 0..8 {
            prop_assert_eq!(p.lane(j), w[j]);
            prop_assert_eq!(&p.to_le_bytes()[8 * j..8 * j + 8], &w[j].to_le_bytes()[..]);
        }
    }
}
