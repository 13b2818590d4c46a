//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 4 8`.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use bytes::Bytes;
use proptest::test_runner::{Config, TestRunner};
use safnet::agent::ddr::{pack, unpack, LANES};
use safnet::agent::pr::{MuxSource, PrEngine, PrError};
use safnet::agent::{AgentConfig, AgentShell};
use safnet::frame::{MacAddress, Payload, PrChunk, Probe, SafEtherType};
use safnet::host::ptrans::Scaling;
use safnet::host::{DeviceState, TargetSet};
use safnet::models::{
    case_study, cost_row, reconfig_speedup, reconfig_time, CostParams, EnergyParams, Flow, ReconfigParams,
    COST_TABLE_SIZES,
};
use safnet::scenario::{ptrans_sweep, random_bitstream, FaultSpec, Scenario, ScenarioConfig};
use safnet::time::SimTime;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol + 1e-9, || format!("{name}: got {got}, want {want} ±{tol}"))
}

fn fast(start: Instant, limit: Duration) -> Result<(), String> {
    let e = start.elapsed();
    ensure(e < limit, || format!("took {e:?}, limit {limit:?}"))
}

/// (n, noctua, essper, saf) in cents, and the savings column.
const COST_TABLE: [(u32, u64, u64, u64, f64); 7] = [
    (1, 184_998, 184_998, 184_998, 0.00),
    (2, 369_996, 259_997, 259_997, 0.00),
    (4, 739_992, 519_994, 409_995, 21.15),
    (8, 1_479_984, 1_039_988, 709_991, 31.73),
    (12, 2_219_976, 1_559_982, 1_009_987, 35.26),
    (16, 2_959_968, 2_079_976, 1_309_983, 37.02),
    (20, 3_699_960, 2_599_970, 1_609_979, 38.08),
];

fn setup_cost_table() -> Check {
    let t = Instant::now();
    let p = CostParams::default();
    ensure(COST_TABLE_SIZES.len() == COST_TABLE.len(), || "row count".into())?;
    for (n, noc, ess, saf, pct) in COST_TABLE {
        let r = cost_row(&p, n);
        ensure(
            (r.noctua.cost_cents, r.essper.cost_cents, r.saf.cost_cents) == (noc, ess, saf),
            || format!("n={n}: costs {r:?}"),
        )?;
        within(&format!("n={n} savings"), r.saf.pct_savings_vs_best_cluster, pct, 0.01)?;
    }
    fast(t, Duration::from_secs(1))?;
    Ok("7 rows exact; n=20 SAF 16099.79 USD, 38.08% savings".into())
}

/// (pct, cluster h, cluster kJ, SAF h, SAF kJ, % time, % energy)
const CASE_TABLE: [(f64, f64, f64, f64, f64, f64, f64); 11] = [
    (0.0, 5.0, 9.79, 5.0, 9.79, 0.00, 0.00),
    (10.0, 6.0, 10.77, 5.5, 9.83, 8.33, 8.74),
    (20.0, 7.0, 11.75, 6.0, 9.86, 14.29, 16.05),
    (30.0, 8.0, 12.73, 6.5, 9.90, 18.75, 22.23),
    (40.0, 9.0, 13.71, 7.0, 9.94, 22.22, 27.53),
    (50.0, 10.0, 9.79, 7.5, 9.97, 25.00, -1.82),
    (60.0, 10.0, 9.79, 8.0, 10.01, 20.00, -2.23),
    (70.0, 10.0, 9.79, 8.5, 10.04, 15.00, -2.53),
    (80.0, 10.0, 9.79, 9.0, 10.08, 10.00, -2.94),
    (90.0, 10.0, 9.792, 9.5, 10.12, 5.00, -3.35),
    (100.0, 10.0, 9.792, 10.0, 9.79, 0.00, 0.00),
];

fn case_study_table() -> Check {
    let t = Instant::now();
    let p = EnergyParams::default();
    let mut worst: f64 = 0.0;
    for (pct, ct, ce, st, se, rt, re) in CASE_TABLE {
        let c = case_study(&p, pct);
        ensure(c.cluster_time_h == ct && c.saf_time_h == st, || {
            format!("pct={pct}: times {} / {}", c.cluster_time_h, c.saf_time_h)
        })?;
        within(&format!("pct={pct} cluster kJ"), c.cluster_energy_kj, ce, 0.01)?;
        within(&format!("pct={pct} SAF kJ"), c.saf_energy_kj, se, 0.01)?;
        within(&format!("pct={pct} time %"), (c.pct_time_reduction * 100.0).round() / 100.0, rt, 0.0)?;
        within(&format!("pct={pct} energy %"), c.pct_energy_reduction, re, 0.05)?;
        worst = worst.max((c.pct_energy_reduction - re).abs());
    }
    fast(t, Duration::from_secs(1))?;
    Ok(format!("11 rows; worst energy-reduction gap {worst:.3} pp"))
}

fn reconfig_points() -> Check {
    let t = Instant::now();
    let p = ReconfigParams::default();
    let points = [
        (Flow::Pcie, 1, 12.3),
        (Flow::PcieDt, 1, 12.3),
        (Flow::Eth, 1, 17.76),
        (Flow::Eth, 20, 17.76),
        (Flow::Pcie, 2, 24.60),
        (Flow::PcieDt, 2, 24.60),
        (Flow::Pcie, 20, 40.27),
        (Flow::PcieDt, 20, 246.0),
    ];
    for (flow, n, want) in points {
        let got = reconfig_time(&p, flow, n);
        ensure(got == want, || format!("{flow:?} n={n}: {got} != {want}"))?;
    }
    let s = reconfig_speedup(&p, Flow::PcieDt, 20);
    ensure((s * 100.0).round() / 100.0 == 13.85, || format!("max speedup {s}"))?;
    fast(t, Duration::from_secs(1))?;
    Ok(format!("8 points exact; PCIe-DT/ETH at 20 = {s:.2}x"))
}

fn program_run(agents: usize, bits: &[u8]) -> Result<(f64, usize), String> {
    let mut s = Scenario::build(&ScenarioConfig::with_agents(agents)).map_err(|e| e.to_string())?;
    let found = s.discover().map_err(|e| e.to_string())?;
    ensure(found == agents, || format!("discovered {found}/{agents}"))?;
    let want: [u8; 32] = Sha256::digest(bits).into();
    let r = s
        .host
        .program(&TargetSet::Broadcast, Bytes::copy_from_slice(bits))
        .map_err(|e| e.to_string())?;
    ensure(r.failures.is_empty(), || format!("failures {:?}", r.failures))?;
    ensure(r.acks.len() == agents, || format!("{} acks", r.acks.len()))?;
    for m in s.agent_macs() {
        let img = s.agent(m).and_then(|a| a.pr_engine().image().copied());
        ensure(
            r.acks[&m].digest == want && img.map(|i| i.digest) == Some(want),
            || format!("digest mismatch on {m}"),
        )?;
    }
    Ok((r.elapsed().as_secs_f64(), r.acks.len()))
}

fn broadcast_programming() -> Check {
    let t = Instant::now();
    let desk = random_bitstream(1_000_000, 11);
    program_run(20, &desk)?;
    let bits = random_bitstream(97_400_000, 7);
    let (t1, _) = program_run(1, &bits)?;
    let (t20, n) = program_run(20, &bits)?;
    ensure((t1 - t20).abs() / t1 <= 0.01, || format!("1 agent {t1:.3} s vs 20 agents {t20:.3} s"))?;
    for t in [t1, t20] {
        ensure((t - 17.76).abs() / 17.76 <= 0.05, || format!("{t:.3} s is not within 5% of 17.76 s"))?;
    }
    fast(t, Duration::from_secs(60))?;
    Ok(format!(
        "97.4 MB: {t1:.3} s to 1, {t20:.3} s to {n}, digests equal; 1 MB desk run ok; wall {:.1} s",
        t.elapsed().as_secs_f64()
    ))
}

const ROUNDTRIP_CASES: u32 = 10_000;

fn protocol_conformance() -> Check {
    for (name, frame, want) in common::golden() {
        let wire = frame.encode().map_err(|e| format!("{name}: {e}"))?;
        ensure(wire.as_ref() == want.as_slice(), || format!("{name}: golden bytes differ"))?;
        let back = safnet::frame::decode_frame(wire).map_err(|e| format!("{name}: {e}"))?;
        ensure(back.encode().unwrap().as_ref() == want.as_slice(), || format!("{name}: re-encode"))?;
    }
    let types: BTreeSet<u16> = common::golden().iter().map(|(_, f, _)| f.ethertype.value()).collect();
    ensure(types.len() == 8, || "golden set must cover 8 ethertypes".into())?;
    for (name, strat) in common::codecs() {
        let mut runner = TestRunner::new(Config {
            cases: ROUNDTRIP_CASES,
            failure_persistence: None,
            ..Config::default()
        });
        runner
            .run(&(common::arb_mac(), common::arb_mac(), strat), |(d, s, p)| {
                common::roundtrip(d, s, &p).map_err(proptest::test_runner::TestCaseError::fail)
            })
            .map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(format!("8 golden frames; {ROUNDTRIP_CASES} round trips per codec x 8 codecs, 0 failures"))
}

fn probe_frame() -> Bytes {
    safnet::frame::Frame::new(MacAddress::BROADCAST, common::HOST, &Payload::Probe(Probe { sequence: 1 }))
        .encode()
        .unwrap()
}

fn discovery_count(out: &[safnet::fabric::Emission]) -> usize {
    out.iter().filter(|e| e.frame.ethertype == SafEtherType::Discovery).count()
}

fn chunked(data: &[u8], size: usize) -> Vec<PrChunk> {
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

fn shell_state_machine() -> Check {
    // One discovery per attach epoch, whatever the traffic.
    let mut a = AgentShell::with_default_kernels(AgentConfig::numbered(0));
    let mut epochs = 0;
    for frames in 0..6usize {
        a.on_link_up();
        epochs += 1;
        let mut seen = 0;
        for i in 0..frames.max(1) * 3 {
            seen += discovery_count(&a.on_frame(SimTime::from_nanos(i as u64), probe_frame()).unwrap());
        }
        ensure(seen == 1 && a.discoveries_this_epoch() == 1, || format!("epoch {epochs}: {seen} discoveries"))?;
        a.on_link_down();
    }

    // Ack iff coverage: every chunk sequence of length <= 7 over 4 chunks,
    // against a set-based model that restarts after each completion.
    let data = random_bitstream(100, 5);
    let digest: [u8; 32] = Sha256::digest(&data).into();
    let chunks = chunked(&data, 25);
    let mut sequences = 0u64;
    for len in 1..=7u32 {
        for code in 0..4u32.pow(len) {
            let mut pr = PrEngine::new();
            let mut covered = [false; 4];
            let mut c = code;
            for _ in 0..len {
                let i = (c % 4) as usize;
                c /= 4;
                covered[i] = true;
                let ack = pr.accept(&chunks[i]).map_err(|e| e.to_string())?;
                let full = covered.iter().all(|&x| x);
                ensure(ack.is_some() == full, || format!("sequence {code}/{len}: ack {ack:?}, covered {covered:?}"))?;
                if let Some(a) = ack {
                    ensure(a.digest == digest && a.status == 0, || "digest".into())?;
                    covered = [false; 4];
                }
            }
            sequences += 1;
        }
    }

    // The mux holds out Ethernet chunks while the PCIe side is programming.
    let mut pr = PrEngine::new();
    pr.begin_pcie().unwrap();
    for c in &chunks {
        ensure(pr.accept(c) == Err(PrError::SourceBusy(MuxSource::Pcie)), || "mux admitted Ethernet".into())?;
    }
    pr.finish_pcie(b"pcie");
    ensure(pr.image().map(|i| i.source) == Some(MuxSource::Pcie), || "pcie image".into())?;
    let mut got = None;
    for c in &chunks {
        got = pr.accept(c).map_err(|e| e.to_string())?;
    }
    ensure(got.map(|a| a.digest) == Some(digest), || "Ethernet after PCIe release".into())?;
    let mut pr = PrEngine::new();
    pr.accept(&chunks[0]).unwrap();
    ensure(pr.begin_pcie() == Err(PrError::SourceBusy(MuxSource::Ethernet)), || {
        "PCIe claimed mux mid-session".into()
    })?;

    // 8 x 64 -> 512 packing is a bijection.
    let mut runner = TestRunner::new(Config {
        cases: ROUNDTRIP_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&proptest::array::uniform8(proptest::num::u64::ANY), |w: [u64; LANES]| {
            let p = pack(w);
            proptest::prop_assert_eq!(unpack(p), w);
            proptest::prop_assert_eq!(pack(unpack(p)), p);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "6 epochs x 1 discovery; {sequences} chunk orders match the coverage model; mux exclusion both ways; {ROUNDTRIP_CASES} pack round trips"
    ))
}

fn hot_plug() -> Check {
    let bits = random_bitstream(1 << 20, 21);
    let want: [u8; 32] = Sha256::digest(&bits).into();

    let control_cfg = ScenarioConfig::with_agents(20);
    let mut control = Scenario::build(&control_cfg).map_err(|e| e.to_string())?;
    control.discover().map_err(|e| e.to_string())?;
    let rc = control.host.program(&TargetSet::Broadcast, bits.clone()).map_err(|e| e.to_string())?;

    let mut cfg = ScenarioConfig::with_agents(21);
    let attach_s = 0.1;
    cfg.faults.push(FaultSpec::Attach { agent: 20, at_s: attach_s, port: None });
    let mut s = Scenario::build(&cfg).map_err(|e| e.to_string())?;
    ensure(s.discover().map_err(|e| e.to_string())? == 20, || "21st agent visible too early".into())?;
    let r = s.host.program(&TargetSet::Broadcast, bits.clone()).map_err(|e| e.to_string())?;
    let start = r.started.as_secs_f64();
    ensure(start < attach_s && r.elapsed().as_secs_f64() + start > attach_s, || {
        format!("attach at {attach_s} s is not inside the transfer {start:.3}..")
    })?;
    ensure(rc.all_ok() && r.all_ok() && r.acks.len() == 20, || "transfer failed".into())?;
    for (m, a) in &rc.acks {
        ensure(r.acks.get(m).map(|b| b.digest) == Some(a.digest) && a.digest == want, || {
            format!("digest on {m} differs from control")
        })?;
    }
    let new = s.agents[20].mac;
    let probe_period = s.host.config().probe_period_s;
    s.host.idle(Duration::from_secs_f64(probe_period)).map_err(|e| e.to_string())?;
    let entry = s.host.registry().get(&new).ok_or("21st agent never discovered")?;
    let seen = entry.last_seen.as_secs_f64();
    ensure(entry.state == DeviceState::Discovered, || format!("state {:?}", entry.state))?;
    ensure(seen - attach_s <= probe_period, || format!("discovered {seen:.3} s after attach at {attach_s}"))?;
    ensure(s.host.registry().in_state(DeviceState::Programmed).len() == 20, || "others disturbed".into())?;
    Ok(format!(
        "20 digests identical to control; new agent Discovered {:.1} ms after attach",
        (seen - attach_s) * 1e3
    ))
}

fn ptrans_scaling() -> Check {
    let t = Instant::now();
    let base = ScenarioConfig::with_agents(8);
    let ks = [1, 2, 4, 8];
    let rows = ptrans_sweep(&base, &ks, 512, Scaling::Strong).map_err(|e| e.to_string())?;
    let reference = rows[0].run.as_ref().unwrap().result.clone();
    let mut prev = 0.0;
    let mut col = Vec::new();
    for r in &rows {
        let run = r.run.as_ref().unwrap();
        ensure(r.correct && run.result.bit_eq(&reference), || format!("k={} result differs", r.k))?;
        ensure(r.speedup >= prev, || format!("speedup drops at k={}: {:.3} < {prev:.3}", r.k, r.speedup))?;
        ensure(r.speedup >= 0.9 * r.k as f64, || format!("k={} speedup {:.3} < {:.2}", r.k, r.speedup, 0.9 * r.k as f64))?;
        prev = r.speedup;
        col.push(format!("{}:{:.2}", r.k, r.speedup));
    }
    let weak = ptrans_sweep(&base, &ks, 256, Scaling::Weak).map_err(|e| e.to_string())?;
    let per: Vec<f64> = weak.iter().map(|r| r.per_device_s).collect();
    let (lo, hi) = per.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    ensure(weak.iter().all(|r| r.correct), || "weak run incorrect".into())?;
    ensure((hi - lo) / lo < 0.10, || format!("weak per-device spread {:.1}%", (hi - lo) / lo * 100.0))?;
    fast(t, Duration::from_secs(120))?;
    Ok(format!(
        "bit-exact at k=1,2,4,8; strong speedup {}; weak per-device spread {:.2}%; wall {:.1} s",
        col.join(" "),
        (hi - lo) / lo * 100.0,
        t.elapsed().as_secs_f64()
    ))
}

fn lossy_link() -> Check {
    let bits = random_bitstream(1 << 20, 31);
    let run = || -> Result<(Vec<MacAddress>, Vec<MacAddress>, u32, MacAddress), String> {
        let mut cfg = ScenarioConfig::with_agents(20);
        cfg.seed = 99;
        cfg.faults.push(FaultSpec::Loss { agent: 7, rate: 0.01 });
        let mut s = Scenario::build(&cfg).map_err(|e| e.to_string())?;
        s.discover().map_err(|e| e.to_string())?;
        let lossy = s.agents[7].mac;
        let r = s.host.program(&TargetSet::Broadcast, bits.clone()).map_err(|e| e.to_string())?;
        let reg = s.host.registry();
        ensure(reg.len() == 20, || format!("registry holds {} entries", reg.len()))?;
        for (m, e) in reg.iter() {
            let ok = match e.state {
                DeviceState::Programmed => r.acks.contains_key(m) && e.pr_digest == Some(r.expected_digest),
                DeviceState::Unreachable => r.failures.contains_key(m),
                _ => false,
            };
            ensure(ok, || format!("{m} left in {:?}", e.state))?;
        }
        let failed: Vec<MacAddress> = r.failures.keys().copied().collect();
        let acked: Vec<MacAddress> = r.acks.keys().copied().collect();
        Ok((acked, failed, r.retries, lossy))
    };
    let (acked, failed, retries, lossy) = run()?;
    let again = run()?;
    ensure(again == (acked.clone(), failed.clone(), retries, lossy), || "outcome not deterministic".into())?;
    ensure(failed.is_empty() || failed == vec![lossy], || format!("unexpected failures {failed:?}"))?;
    ensure(acked.len() + failed.len() == 20, || "device count".into())?;
    Ok(if failed.is_empty() {
        format!("all 20 programmed after {retries} retry round(s); registry consistent; deterministic")
    } else {
        format!("only the lossy device reported Unreachable after {retries} retries; deterministic")
    })
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 9] = [
        (1, "setup-cost table", setup_cost_table),
        (2, "case-study table", case_study_table),
        (3, "reconfiguration model", reconfig_points),
        (4, "broadcast programming", broadcast_programming),
        (5, "protocol conformance", protocol_conformance),
        (6, "shell state machine", shell_state_machine),
        (7, "hot-plug isolation", hot_plug),
        (8, "transpose scaling", ptrans_scaling),
        (9, "lossy link", lossy_link),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS: {name}: {detail} [{secs:.2} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} FAIL: {name}: {why} [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
