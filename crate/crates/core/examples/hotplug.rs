//! Plugs a 21st agent into the fabric while a broadcast transfer to the
//! other twenty is running. The transfer is unaffected and the newcomer is
//! registered on its first frame.
//!
//!     cargo run --release --example hotplug

use std::time::Duration;

use safnet::host::TargetSet;
use safnet::scenario::{random_bitstream, FaultSpec, Scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::with_agents(21);
    cfg.faults.push(FaultSpec::Attach { agent: 20, at_s: 0.1, port: None });
    let mut s = Scenario::build(&cfg)?;
    println!("discovered before the transfer: {}", s.discover()?);

    let r = s.host.program(&TargetSet::Broadcast, random_bitstream(1 << 20, 21))?;
    println!(
        "transfer {:.3}..{:.3} s: {} acks, {} failures",
        r.started.as_secs_f64(),
        r.finished.as_secs_f64(),
        r.acks.len(),
        r.failures.len()
    );

    s.host.idle(Duration::from_secs(1))?;
    let new = s.agents[20].mac;
    let e = s.host.registry().get(&new).expect("registered");
    println!("{new} registered as {:?}, first seen at {:.4} s", e.state, e.last_seen.as_secs_f64());
    let stats = s.host.transport().fabric().stats();
    println!("fabric: {stats:?}, conserved: {}", stats.is_conserved());
    Ok(())
}
