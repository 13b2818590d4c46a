//! Loss on one agent's link and an agent unplugged mid-transfer. The host
//! retries the lossy device by unicast and reports the unplugged one as
//! failed; the other agents are untouched.
//!
//!     cargo run --release --example fault_injection

use safnet::host::TargetSet;
use safnet::scenario::{random_bitstream, FaultSpec, Scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::with_agents(20);
    cfg.seed = 99;
    cfg.faults.push(FaultSpec::Loss { agent: 7, rate: 0.01 });
    cfg.faults.push(FaultSpec::Detach { agent: 12, at_s: 0.05 });
    let mut s = Scenario::build(&cfg)?;
    s.discover()?;
    let r = s.host.program(&TargetSet::Broadcast, random_bitstream(256 * 1024, 5))?;
    println!("{} programmed, {} retries, {:.3} s", r.acks.len(), r.retries, r.elapsed().as_secs_f64());
    for (mac, a) in &r.acks {
        if a.attempt > 0 {
            println!("  {mac} acked on attempt {}", a.attempt);
        }
    }
    for (mac, f) in &r.failures {
        println!("  {mac} failed: {f:?}, now {:?}", s.host.registry().state(mac).unwrap());
    }
    let stats = s.host.transport().fabric().stats();
    println!("fabric: lost {}, unroutable {}, conserved {}", stats.lost, stats.unroutable, stats.is_conserved());
    Ok(())
}
