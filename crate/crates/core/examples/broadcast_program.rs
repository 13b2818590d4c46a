//! Programs the same bitstream into 1 and into 20 agents with a single
//! broadcast stream. The time barely moves with the device count.
//!
//!     cargo run --release --example broadcast_program [BYTES]

use safnet::host::TargetSet;
use safnet::scenario::{random_bitstream, Scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let len: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8 << 20);
    let bits = random_bitstream(len, 3);
    for n in [1, 4, 20] {
        let mut s = Scenario::build(&ScenarioConfig::with_agents(n))?;
        s.discover()?;
        let r = s.host.program(&TargetSet::Broadcast, bits.clone())?;
        let digests_agree = r.acks.values().all(|a| a.digest == r.expected_digest);
        println!(
            "{n:>2} agent(s): {} acks, {} frames, {:.3} s, digests agree: {digests_agree}",
            r.acks.len(),
            r.frames_sent,
            r.elapsed().as_secs_f64(),
        );
    }
    Ok(())
}
