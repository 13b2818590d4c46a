//! Distributed matrix transpose across 1..16 agents, strong and weak
//! scaling.
//!
//!     cargo run --release --example ptrans_scaling [N]

use safnet::host::ptrans::Scaling;
use safnet::scenario::{ptrans_sweep, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(256);
    let mut base = ScenarioConfig::with_agents(20);
    base.benchmark.bitstream_bytes = 4096;
    let ks = [1, 2, 4, 8, 16];
    for scaling in [Scaling::Strong, Scaling::Weak] {
        println!("{scaling:?} scaling, n = {n}");
        println!("   k  compute (ms)  total (ms)  speedup  efficiency  correct");
        for r in ptrans_sweep(&base, &ks, n, scaling)? {
            println!(
                "{:>4}  {:>12.3}  {:>10.3}  {:>7.2}  {:>10.2}  {}",
                r.k,
                r.compute_s * 1e3,
                r.total_s * 1e3,
                r.speedup,
                r.efficiency,
                r.correct
            );
        }
    }
    Ok(())
}
