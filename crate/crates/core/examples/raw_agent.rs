//! Runs the agent shell on a real interface so a host on the same segment
//! can discover and program it. Needs CAP_NET_RAW.
//!
//!     sudo cargo run --example raw_agent -- lo 30
//!
//! On `lo`, pair it with `safnet discover` using a scenario whose
//! `transport = "raw"` and `interface = "lo"`.

use std::time::Duration;

use safnet::agent::{AgentConfig, AgentShell};
use safnet::fabric::raw::RawLink;
use safnet::transport::serve_agent;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iface = args.next().unwrap_or_else(|| "lo".into());
    let secs: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);

    let config = AgentConfig::numbered(0);
    let link = RawLink::open(&iface, Some(config.identity.mac0))?;
    let mut agent = AgentShell::with_default_kernels(config);
    println!("agent {} serving on {iface} for {secs} s", agent.mac());
    let sent = serve_agent(&link, &mut agent, Duration::from_secs(secs))?;
    println!("sent {sent} frame(s); counters {:?}", agent.counters());
    if let Some(img) = agent.pr_engine().image() {
        println!("programmed {} bytes, digest {}", img.len, safnet::report::hex(&img.digest));
    }
    Ok(())
}
