//! Twenty simulated agents on the two-switch testbed announce themselves
//! to the host, which builds its device registry.
//!
//!     cargo run --example discovery

use safnet::scenario::{Scenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut s = Scenario::build(&ScenarioConfig::with_agents(20))?;
    let found = s.discover()?;
    println!("{found} device(s) after {:.3} ms", s.host.now().as_secs_f64() * 1e3);
    for (mac, e) in s.host.registry().iter() {
        let port = s.agents.iter().find(|a| a.mac == *mac).map(|a| a.port);
        println!(
            "{mac}  mac1 {}  {:04x}:{:04x}  {:?}  seen {:.1} us  at {:?}",
            e.identity.mac1,
            e.identity.vendor_id,
            e.identity.product_id,
            e.state,
            e.last_seen.as_secs_f64() * 1e6,
            port.unwrap(),
        );
    }
    Ok(())
}
