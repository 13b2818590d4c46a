//! Closed-form models: reconfiguration time per flow, setup cost per
//! architecture and the energy case study.
//!
//!     cargo run --example model_tables

use safnet::fabric::LinkParams;
use safnet::models::*;

fn main() {
    let rp = ReconfigParams::default();
    println!("reconfiguration time (s)");
    println!("   n     ETH    PCIe  PCIe-DT");
    for n in [1, 2, 4, 8, 16, 20] {
        println!(
            "{n:>4}  {:>6.2}  {:>6.2}  {:>7.2}",
            reconfig_time(&rp, Flow::Eth, n),
            reconfig_time(&rp, Flow::Pcie, n),
            reconfig_time(&rp, Flow::PcieDt, n)
        );
    }
    println!("speedup over PCIe-DT at 20 cards: {:.2}x", reconfig_speedup(&rp, Flow::PcieDt, 20));

    let cp = CostParams::default();
    println!("\nsetup cost (USD)");
    for n in [1, 4, 20] {
        let r = cost_row(&cp, n);
        println!(
            "{n:>4}  Noctua {:>10.2}  ESSPER {:>10.2}  SAF {:>10.2}  saves {:.2}%",
            r.noctua.cost_usd(),
            r.essper.cost_usd(),
            r.saf.cost_usd(),
            r.saf.pct_savings_vs_best_cluster
        );
    }

    let ep = EnergyParams::default();
    println!("\nmixed workload, 10 cards, 40 card-hours");
    for pct in (0..=100).step_by(20) {
        let c = case_study(&ep, pct as f64);
        println!(
            "{pct:>4}%  cluster {:.2} h  SAF {:.2} h  time saved {:.2}%  energy saved {:.2}%",
            c.cluster_time_h, c.saf_time_h, c.pct_time_reduction, c.pct_energy_reduction
        );
    }

    let d = derive_sim_defaults(&rp, 1024, &LinkParams::default());
    println!(
        "\nsimulated host: {} frames, {:.3} us overhead per frame",
        d.frames,
        d.per_frame_overhead_s * 1e6
    );
}
