use proptest::prelude::*;
use safnet::fabric::LinkParams;
use safnet::models::*;

#[test]
fn reconfiguration_flows() {
    let p = ReconfigParams::default();
    let t = |f, n| reconfig_time(&p, f, n);
    for n in 1..=20 {
        assert_eq!(t(Flow::Eth, n), 17.76);
        assert_eq!(t(Flow::PcieDt, n), round2(12.3 * n as f64));
    }
    assert_eq!(t(Flow::Pcie, 3), 40.27);
    assert_eq!(t(Flow::Pcie, 20), 40.27);
    assert_eq!(round2(reconfig_speedup(&p, Flow::Pcie, 20)), 2.27);
    assert_eq!(round2(reconfig_speedup(&p, Flow::PcieDt, 20)), 13.85);
}

#[test]
fn pcie_dt_crosses_eth_at_two_cards() {
    let p = ReconfigParams::default();
    assert!(reconfig_time(&p, Flow::PcieDt, 1) < reconfig_time(&p, Flow::Eth, 1));
    assert!(reconfig_time(&p, Flow::PcieDt, 2) > reconfig_time(&p, Flow::Eth, 2));
}

#[test]
fn setup_cost_examples() {
    let p = CostParams::default();
    let saf = setup_cost(&p, Architecture::Saf, 20);
    assert_eq!(saf.cost_cents, 1_609_979);
    assert_eq!(saf.cost_usd(), 16_099.79);
    assert_eq!(saf.pct_savings_vs_best_cluster, 38.08);
    assert_eq!(setup_cost(&p, Architecture::Essper, 4).cost_cents, 519_994);
    for a in Architecture::ALL {
        let c = setup_cost(&p, a, 1);
        assert_eq!((c.cost_cents, c.pct_savings_vs_best_cluster), (184_998, 0.0));
    }
    assert_eq!(Architecture::Essper.hosts(20), 10);
}

#[test]
fn case_study_examples() {
    let p = EnergyParams::default();
    let c = case_study(&p, 40.0);
    assert_eq!((c.cluster_time_h, c.saf_time_h), (9.0, 7.0));
    assert!(c.cluster_rescaled);
    assert_eq!(round2(c.pct_time_reduction), 22.22);
    assert!((c.pct_energy_reduction - 27.53).abs() < 0.05);
    let c = case_study(&p, 50.0);
    assert!(!c.cluster_rescaled, "a tie keeps the baseline");
    assert_eq!(c.saf_time_h, 7.5);
    for pct in [0.0, 100.0] {
        let c = case_study(&p, pct);
        assert_eq!(c.pct_time_reduction, 0.0);
        assert!(c.pct_energy_reduction.abs() < 1e-9);
        assert!((c.saf_energy_kj - 9.792).abs() < 1e-9);
    }
}

#[test]
fn time_reduction_peaks_at_half() {
    let p = EnergyParams::default();
    let r: Vec<f64> = (0..=10).map(|i| case_study(&p, i as f64 * 10.0).pct_time_reduction).collect();
    let peak = r.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(peak, r[5]);
    assert!(r[..=5].windows(2).all(|w| w[0] < w[1]));
    assert!(r[5..].windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn derived_host_overhead() {
    let d = derive_sim_defaults(&ReconfigParams::default(), 1024, &LinkParams::default());
    assert_eq!(d.frames, 95_118);
    assert!((d.per_frame_budget_s * 1e6 - 186.715).abs() < 1e-3);
    assert!((d.per_frame_overhead_s * 1e6 - 185.866).abs() < 1e-2);
    assert!((d.pcie_throughput_bps / 1e6 - 7.92).abs() < 0.01);
    let link = default_host_link();
    let per_frame = link.overhead() + link.serialization(pr_frame_len(1024));
    let total = per_frame.as_secs_f64() * d.frames as f64;
    assert!((total - 17.76).abs() < 0.01, "{total}");
}

proptest! {
    #[test]
    fn saf_never_costs_more(n in 1u32..500) {
        let r = cost_row(&CostParams::default(), n);
        prop_assert!(r.saf.cost_cents <= r.essper.cost_cents);
        prop_assert!(r.essper.cost_cents <= r.noctua.cost_cents);
        prop_assert!(r.saf.pct_savings_vs_best_cluster >= 0.0);
    }

    #[test]
    fn saf_card_hours_constant(pct in 0.0f64..=100.0) {
        let p = EnergyParams::default();
        prop_assert!((saf_card_hours(&p, pct) - 40.0).abs() < 1e-9);
        let c = case_study(&p, pct);
        prop_assert!(c.saf_time_h <= c.cluster_time_h + 1e-12);
    }
}
