//! Closed-form models: reconfiguration time across programming flows,
//! hardware setup cost of scaling out, and the on-demand scaling case
//! study. Also derives the simulator's host overhead from the measured
//! Ethernet programming time.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fabric::LinkParams;
use crate::frame::HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Flow {
    /// Broadcast over Ethernet from a single host.
    Eth,
    /// One host per two cards; hosts receive the bitstream over the
    /// network, then program their cards in parallel.
    Pcie,
    /// A PCIe device tree: one host programs every card in turn.
    PcieDt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconfigParams {
    /// Programming one card over PCIe, seconds.
    pub t_single_pcie: f64,
    /// Programming one card (or many, by broadcast) over Ethernet, seconds.
    pub t_single_eth: f64,
    /// Distributing the bitstream to the other hosts, seconds.
    pub t_net_xfer: f64,
    pub bitstream_bytes: u64,
}

impl Default for ReconfigParams {
    fn default() -> Self {
        ReconfigParams {
            t_single_pcie: 12.3,
            t_single_eth: 17.76,
            t_net_xfer: 15.67,
            bitstream_bytes: 97_400_000,
        }
    }
}

/// Rounds to 2 decimals, the precision every reported figure carries.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn reconfig_time(p: &ReconfigParams, flow: Flow, n_fpgas: u32) -> f64 {
    assert!(n_fpgas >= 1, "at least one card");
    let n = n_fpgas as f64;
    let t = match flow {
        Flow::Eth => p.t_single_eth,
        Flow::Pcie => {
            p.t_single_pcie * n.min(2.0) + if n_fpgas > 2 { p.t_net_xfer } else { 0.0 }
        }
        Flow::PcieDt => p.t_single_pcie * n,
    };
    round2(t)
}

/// How many times faster Ethernet broadcast programming is than `flow`.
pub fn reconfig_speedup(p: &ReconfigParams, flow: Flow, n_fpgas: u32) -> f64 {
    reconfig_time(p, flow, n_fpgas) / reconfig_time(p, Flow::Eth, n_fpgas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// One host per card.
    Noctua,
    /// One host per two cards.
    Essper,
    /// One host for all cards.
    Saf,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Noctua, Architecture::Essper, Architecture::Saf];

    pub fn hosts(self, n_fpgas: u32) -> u32 {
        match self {
            Architecture::Noctua => n_fpgas,
            Architecture::Essper => n_fpgas.div_ceil(2),
            Architecture::Saf => 1,
        }
    }
}

/// Unit prices in cents. 1099.99 + 749.99 per host/card pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub host_cost_cents: u64,
    pub fpga_cost_cents: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            host_cost_cents: 109_999,
            fpga_cost_cents: 74_999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetupCost {
    pub arch: Architecture,
    pub n_fpgas: u32,
    pub hosts: u32,
    pub cost_cents: u64,
    /// Savings against the cheaper cluster, percent. Only meaningful for SAF;
    /// computed the same way for the clusters (0 for the cheaper one).
    pub pct_savings_vs_best_cluster: f64,
}

impl SetupCost {
    pub fn cost_usd(&self) -> f64 {
        self.cost_cents as f64 / 100.0
    }
}

fn cost_cents(p: &CostParams, arch: Architecture, n: u32) -> u64 {
    arch.hosts(n) as u64 * p.host_cost_cents + n as u64 * p.fpga_cost_cents
}

pub fn setup_cost(p: &CostParams, arch: Architecture, n_fpgas: u32) -> SetupCost {
    assert!(n_fpgas >= 1, "at least one card");
    let own = cost_cents(p, arch, n_fpgas);
    let best = cost_cents(p, Architecture::Noctua, n_fpgas)
        .min(cost_cents(p, Architecture::Essper, n_fpgas));
    SetupCost {
        arch,
        n_fpgas,
        hosts: arch.hosts(n_fpgas),
        cost_cents: own,
        pct_savings_vs_best_cluster: round2((best as f64 - own as f64) / best as f64 * 100.0),
    }
}

/// One row of the setup-cost comparison: all three architectures at `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostRow {
    pub n_fpgas: u32,
    pub noctua: SetupCost,
    pub essper: SetupCost,
    pub saf: SetupCost,
}

pub const COST_TABLE_SIZES: [u32; 7] = [1, 2, 4, 8, 12, 16, 20];

pub fn cost_row(p: &CostParams, n: u32) -> CostRow {
    CostRow {
        n_fpgas: n,
        noctua: setup_cost(p, Architecture::Noctua, n),
        essper: setup_cost(p, Architecture::Essper, n),
        saf: setup_cost(p, Architecture::Saf, n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Static power per card, mW.
    pub p_static_mw: f64,
    /// Average dynamic power of the application per card, mW.
    pub p_dynamic_mw: f64,
    /// Power keeping the standby cards configured while they wait, mW total.
    pub p_wait_mw: f64,
    pub n_base: u32,
    /// Baseline runtime on `n_base` cards, hours.
    pub t_base_h: f64,
    pub scale_factor: u32,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            p_static_mw: 22.0,
            p_dynamic_mw: 46.0,
            p_wait_mw: 10.0,
            n_base: 4,
            t_base_h: 10.0,
            scale_factor: 2,
        }
    }
}

const KJ_PER_MWH: f64 = 3.6e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseStudy {
    pub completion_pct: f64,
    pub cluster_time_h: f64,
    pub cluster_energy_kj: f64,
    pub saf_time_h: f64,
    pub saf_energy_kj: f64,
    pub pct_time_reduction: f64,
    pub pct_energy_reduction: f64,
    /// Whether the cluster's best option was to restart on scaled hardware.
    pub cluster_rescaled: bool,
}

/// Scaling `n_base` cards by `scale_factor` once `completion_pct` of the
/// job is done.
///
/// The cluster must stop and restart the whole job on the scaled hardware,
/// or skip scaling; it takes whichever is faster, and the baseline on a
/// tie. SAF hot-plugs the extra cards and finishes the remaining work on
/// them, paying `p_wait` while they wait. At 100% there is nothing left to
/// scale, so no standby power is spent.
///
/// Energies are unrounded; times are exact.
pub fn case_study(p: &EnergyParams, completion_pct: f64) -> CaseStudy {
    assert!((0.0..=100.0).contains(&completion_pct), "percent in 0..=100");
    let t = completion_pct / 100.0 * p.t_base_h;
    let k = p.scale_factor as f64;
    let n = p.n_base as f64;
    let card_mw = p.p_static_mw + p.p_dynamic_mw;

    let saf_time = t + (p.t_base_h - t) / k;
    let saf_card_hours = n * t + n * k * (p.t_base_h - t) / k;
    let wait_mwh = if t < p.t_base_h { p.p_wait_mw * t } else { 0.0 };
    let saf_energy = (saf_card_hours * card_mw + wait_mwh) * KJ_PER_MWH;

    let restart_time = t + p.t_base_h / k;
    let cluster_rescaled = restart_time < p.t_base_h;
    let (cluster_time, cluster_card_hours) = if cluster_rescaled {
        (restart_time, n * t + n * k * p.t_base_h / k)
    } else {
        (p.t_base_h, n * p.t_base_h)
    };
    let cluster_energy = cluster_card_hours * card_mw * KJ_PER_MWH;

    CaseStudy {
        completion_pct,
        cluster_time_h: cluster_time,
        cluster_energy_kj: cluster_energy,
        saf_time_h: saf_time,
        saf_energy_kj: saf_energy,
        pct_time_reduction: (cluster_time - saf_time) / cluster_time * 100.0,
        pct_energy_reduction: (cluster_energy - saf_energy) / cluster_energy * 100.0,
        cluster_rescaled,
    }
}

/// Card-hours SAF spends computing; equals the baseline `n_base·t_base`
/// for every scaling point.
pub fn saf_card_hours(p: &EnergyParams, completion_pct: f64) -> f64 {
    let t = completion_pct / 100.0 * p.t_base_h;
    p.n_base as f64 * t
        + (p.n_base * p.scale_factor) as f64 * (p.t_base_h - t) / p.scale_factor as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimDefaults {
    pub frames: u64,
    /// Wall time per frame implied by the measured Ethernet programming time.
    pub per_frame_budget_s: f64,
    /// Host overhead per frame: the budget minus wire time.
    pub per_frame_overhead_s: f64,
    pub eth_throughput_bps: f64,
    pub pcie_throughput_bps: f64,
}

/// Bytes of a bitstream frame on the wire: header, 18-byte chunk header, data.
pub fn pr_frame_len(chunk_bytes: usize) -> usize {
    HEADER_LEN + 18 + chunk_bytes
}

pub fn derive_sim_defaults(p: &ReconfigParams, chunk_bytes: usize, link: &LinkParams) -> SimDefaults {
    assert!(chunk_bytes > 0);
    let frames = p.bitstream_bytes.div_ceil(chunk_bytes as u64);
    let budget = p.t_single_eth / frames as f64;
    let wire = link.serialization(pr_frame_len(chunk_bytes)).as_secs_f64();
    SimDefaults {
        frames,
        per_frame_budget_s: budget,
        per_frame_overhead_s: budget - wire,
        eth_throughput_bps: p.bitstream_bytes as f64 / p.t_single_eth,
        pcie_throughput_bps: p.bitstream_bytes as f64 / p.t_single_pcie,
    }
}

/// Host access link reproducing the measured Ethernet programming time.
pub fn default_host_link() -> LinkParams {
    let d = derive_sim_defaults(
        &ReconfigParams::default(),
        crate::frame::payload::PR_CHUNK_BYTES,
        &LinkParams::default(),
    );
    LinkParams::default().with_overhead(d.per_frame_overhead_s)
}

pub fn duration_s(d: Duration) -> f64 {
    d.as_secs_f64()
}
