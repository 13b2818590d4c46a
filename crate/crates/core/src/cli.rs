//! The `safnet` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 some devices
//! failed, 3 every device failed (or the run could not proceed).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::frame::MacAddress;
use crate::host::ptrans::Scaling;
use crate::host::{Host, HostError, ProgramReport, TargetSet};
use crate::models::{
    case_study, cost_row, derive_sim_defaults, reconfig_speedup, reconfig_time, round2, CaseStudy, CostRow,
    Flow, COST_TABLE_SIZES,
};
use crate::report::hex;
use crate::scenario::{ptrans_sweep, Scenario, ScenarioConfig, ScenarioError, SweepRow, TransportKind};
use crate::transport::{RawTransport, Transport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_TOTAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "safnet", version, about = "Network-attached accelerators over raw Ethernet")]
pub struct Cli {
    /// Scenario file (TOML). Falls back to scenario.toml under SAFNET_CONFIG_PATH.
    #[arg(long, global = true, env = "SAFNET_CONFIG")]
    pub config: Option<PathBuf>,
    /// Emit JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe the network and list the devices that answer.
    Discover {
        /// How long to listen after the probe, milliseconds.
        #[arg(long)]
        listen_ms: Option<u64>,
    },
    /// Program devices with a bitstream by broadcast.
    Program(ProgramArgs),
    /// Run the distributed transpose benchmark.
    BenchPtrans(BenchArgs),
    /// Evaluate the closed-form models.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Args)]
pub struct ProgramArgs {
    /// Raw bitstream file.
    #[arg(long)]
    pub rbf: Option<PathBuf>,
    /// `all` or a comma-separated list of MAC addresses.
    #[arg(long, default_value = "all")]
    pub targets: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Matrix dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Device counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub devices: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub scaling: Option<Scaling>,
    /// Use the scenario's device sweep.
    #[arg(long)]
    pub sweep: bool,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Reconfiguration time by programming flow.
    Reconfig {
        #[arg(long, value_enum)]
        flow: Option<Flow>,
        /// Number of cards.
        #[arg(long)]
        n: Option<u32>,
        /// Print every flow for 1..=20 cards.
        #[arg(long)]
        table: bool,
    },
    /// Hardware setup cost of scaling out.
    Cost {
        /// Number of cards.
        #[arg(long)]
        n: Option<u32>,
        /// Print the standard card counts.
        #[arg(long)]
        table: bool,
    },
    /// On-demand scaling of a running job.
    CaseStudy {
        /// Percent of the job completed when the extra cards arrive.
        #[arg(long)]
        pct: Option<f64>,
        /// Print 0..=100 in steps of 10.
        #[arg(long)]
        table: bool,
    },
    /// Simulator defaults derived from the measured programming time.
    Derive,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn total(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_TOTAL,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Host(h) => h.into(),
            ScenarioError::Fabric(_) | ScenarioError::Io { .. } | ScenarioError::Parse { .. } | ScenarioError::Invalid(_) => {
                Failure::usage(e.to_string())
            }
        }
    }
}

impl From<HostError> for Failure {
    fn from(e: HostError) -> Self {
        match e {
            HostError::IndivisiblePartition { .. }
            | HostError::UnknownDevice(_)
            | HostError::EmptyBitstream
            | HostError::InvalidState(_) => Failure::usage(e.to_string()),
            _ => Failure::total(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::total(e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    result: T,
}

fn emit_json<T: Serialize>(out: &mut dyn Write, command: &str, result: T) -> std::io::Result<()> {
    let s = serde_json::to_string_pretty(&Envelope { command, result }).expect("serializable");
    writeln!(out, "{s}")
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    let config = ScenarioConfig::locate(cli.config.as_deref())?;
    match &cli.command {
        Command::Discover { listen_ms } => cmd_discover(&config, *listen_ms, cli.json, out),
        Command::Program(a) => cmd_program(&config, a, cli.json, out),
        Command::BenchPtrans(a) => cmd_bench(&config, a, cli.json, out),
        Command::Model(m) => cmd_model(&config, m, cli.json, out),
    }
}

fn default_listen(config: &ScenarioConfig) -> Duration {
    match config.transport {
        TransportKind::Sim => Duration::from_millis(10),
        TransportKind::Raw => Duration::from_secs(1),
    }
}

#[derive(Serialize)]
struct DeviceRow {
    mac0: MacAddress,
    mac1: MacAddress,
    vendor_id: String,
    product_id: String,
    state: String,
    last_seen_s: f64,
}

fn device_rows<T: Transport>(host: &Host<T>) -> Vec<DeviceRow> {
    host.registry()
        .iter()
        .map(|(_, e)| DeviceRow {
            mac0: e.identity.mac0,
            mac1: e.identity.mac1,
            vendor_id: format!("{:04x}", e.identity.vendor_id),
            product_id: format!("{:04x}", e.identity.product_id),
            state: e.state.to_string(),
            last_seen_s: e.last_seen.as_secs_f64(),
        })
        .collect()
}

/// Runs `f` against a host on whichever transport the scenario names.
fn with_host<R>(
    config: &ScenarioConfig,
    f: &mut dyn FnMut(&mut dyn HostOps) -> Result<R, Failure>,
) -> Result<R, Failure> {
    match config.transport {
        TransportKind::Sim => {
            let mut s = Scenario::build(config)?;
            f(&mut s.host)
        }
        TransportKind::Raw => {
            let iface = config.interface.as_deref().unwrap_or_default();
            let t = RawTransport::open(iface, Some(config.host_mac)).map_err(|e| Failure::total(e.to_string()))?;
            let mut host = Host::new(t, config.host);
            f(&mut host)
        }
    }
}

/// The host operations the CLI needs, object-safe over transports.
trait HostOps {
    fn discover(&mut self, listen: Duration) -> Result<usize, HostError>;
    fn program(&mut self, targets: &TargetSet, bits: Vec<u8>) -> Result<ProgramReport, HostError>;
    fn rows(&self) -> Vec<DeviceRow>;
    fn report_json(&self) -> serde_json::Value;
}

impl<T: Transport> HostOps for Host<T> {
    fn discover(&mut self, listen: Duration) -> Result<usize, HostError> {
        Host::discover(self, listen)
    }

    fn program(&mut self, targets: &TargetSet, bits: Vec<u8>) -> Result<ProgramReport, HostError> {
        Host::program(self, targets, bits)
    }

    fn rows(&self) -> Vec<DeviceRow> {
        device_rows(self)
    }

    fn report_json(&self) -> serde_json::Value {
        serde_json::to_value(self.report()).expect("serializable")
    }
}

fn cmd_discover(config: &ScenarioConfig, listen_ms: Option<u64>, json: bool, out: &mut dyn Write) -> CmdResult {
    let listen = listen_ms.map(Duration::from_millis).unwrap_or_else(|| default_listen(config));
    let rows = with_host(config, &mut |h| {
        h.discover(listen)?;
        Ok(h.rows())
    })?;
    if json {
        emit_json(out, "discover", &rows)?;
    } else {
        writeln!(out, "{:<18} {:<18} {:>6} {:>7} {:<11} {:>10}", "MAC0", "MAC1", "VENDOR", "PRODUCT", "STATE", "SEEN (s)")?;
        for r in &rows {
            writeln!(
                out,
                "{:<18} {:<18} {:>6} {:>7} {:<11} {:>10.6}",
                r.mac0.to_string(),
                r.mac1.to_string(),
                r.vendor_id,
                r.product_id,
                r.state,
                r.last_seen_s
            )?;
        }
        writeln!(out, "{} device(s)", rows.len())?;
    }
    Ok(EXIT_OK)
}

fn parse_targets(s: &str) -> Result<TargetSet, Failure> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(TargetSet::Broadcast);
    }
    s.split(',')
        .map(|m| m.trim().parse::<MacAddress>().map_err(|e| Failure::usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()
        .map(TargetSet::Devices)
}

fn cmd_program(config: &ScenarioConfig, a: &ProgramArgs, json: bool, out: &mut dyn Write) -> CmdResult {
    let path = a
        .rbf
        .clone()
        .or_else(|| config.bitstream.clone())
        .ok_or_else(|| Failure::usage("no bitstream: pass --rbf or set `bitstream` in the scenario"))?;
    let bits = std::fs::read(&path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    if bits.is_empty() {
        return Err(Failure::usage(format!("{} is empty", path.display())));
    }
    let targets = parse_targets(&a.targets)?;
    let listen = default_listen(config);
    let (report, registry) = with_host(config, &mut |h| {
        if h.discover(listen)? == 0 {
            return Err(Failure::total("no devices discovered"));
        }
        let r = h.program(&targets, bits.clone())?;
        Ok((r, h.report_json()))
    })?;
    if json {
        emit_json(
            out,
            "program",
            serde_json::json!({ "program": report, "host": registry }),
        )?;
    } else {
        writeln!(out, "bitstream {} ({} bytes)", path.display(), report.bitstream_len)?;
        writeln!(out, "expected sha256 {}", hex(&report.expected_digest))?;
        writeln!(out, "{:<18} {:<8} DIGEST", "DEVICE", "STATUS")?;
        for (m, ack) in &report.acks {
            writeln!(out, "{:<18} {:<8} {}", m.to_string(), "OK", hex(&ack.digest))?;
        }
        for (m, f) in &report.failures {
            writeln!(out, "{:<18} {:<8} {:?}", m.to_string(), "FAILED", f)?;
        }
        writeln!(
            out,
            "{} ok, {} failed, {:.3} s {}, {} retries",
            report.acks.len(),
            report.failures.len(),
            report.elapsed().as_secs_f64(),
            match config.transport {
                TransportKind::Sim => "simulated",
                TransportKind::Raw => "wall clock",
            },
            report.retries
        )?;
    }
    Ok(match (report.acks.len(), report.failures.len()) {
        (_, 0) => EXIT_OK,
        (0, _) => EXIT_TOTAL,
        _ => EXIT_PARTIAL,
    })
}

fn cmd_bench(config: &ScenarioConfig, a: &BenchArgs, json: bool, out: &mut dyn Write) -> CmdResult {
    if config.transport != TransportKind::Sim {
        return Err(Failure::usage("bench-ptrans runs on the simulated fabric only"));
    }
    let n = a.n.unwrap_or(config.benchmark.n);
    let scaling = a.scaling.unwrap_or(config.benchmark.scaling);
    let ks = match (&a.devices, a.sweep) {
        (Some(d), false) => d.clone(),
        _ => config.benchmark.devices.clone(),
    };
    if ks.is_empty() || ks.contains(&0) || n == 0 {
        return Err(Failure::usage("device counts and n must be positive"));
    }
    let rows = ptrans_sweep(config, &ks, n, scaling)?;
    let csv = sweep_csv(&rows);
    if let Some(p) = &a.csv {
        std::fs::write(p, &csv).map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display())))?;
    }
    if json {
        emit_json(out, "bench-ptrans", serde_json::json!({ "n": n, "scaling": scaling, "rows": rows }))?;
    } else {
        writeln!(out, "PTRANS n={n} {scaling:?} scaling")?;
        writeln!(
            out,
            "{:>4} {:>12} {:>12} {:>14} {:>8} {:>10} {:>7}",
            "k", "compute (s)", "total (s)", "per-device (s)", "speedup", "efficiency", "correct"
        )?;
        for r in &rows {
            writeln!(
                out,
                "{:>4} {:>12.6} {:>12.6} {:>14.6} {:>8.3} {:>10.3} {:>7}",
                r.k, r.compute_s, r.total_s, r.per_device_s, r.speedup, r.efficiency, r.correct
            )?;
        }
    }
    Ok(if rows.iter().all(|r| r.correct) { EXIT_OK } else { EXIT_TOTAL })
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("k,compute_s,total_s,per_device_s,speedup,efficiency,correct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.6},{:.6},{}\n",
            r.k, r.compute_s, r.total_s, r.per_device_s, r.speedup, r.efficiency, r.correct
        ));
    }
    s
}

fn usd(cents: u64) -> String {
    format!("{}.{:02}", cents / 100, cents % 100)
}

/// Setup-cost rows in the published layout.
pub fn format_cost_table(rows: &[CostRow]) -> String {
    let mut s = String::new();
    s.push_str("|      |  Number of Hosts  |           Cost (USD)           |   %Cost |\n");
    s.push_str("| FPGA |  Noc  ESSP   SAF  |       Noc      ESSP       SAF  | Savings |\n");
    for r in rows {
        s.push_str(&format!(
            "| {:>4} | {:>4} {:>5} {:>5}  | {:>9} {:>9} {:>9}  | {:>7.2} |\n",
            r.n_fpgas,
            r.noctua.hosts,
            r.essper.hosts,
            r.saf.hosts,
            usd(r.noctua.cost_cents),
            usd(r.essper.cost_cents),
            usd(r.saf.cost_cents),
            r.saf.pct_savings_vs_best_cluster
        ));
    }
    s
}

fn trim_num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Case-study rows in the published layout.
pub fn format_case_table(rows: &[CaseStudy]) -> String {
    let mut s = String::new();
    s.push_str("| % of      |     Cluster      |       SAF        |  %Time  | %Energy  |\n");
    s.push_str("| completed | Time (h)  E (kJ) | Time (h)  E (kJ) | reduct. | reduct.  |\n");
    for r in rows {
        s.push_str(&format!(
            "| {:>9} | {:>8} {:>7.2} | {:>8} {:>7.2} | {:>7.2} | {:>8.2} |\n",
            trim_num(r.completion_pct),
            trim_num(r.cluster_time_h),
            r.cluster_energy_kj,
            trim_num(r.saf_time_h),
            r.saf_energy_kj,
            r.pct_time_reduction,
            r.pct_energy_reduction
        ));
    }
    s
}

#[derive(Serialize)]
struct ReconfigRow {
    n_fpgas: u32,
    pcie_dt_s: f64,
    pcie_s: f64,
    eth_s: f64,
    speedup_vs_pcie: f64,
    speedup_vs_pcie_dt: f64,
}

fn cmd_model(config: &ScenarioConfig, m: &ModelCommand, json: bool, out: &mut dyn Write) -> CmdResult {
    let p = &config.models;
    match m {
        ModelCommand::Reconfig { flow, n, table } => {
            if *n == Some(0) {
                return Err(Failure::usage("--n must be at least 1"));
            }
            if let (Some(f), Some(n), false) = (flow, n, table) {
                let t = reconfig_time(&p.reconfig, *f, *n);
                if json {
                    emit_json(out, "model reconfig", serde_json::json!({ "flow": f, "n_fpgas": n, "seconds": t }))?;
                } else {
                    writeln!(out, "{t:.2}")?;
                }
                return Ok(EXIT_OK);
            }
            let ns: Vec<u32> = match n {
                Some(n) if !table => vec![*n],
                _ => (1..=20).collect(),
            };
            let rows: Vec<ReconfigRow> = ns
                .iter()
                .map(|&n| ReconfigRow {
                    n_fpgas: n,
                    pcie_dt_s: reconfig_time(&p.reconfig, Flow::PcieDt, n),
                    pcie_s: reconfig_time(&p.reconfig, Flow::Pcie, n),
                    eth_s: reconfig_time(&p.reconfig, Flow::Eth, n),
                    speedup_vs_pcie: round2(reconfig_speedup(&p.reconfig, Flow::Pcie, n)),
                    speedup_vs_pcie_dt: round2(reconfig_speedup(&p.reconfig, Flow::PcieDt, n)),
                })
                .collect();
            if json {
                emit_json(out, "model reconfig", &rows)?;
            } else {
                writeln!(out, "| FPGAs | PCIe-DT (s) | PCIe (s) | ETH (s) | vs PCIe | vs PCIe-DT |")?;
                for r in &rows {
                    writeln!(
                        out,
                        "| {:>5} | {:>11.2} | {:>8.2} | {:>7.2} | {:>6.2}x | {:>9.2}x |",
                        r.n_fpgas, r.pcie_dt_s, r.pcie_s, r.eth_s, r.speedup_vs_pcie, r.speedup_vs_pcie_dt
                    )?;
                }
            }
        }
        ModelCommand::Cost { n, table } => {
            let ns: Vec<u32> = match n {
                Some(0) => return Err(Failure::usage("--n must be at least 1")),
                Some(n) if !table => vec![*n],
                _ => COST_TABLE_SIZES.to_vec(),
            };
            let rows: Vec<CostRow> = ns.iter().map(|&n| cost_row(&p.cost, n)).collect();
            if json {
                emit_json(out, "model cost", &rows)?;
            } else {
                write!(out, "{}", format_cost_table(&rows))?;
            }
        }
        ModelCommand::CaseStudy { pct, table } => {
            let pcts: Vec<f64> = match pct {
                Some(x) if !(0.0..=100.0).contains(x) => {
                    return Err(Failure::usage("--pct must be within 0..=100"));
                }
                Some(x) if !table => vec![*x],
                _ => (0..=10).map(|i| i as f64 * 10.0).collect(),
            };
            let rows: Vec<CaseStudy> = pcts.iter().map(|&x| case_study(&p.energy, x)).collect();
            if json {
                emit_json(out, "model case-study", &rows)?;
            } else {
                write!(out, "{}", format_case_table(&rows))?;
            }
        }
        ModelCommand::Derive => {
            let d = derive_sim_defaults(
                &p.reconfig,
                crate::frame::PR_CHUNK_BYTES,
                &config.topology.link,
            );
            if json {
                emit_json(out, "model derive", d)?;
            } else {
                writeln!(out, "bitstream frames        {}", d.frames)?;
                writeln!(out, "per-frame budget        {:.3} us", d.per_frame_budget_s * 1e6)?;
                writeln!(out, "per-frame host overhead {:.3} us", d.per_frame_overhead_s * 1e6)?;
                writeln!(out, "ethernet throughput     {:.3} MB/s", d.eth_throughput_bps / 1e6)?;
                writeln!(out, "pcie throughput         {:.3} MB/s", d.pcie_throughput_bps / 1e6)?;
            }
        }
    }
    Ok(EXIT_OK)
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
