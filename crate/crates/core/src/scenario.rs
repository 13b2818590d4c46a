//! Scenario files: topology, agent roster, link parameters, retry policy,
//! scripted faults and benchmark parameters, in TOML.
//!
//! ```toml
//! seed = 7
//! agent_count = 20          # placed on free ports, spread across switches
//! host_port = { switch = 1, port = 10 }
//!
//! [host]
//! probe_period_s = 1.0
//! retry = { max_retries = 2, timeout_factor = 3.0 }
//!
//! [[faults]]                # unplug agent 3 two seconds in
//! kind = "detach"
//! agent = 3
//! at_s = 2.0
//! ```
//!
//! Without a `[topology]` table the two-switch testbed is used: two
//! 12-port switches joined on port 11, ten agents on switch 0, ten more
//! and the host on switch 1.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentShell, DEFAULT_KERNEL_NS_PER_WORD};
use crate::fabric::topology::{PortRef, TopologySpec};
use crate::fabric::{EndpointId, FabricAction, FabricError, LinkParams};
use crate::frame::{DiscoveryPayload, MacAddress};
use crate::host::ptrans::{run_ptrans, PtransRun, Scaling};
use crate::host::{Host, HostConfig, HostError, TargetSet};
use crate::models::{default_host_link, CostParams, EnergyParams, ReconfigParams};
use crate::time::SimTime;
use crate::transport::SimTransport;

pub const CONFIG_ENV: &str = "SAFNET_CONFIG_PATH";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Host(#[from] HostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    Sim,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub mac0: MacAddress,
    #[serde(default)]
    pub mac1: Option<MacAddress>,
    #[serde(default = "default_vendor")]
    pub vendor_id: u16,
    #[serde(default = "default_product")]
    pub product_id: u16,
    /// Explicit placement; otherwise the next free port.
    #[serde(default)]
    pub port: Option<PortRef>,
    #[serde(default)]
    pub link: Option<LinkParams>,
    #[serde(default = "default_ns_per_word")]
    pub kernel_ns_per_word: u64,
}

fn default_vendor() -> u16 {
    crate::agent::DEFAULT_VENDOR_ID
}

fn default_product() -> u16 {
    crate::agent::DEFAULT_PRODUCT_ID
}

fn default_ns_per_word() -> u64 {
    DEFAULT_KERNEL_NS_PER_WORD
}

impl AgentSpec {
    pub fn numbered(i: u16) -> Self {
        let c = AgentConfig::numbered(i);
        AgentSpec {
            mac0: c.identity.mac0,
            mac1: Some(c.identity.mac1),
            vendor_id: c.identity.vendor_id,
            product_id: c.identity.product_id,
            port: None,
            link: None,
            kernel_ns_per_word: DEFAULT_KERNEL_NS_PER_WORD,
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        let mut c = AgentConfig::new(DiscoveryPayload {
            mac0: self.mac0,
            mac1: self.mac1.unwrap_or(self.mac0),
            vendor_id: self.vendor_id,
            product_id: self.product_id,
        });
        c.kernel_ns_per_word = self.kernel_ns_per_word;
        c
    }
}

/// Scripted fault. `agent` indexes the roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultSpec {
    /// Unplug an agent.
    Detach { agent: usize, at_s: f64 },
    /// Plug an agent (back) in; it starts unplugged if this is its first attach.
    Attach {
        agent: usize,
        at_s: f64,
        #[serde(default)]
        port: Option<PortRef>,
    },
    /// Independent per-frame loss on an agent's access link.
    Loss { agent: usize, rate: f64 },
    /// Independent per-frame loss on the host's access link.
    HostLoss { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub n: usize,
    pub devices: Vec<usize>,
    pub scaling: Scaling,
    /// Size of the random bitstream programmed before benchmarking.
    pub bitstream_bytes: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n: 512,
            devices: vec![1, 2, 4, 8, 16, 20],
            scaling: Scaling::Strong,
            bitstream_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub transport: TransportKind,
    /// Interface for the raw transport.
    pub interface: Option<String>,
    pub topology: TopologySpec,
    pub host_mac: MacAddress,
    pub host_port: PortRef,
    /// Host access link; defaults to one whose per-frame overhead
    /// reproduces the measured Ethernet programming time.
    pub host_link: Option<LinkParams>,
    /// Numbered agents to place automatically when `agents` is empty.
    pub agent_count: usize,
    pub agents: Vec<AgentSpec>,
    pub host: HostConfig,
    pub faults: Vec<FaultSpec>,
    pub benchmark: BenchmarkSpec,
    /// Default bitstream for `program`.
    pub bitstream: Option<PathBuf>,
    pub models: ModelParams,
}

/// Overrides for the closed-form models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub reconfig: ReconfigParams,
    pub cost: CostParams,
    pub energy: EnergyParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            transport: TransportKind::Sim,
            interface: None,
            topology: TopologySpec::two_switch_testbed(),
            host_mac: MacAddress::local(1),
            host_port: PortRef { switch: 1, port: 10 },
            host_link: None,
            agent_count: 20,
            agents: Vec::new(),
            host: HostConfig::default(),
            faults: Vec::new(),
            benchmark: BenchmarkSpec::default(),
            bitstream: None,
            models: ModelParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn with_agents(count: usize) -> Self {
        ScenarioConfig {
            agent_count: count,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        cfg.validate(None)?;
        Ok(cfg)
    }

    /// Loads a scenario file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.into(),
            source,
        })?;
        let mut cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let (Some(b), Some(dir)) = (&cfg.bitstream, path.parent()) {
            if b.is_relative() {
                cfg.bitstream = Some(dir.join(b));
            }
        }
        cfg.validate(Some(path))?;
        Ok(cfg)
    }

    /// Finds a scenario: an explicit path, else `scenario.toml` in each
    /// directory of `SAFNET_CONFIG_PATH`, else the built-in default.
    pub fn locate(explicit: Option<&Path>) -> Result<Self, ScenarioError> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        if let Some(dirs) = std::env::var_os(CONFIG_ENV) {
            for dir in std::env::split_paths(&dirs) {
                let candidate = dir.join("scenario.toml");
                if candidate.is_file() {
                    return Self::load(&candidate);
                }
            }
        }
        Ok(Self::default())
    }

    pub fn roster(&self) -> Vec<AgentSpec> {
        if self.agents.is_empty() {
            (0..self.agent_count).map(|i| AgentSpec::numbered(i as u16)).collect()
        } else {
            self.agents.clone()
        }
    }

    pub fn validate(&self, _origin: Option<&Path>) -> Result<(), ScenarioError> {
        let roster = self.roster();
        let mut macs = BTreeSet::new();
        macs.insert(self.host_mac);
        for a in &roster {
            if a.mac0.is_broadcast() || !macs.insert(a.mac0) {
                return Err(ScenarioError::Invalid(format!("duplicate or reserved MAC {}", a.mac0)));
            }
        }
        for f in &self.faults {
            let (agent, rate) = match f {
                FaultSpec::Detach { agent, .. } | FaultSpec::Attach { agent, .. } => (Some(*agent), 0.0),
                FaultSpec::Loss { agent, rate } => (Some(*agent), *rate),
                FaultSpec::HostLoss { rate } => (None, *rate),
            };
            if agent.is_some_and(|a| a >= roster.len()) {
                return Err(ScenarioError::Invalid(format!(
                    "fault refers to agent {} but the roster has {}",
                    agent.unwrap(),
                    roster.len()
                )));
            }
            if !(0.0..=1.0).contains(&rate) {
                return Err(ScenarioError::Invalid(format!("loss rate {rate} outside [0, 1]")));
            }
        }
        if let Some(b) = &self.bitstream {
            if !b.is_file() {
                return Err(ScenarioError::Invalid(format!("bitstream {} does not exist", b.display())));
            }
        }
        if self.transport == TransportKind::Raw && self.interface.is_none() {
            return Err(ScenarioError::Invalid("raw transport needs `interface`".into()));
        }
        Ok(())
    }

    pub fn host_link(&self) -> LinkParams {
        self.host_link.unwrap_or_else(|| {
            let mut l = default_host_link();
            l.bandwidth_bps = self.topology.link.bandwidth_bps;
            l.latency_s = self.topology.link.latency_s;
            l
        })
    }

    /// Free ports for automatic placement: switches filled as evenly as
    /// possible, each in port order.
    fn placements(&self, count: usize, taken: &BTreeSet<(u32, usize)>) -> Result<Vec<PortRef>, ScenarioError> {
        let mut free: Vec<Vec<PortRef>> = self
            .topology
            .switches
            .iter()
            .map(|s| {
                (0..s.ports)
                    .filter(|&p| !taken.contains(&(s.id, p)))
                    .map(|port| PortRef { switch: s.id, port })
                    .collect()
            })
            .collect();
        let total: usize = free.iter().map(Vec::len).sum();
        if count > total {
            return Err(ScenarioError::Invalid(format!(
                "{count} agents do not fit on {total} free ports"
            )));
        }
        let s = free.len().max(1);
        let mut quota: Vec<usize> = (0..s).map(|i| count / s + (i < count % s) as usize).collect();
        let mut out = Vec::with_capacity(count);
        // honor quotas, then spill into whatever is left
        for (q, f) in quota.iter_mut().zip(free.iter_mut()) {
            let take = (*q).min(f.len());
            out.extend(f.drain(..take));
            *q -= take;
        }
        let mut rest = free.into_iter().flatten();
        while out.len() < count {
            out.push(rest.next().expect("counted above"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentPlacement {
    pub mac: MacAddress,
    pub endpoint: EndpointId,
    pub port: PortRef,
}

/// A built simulation: the fabric with its agents, driven by a host.
pub struct Scenario {
    pub host: Host<SimTransport>,
    pub agents: Vec<AgentPlacement>,
    pub config: ScenarioConfig,
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate(None)?;
        let mut fabric = config.topology.build(config.seed)?;
        let roster = config.roster();
        let mut taken: BTreeSet<(u32, usize)> = config
            .topology
            .trunks
            .iter()
            .flat_map(|t| [(t.a.switch, t.a.port), (t.b.switch, t.b.port)])
            .collect();
        taken.insert((config.host_port.switch, config.host_port.port));
        for a in &roster {
            if let Some(p) = a.port {
                taken.insert((p.switch, p.port));
            }
        }
        let auto = roster.iter().filter(|a| a.port.is_none()).count();
        let mut auto_ports = config.placements(auto, &taken)?.into_iter();

        let starts_detached: BTreeSet<usize> = config
            .faults
            .iter()
            .filter_map(|f| match f {
                FaultSpec::Attach { agent, .. } => Some(*agent),
                _ => None,
            })
            .filter(|a| {
                // unplugged at start unless an earlier detach exists
                !config.faults.iter().any(|g| matches!(g, FaultSpec::Detach { agent, .. } if agent == a))
            })
            .collect();

        let mut agents = Vec::with_capacity(roster.len());
        for (i, spec) in roster.iter().enumerate() {
            let mut link = spec.link.unwrap_or(config.topology.link);
            for f in &config.faults {
                if let FaultSpec::Loss { agent, rate } = f {
                    if *agent == i {
                        link.loss = *rate;
                    }
                }
            }
            let node = AgentShell::with_default_kernels(spec.agent_config());
            let endpoint = fabric.add_endpoint(Box::new(node), link);
            let port = match spec.port {
                Some(p) => p,
                None => auto_ports.next().expect("placed above"),
            };
            if !starts_detached.contains(&i) {
                fabric.attach(endpoint, port.switch, port.port)?;
            }
            agents.push(AgentPlacement {
                mac: spec.mac0,
                endpoint,
                port,
            });
        }
        for f in &config.faults {
            match *f {
                FaultSpec::Detach { agent, at_s } => fabric.schedule(
                    SimTime::from_secs_f64(at_s),
                    FabricAction::Detach {
                        endpoint: agents[agent].endpoint,
                    },
                ),
                FaultSpec::Attach { agent, at_s, port } => {
                    let p = port.unwrap_or(agents[agent].port);
                    fabric.schedule(
                        SimTime::from_secs_f64(at_s),
                        FabricAction::Attach {
                            endpoint: agents[agent].endpoint,
                            switch: p.switch,
                            port: p.port,
                        },
                    )
                }
                FaultSpec::Loss { .. } | FaultSpec::HostLoss { .. } => {}
            }
        }
        let mut host_link = config.host_link();
        for f in &config.faults {
            if let FaultSpec::HostLoss { rate } = f {
                host_link.loss = *rate;
            }
        }
        let transport = SimTransport::attach(
            fabric,
            config.host_mac,
            host_link,
            config.host_port.switch,
            config.host_port.port,
        )?;
        Ok(Scenario {
            host: Host::new(transport, config.host),
            agents,
            config: config.clone(),
        })
    }

    pub fn agent_macs(&self) -> Vec<MacAddress> {
        self.agents.iter().map(|a| a.mac).collect()
    }

    pub fn agent(&self, mac: MacAddress) -> Option<&AgentShell> {
        self.host.transport().agent(mac)
    }

    /// Probes and listens long enough for every attached agent to answer.
    pub fn discover(&mut self) -> Result<usize, ScenarioError> {
        Ok(self.host.discover(Duration::from_millis(10))?)
    }
}

/// `len` pseudo-random bytes, reproducible from `seed`.
pub fn random_bitstream(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub compute_s: f64,
    pub total_s: f64,
    /// Mean per-device time (transfer, compute and collect of its own data).
    pub per_device_s: f64,
    /// Strong: compute time at k=1 over compute time at k. Weak: k times that.
    pub speedup: f64,
    pub efficiency: f64,
    pub correct: bool,
    #[serde(skip)]
    pub run: Option<PtransRun>,
}

/// Runs the transpose once per device count, each on a fresh fabric with
/// exactly `k` agents, discovered and programmed by broadcast.
pub fn ptrans_sweep(
    base: &ScenarioConfig,
    ks: &[usize],
    n: usize,
    scaling: Scaling,
) -> Result<Vec<SweepRow>, ScenarioError> {
    let one = |k: usize| -> Result<PtransRun, ScenarioError> {
        let mut cfg = base.clone();
        cfg.agents.truncate(k);
        cfg.agent_count = k;
        cfg.faults.clear();
        let mut s = Scenario::build(&cfg)?;
        s.discover()?;
        let bits = random_bitstream(cfg.benchmark.bitstream_bytes.max(1), cfg.seed);
        let report = s.host.program(&TargetSet::Broadcast, bits)?;
        if !report.all_ok() {
            return Err(ScenarioError::Invalid(format!(
                "programming failed on {} device(s)",
                report.failures.len()
            )));
        }
        let macs = s.agent_macs();
        Ok(run_ptrans(&mut s.host, &macs, n, scaling, 0, cfg.seed)?)
    };
    let mut runs: Vec<(usize, PtransRun)> = Vec::with_capacity(ks.len());
    for &k in ks {
        runs.push((k, one(k)?));
    }
    let base_compute = match runs.iter().find(|(k, _)| *k == 1) {
        Some((_, r)) => r.compute_s,
        None => one(1)?.compute_s,
    };
    Ok(runs
        .into_iter()
        .map(|(k, run)| {
            let ratio = base_compute / run.compute_s;
            let speedup = match scaling {
                Scaling::Strong => ratio,
                Scaling::Weak => k as f64 * ratio,
            };
            SweepRow {
                k,
                compute_s: run.compute_s,
                total_s: run.total_s,
                per_device_s: run.per_device.iter().map(|d| d.total_s).sum::<f64>() / k as f64,
                speedup,
                efficiency: speedup / k as f64,
                correct: run.correct,
                run: Some(run),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_testbed_placement() {
        let s = Scenario::build(&ScenarioConfig::default()).unwrap();
        let on0 = s.agents.iter().filter(|a| a.port.switch == 0).count();
        assert_eq!(on0, 10);
        assert_eq!(s.agents.len(), 20);
        assert!(s.agents.iter().all(|a| a.port.port < 11));
    }

    #[test]
    fn too_many_agents() {
        assert!(Scenario::build(&ScenarioConfig::with_agents(22)).is_err());
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = ScenarioConfig::from_toml("seed = \"x\"", "inline").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn duplicate_macs_rejected() {
        let text = r#"
            [[agents]]
            mac0 = "02:5a:46:00:01:00"
            [[agents]]
            mac0 = "02:5a:46:00:01:00"
        "#;
        assert!(ScenarioConfig::from_toml(text, "inline").is_err());
    }
}
