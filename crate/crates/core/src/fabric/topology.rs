use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Fabric, FabricError};

/// Physical parameters of one link.
///
/// `per_frame_overhead_s` is the sender-side cost of producing each frame
/// (packet creation on a host CPU); it only applies on endpoint access
/// links and occupies the sender before the frame reaches the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
    pub per_frame_overhead_s: f64,
    /// Independent per-traversal drop probability.
    pub loss: f64,
}

pub const TEN_GBPS: f64 = 10e9;
pub const DEFAULT_LATENCY_S: f64 = 1e-6;

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            bandwidth_bps: TEN_GBPS,
            latency_s: DEFAULT_LATENCY_S,
            per_frame_overhead_s: 0.0,
            loss: 0.0,
        }
    }
}

impl LinkParams {
    pub fn with_overhead(mut self, overhead_s: f64) -> Self {
        self.per_frame_overhead_s = overhead_s;
        self
    }

    pub fn with_loss(mut self, loss: f64) -> Self {
        self.loss = loss;
        self
    }

    /// Wire time of `bytes`, rounded up to whole nanoseconds.
    pub fn serialization(&self, bytes: usize) -> Duration {
        let ns = (bytes as f64 * 8.0 * 1e9 / self.bandwidth_bps).ceil();
        Duration::from_nanos(ns as u64)
    }

    pub fn latency(&self) -> Duration {
        Duration::from_nanos((self.latency_s * 1e9).round() as u64)
    }

    pub fn overhead(&self) -> Duration {
        Duration::from_nanos((self.per_frame_overhead_s * 1e9).round() as u64)
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        let ok = self.bandwidth_bps > 0.0
            && self.latency_s >= 0.0
            && self.per_frame_overhead_s >= 0.0
            && (0.0..=1.0).contains(&self.loss);
        if ok {
            Ok(())
        } else {
            Err(FabricError::InvalidLink(*self))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub id: u32,
    pub ports: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub switch: u32,
    pub port: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkSpec {
    pub a: PortRef,
    pub b: PortRef,
    #[serde(default)]
    pub link: Option<LinkParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub switches: Vec<SwitchSpec>,
    #[serde(default)]
    pub trunks: Vec<TrunkSpec>,
    /// Default for trunks and access links that do not override it.
    #[serde(default)]
    pub link: LinkParams,
}

impl TopologySpec {
    /// Two 12-port 10G switches joined by one trunk on port 11 of each.
    /// Switch 0 takes ten accelerators; switch 1 takes ten more plus the host.
    pub fn two_switch_testbed() -> Self {
        TopologySpec {
            switches: vec![SwitchSpec { id: 0, ports: 12 }, SwitchSpec { id: 1, ports: 12 }],
            trunks: vec![TrunkSpec {
                a: PortRef {
                    switch: 0,
                    port: 11,
                },
                b: PortRef {
                    switch: 1,
                    port: 11,
                },
                link: None,
            }],
            link: LinkParams::default(),
        }
    }

    pub fn single_switch(ports: usize) -> Self {
        TopologySpec {
            switches: vec![SwitchSpec { id: 0, ports }],
            trunks: Vec::new(),
            link: LinkParams::default(),
        }
    }

    pub fn port_count(&self) -> usize {
        self.switches.iter().map(|s| s.ports).sum()
    }

    pub fn build(&self, seed: u64) -> Result<Fabric, FabricError> {
        self.link.validate()?;
        let mut f = Fabric::new(seed);
        for s in &self.switches {
            f.add_switch(s.id, s.ports)?;
        }
        for t in &self.trunks {
            f.add_trunk(t.a, t.b, t.link.unwrap_or(self.link))?;
        }
        Ok(f)
    }
}
