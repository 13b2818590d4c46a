//! The host's view of discovered devices and their lifecycle.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::frame::{DiscoveryPayload, MacAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DeviceState {
    Discovered,
    Programmed,
    ArgsLoaded,
    Running,
    Done,
    Unreachable,
}

impl DeviceState {
    pub const ALL: [DeviceState; 6] = [
        DeviceState::Discovered,
        DeviceState::Programmed,
        DeviceState::ArgsLoaded,
        DeviceState::Running,
        DeviceState::Done,
        DeviceState::Unreachable,
    ];

    /// Whether the flow allows moving from `self` to `to`.
    ///
    /// The forward path is Discovered → Programmed → ArgsLoaded → Running →
    /// Done. A programmed device may be reprogrammed or given more
    /// arguments; a finished one may run again, take new arguments or be
    /// reprogrammed. Any state may time out to Unreachable, and only
    /// rediscovery leaves Unreachable.
    pub fn can_transition(self, to: DeviceState) -> bool {
        use DeviceState::*;
        matches!(
            (self, to),
            (_, Unreachable)
                | (Unreachable, Discovered)
                | (Discovered, Programmed)
                | (Programmed, Programmed | ArgsLoaded)
                | (ArgsLoaded, ArgsLoaded | Programmed | Running)
                | (Running, Done)
                | (Done, Running | ArgsLoaded | Programmed)
        )
    }

    pub fn is_programmed(self) -> bool {
        matches!(
            self,
            DeviceState::Programmed | DeviceState::ArgsLoaded | DeviceState::Done
        )
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("device {mac} is {from}, cannot become {to}")]
pub struct InvalidState {
    pub mac: MacAddress,
    pub from: DeviceState,
    pub to: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceEntry {
    pub identity: DiscoveryPayload,
    pub state: DeviceState,
    #[serde(serialize_with = "crate::report::duration_s")]
    pub last_seen: Duration,
    #[serde(serialize_with = "crate::report::hex32_opt")]
    pub pr_digest: Option<[u8; 32]>,
    pub discoveries: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeviceRegistry {
    entries: BTreeMap<MacAddress, DeviceEntry>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, mac: &MacAddress) -> Option<&DeviceEntry> {
        self.entries.get(mac)
    }

    pub fn state(&self, mac: &MacAddress) -> Option<DeviceState> {
        self.entries.get(mac).map(|e| e.state)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MacAddress, &DeviceEntry)> {
        self.entries.iter()
    }

    pub fn macs(&self) -> Vec<MacAddress> {
        self.entries.keys().copied().collect()
    }

    pub fn in_state(&self, state: DeviceState) -> Vec<MacAddress> {
        self.entries
            .iter()
            .filter(|(_, e)| e.state == state)
            .map(|(m, _)| *m)
            .collect()
    }

    /// Devices not marked unreachable.
    pub fn live(&self) -> Vec<MacAddress> {
        self.entries
            .iter()
            .filter(|(_, e)| e.state != DeviceState::Unreachable)
            .map(|(m, _)| *m)
            .collect()
    }

    /// Records a discovery announcement. Returns true for a device not seen
    /// before. A known device keeps its state unless it was unreachable.
    pub fn upsert(&mut self, identity: DiscoveryPayload, now: Duration) -> bool {
        match self.entries.get_mut(&identity.mac0) {
            Some(e) => {
                e.identity = identity;
                e.last_seen = now;
                e.discoveries += 1;
                if e.state == DeviceState::Unreachable {
                    e.state = DeviceState::Discovered;
                    e.pr_digest = None;
                }
                false
            }
            None => {
                self.entries.insert(
                    identity.mac0,
                    DeviceEntry {
                        identity,
                        state: DeviceState::Discovered,
                        last_seen: now,
                        pr_digest: None,
                        discoveries: 1,
                    },
                );
                true
            }
        }
    }

    pub fn touch(&mut self, mac: &MacAddress, now: Duration) {
        if let Some(e) = self.entries.get_mut(mac) {
            e.last_seen = e.last_seen.max(now);
        }
    }

    /// Checks that `to` is reachable from the device's current state.
    pub fn check(&self, mac: &MacAddress, to: DeviceState) -> Result<(), InvalidState> {
        let from = self.state(mac).unwrap_or(DeviceState::Unreachable);
        if self.entries.contains_key(mac) && from.can_transition(to) {
            Ok(())
        } else {
            Err(InvalidState { mac: *mac, from, to })
        }
    }

    pub fn transition(&mut self, mac: &MacAddress, to: DeviceState) -> Result<(), InvalidState> {
        self.check(mac, to)?;
        self.entries.get_mut(mac).unwrap().state = to;
        Ok(())
    }

    pub fn set_digest(&mut self, mac: &MacAddress, digest: [u8; 32]) {
        if let Some(e) = self.entries.get_mut(mac) {
            e.pr_digest = Some(digest);
        }
    }

    pub fn mark_unreachable(&mut self, mac: &MacAddress) {
        if let Some(e) = self.entries.get_mut(mac) {
            e.state = DeviceState::Unreachable;
        }
    }
}
