//! Network-attached standalone accelerators over raw Ethernet.
//!
//! - [`frame`]: bit-exact codec for the eight protocol frame types.
//! - [`agent`]: an emulated accelerator shell (packet analyzer, FIFOs,
//!   partial-reconfiguration engine, DDR model, kernel slots).
//! - [`fabric`]: a deterministic discrete-event switch fabric with hot-plug,
//!   plus a raw-socket adapter for real interfaces.
//! - [`host`]: the remote host orchestrator (discovery, broadcast
//!   programming, argument transfer, execution, output collection).
//! - [`models`]: closed-form reconfiguration-time, setup-cost and
//!   on-demand-scaling models.
//! - [`cli`]: the `safnet` command line.

pub mod agent;
pub mod cli;
pub mod fabric;
pub mod frame;
pub mod host;
pub mod interval;
pub mod models;
pub mod report;
pub mod scenario;
pub mod time;
pub mod transport;

pub use frame::{Frame, MacAddress, SafEtherType};
pub use time::SimTime;
