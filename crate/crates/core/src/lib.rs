//! System-level NB-IoT heterogeneous network simulator.
//!
//! The crate is layered bottom-up: [`radio`] (propagation, RSRP, coupling
//! loss, noise), [`power`] (uplink and downlink power rules), [`selection`]
//! (cell selection and coverage levels), [`architecture`] (topologies, their
//! constraints and the attach procedure), [`engine`] (seeded drops and
//! campaigns) and [`cli`] (config files, runs and output bundles).

pub mod architecture;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod power;
pub mod presets;
pub mod radio;
pub mod selection;

pub use architecture::{attach, validate_topology, ArchitectureKind, Topology};
pub use config::{apply_overrides, parse_config, serialize_config};
pub use engine::{run_campaign, run_drop, CampaignReport, MetricsReport, ScenarioConfig};
pub use error::{ConfigIssue, Error, Result};
pub use power::{npusch_tx_power, NpuschPowerParams};
pub use presets::{expand_preset, preset_config, PresetScenario};
pub use radio::{Cell, CellId, CellSpec};
pub use selection::{select_cell, SelectionPolicy};
