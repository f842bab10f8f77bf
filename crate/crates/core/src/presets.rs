//! Ready-made scenarios.
//!
//! Geometry is not given by the deployments these mirror; the distances here
//! are defaults and every field can be overridden through its config path.

use std::fmt;
use std::str::FromStr;

use crate::architecture::{ArchitectureKind, Topology};
use crate::config::apply_overrides;
use crate::engine::{
    DropRegion, FixedUe, Flags, PowerConfig, RachConfig, RadioConfig, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::radio::{BaseStationClass, Cell, CellSpec, Position};
use crate::selection::{ClassOffsets, CoverageThresholds, SelectionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PresetScenario {
    /// Pico 200 m from the macro, UEs in the band between them, camped on the
    /// pico through a class offset.
    Fig3a,
    /// CSG femto 800 m out in a 1 km macro cell with a macro-edge interferer.
    Fig3b,
    /// A single macro.
    Homogeneous,
    /// Macro plus two picos with DL/UL decoupling.
    DecoupledDemo,
}

impl PresetScenario {
    pub const ALL: [PresetScenario; 4] = [
        PresetScenario::Fig3a,
        PresetScenario::Fig3b,
        PresetScenario::Homogeneous,
        PresetScenario::DecoupledDemo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PresetScenario::Fig3a => "fig3a",
            PresetScenario::Fig3b => "fig3b",
            PresetScenario::Homogeneous => "homogeneous",
            PresetScenario::DecoupledDemo => "decoupled-demo",
        }
    }
}

impl fmt::Display for PresetScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PresetScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                Error::config(
                    "preset",
                    format!("unknown preset {s:?}, expected one of {}", known.join(", ")),
                )
            })
    }
}

pub const DEFAULT_SEED: u64 = 42;

fn macro_cell(id: u32, position: Position) -> CellSpec {
    let mut c = CellSpec::new(id, BaseStationClass::WideArea, position);
    c.nrs_power_dbm = 32.0;
    c.antenna_gain_dbi = 15.0;
    c
}

fn pico_cell(id: u32, position: Position) -> CellSpec {
    let mut c = CellSpec::new(id, BaseStationClass::LocalArea, position);
    c.nrs_power_dbm = 18.0;
    c.antenna_gain_dbi = 5.0;
    c
}

fn femto_cell(id: u32, position: Position) -> CellSpec {
    let mut c = CellSpec::new(id, BaseStationClass::Home { antenna_ports: 1 }, position);
    c.nrs_power_dbm = 10.0;
    c
}

/// Arch1 topology where every cell is complete.
fn arch1(specs: Vec<CellSpec>) -> Topology {
    let cells: Vec<Cell> = specs
        .into_iter()
        .map(|s| Cell::new(s).expect("preset cells respect the class caps"))
        .collect();
    let mut t = Topology::new(ArchitectureKind::Arch1, cells);
    for c in &t.cells.clone() {
        t.s1.insert(c.id);
        t.broadcast.insert(c.id);
        t.prach.insert(c.id);
    }
    t
}

fn base(
    name: &str,
    topology: Topology,
    region: DropRegion,
    policy: SelectionPolicy,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        seed: DEFAULT_SEED,
        drops: 10,
        ue_count: 50,
        topology,
        region,
        dropped_ues_csg_members: false,
        fixed_ues: Vec::new(),
        policy,
        radio: RadioConfig::default(),
        power: PowerConfig::default(),
        coverage: CoverageThresholds::default(),
        rach: RachConfig::default(),
        flags: Flags::default(),
    }
}

/// The preset without overrides.
pub fn preset_config(p: PresetScenario) -> ScenarioConfig {
    match p {
        PresetScenario::Fig3a => base(
            p.name(),
            arch1(vec![
                macro_cell(1, Position::ORIGIN),
                pico_cell(2, Position::new(200.0, 0.0)),
            ]),
            DropRegion::UniformDisc {
                center: Position::new(100.0, 0.0),
                radius_m: 100.0,
            },
            SelectionPolicy::ClassThresholds {
                offsets: ClassOffsets {
                    local_area_db: 30.0,
                    ..ClassOffsets::default()
                },
            },
        ),
        PresetScenario::Fig3b => {
            let mut c = base(
                p.name(),
                arch1(vec![
                    macro_cell(1, Position::ORIGIN),
                    femto_cell(2, Position::new(800.0, 0.0)),
                ]),
                DropRegion::Hotspot {
                    cell: crate::radio::CellId(2),
                    radius_m: 30.0,
                },
                SelectionPolicy::PathLossBased,
            );
            c.ue_count = 10;
            c.dropped_ues_csg_members = true;
            c.fixed_ues.push(FixedUe {
                position: Position::new(1000.0, 0.0),
                csg_member: false,
            });
            c.flags.csg_mode = true;
            c
        }
        PresetScenario::Homogeneous => base(
            p.name(),
            arch1(vec![macro_cell(1, Position::ORIGIN)]),
            DropRegion::UniformDisc {
                center: Position::ORIGIN,
                radius_m: 1000.0,
            },
            SelectionPolicy::RsrpOnly,
        ),
        PresetScenario::DecoupledDemo => {
            let mut c = base(
                p.name(),
                arch1(vec![
                    macro_cell(1, Position::ORIGIN),
                    pico_cell(2, Position::new(400.0, 0.0)),
                    pico_cell(3, Position::new(-300.0, 300.0)),
                ]),
                DropRegion::UniformDisc {
                    center: Position::ORIGIN,
                    radius_m: 1000.0,
                },
                SelectionPolicy::Decoupled,
            );
            c.flags.decoupled = true;
            c
        }
    }
}

/// Expands a preset and applies `key = value` overrides on config paths.
pub fn expand_preset(p: PresetScenario, overrides: &[(String, String)]) -> Result<ScenarioConfig> {
    let config = preset_config(p);
    let config = if overrides.is_empty() {
        config
    } else {
        apply_overrides(&config, overrides)?
    };
    config.validate()?;
    Ok(config)
}
