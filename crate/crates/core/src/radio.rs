//! Geometry, propagation and link-level quantities.
//!
//! Everything here is a pure function of its arguments. Powers are in dBm,
//! losses and gains in dB/dBi, distances in meters unless a name says
//! otherwise.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::power::{dl_re_power, DlPowerPolicy};

/// NB-IoT carrier bandwidth, identical for every operation mode.
pub const NB_IOT_BANDWIDTH_HZ: f64 = 180_000.0;

/// Thermal noise density at room temperature.
pub const THERMAL_NOISE_DENSITY_DBM_PER_HZ: f64 = -174.0;

/// Distances below this are clamped before evaluating a log-distance model.
pub const MIN_DISTANCE_M: f64 = 10.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_to(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Base-station class with its minimum coupling loss and output power cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BaseStationClass {
    WideArea,
    MediumRange,
    LocalArea,
    Home { antenna_ports: u8 },
}

impl BaseStationClass {
    pub const HOME_ANTENNA_PORTS: [u8; 4] = [1, 2, 4, 8];

    /// `None` means the class has no coupling-loss floor.
    pub fn min_coupling_loss_db(&self) -> Option<f64> {
        match self {
            BaseStationClass::WideArea => Some(70.0),
            BaseStationClass::MediumRange => Some(53.0),
            BaseStationClass::LocalArea => Some(45.0),
            BaseStationClass::Home { .. } => None,
        }
    }

    /// `None` means unbounded.
    pub fn max_output_power_dbm(&self) -> Option<f64> {
        match self {
            BaseStationClass::WideArea => None,
            BaseStationClass::MediumRange => Some(38.0),
            BaseStationClass::LocalArea => Some(24.0),
            BaseStationClass::Home { antenna_ports } => match antenna_ports {
                1 => Some(20.0),
                2 => Some(17.0),
                4 => Some(14.0),
                8 => Some(11.0),
                _ => None,
            },
        }
    }

    pub fn is_small_cell(&self) -> bool {
        !matches!(self, BaseStationClass::WideArea)
    }

    pub fn is_valid(&self) -> bool {
        match self {
            BaseStationClass::Home { antenna_ports } => {
                Self::HOME_ANTENNA_PORTS.contains(antenna_ports)
            }
            _ => true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseStationClass::WideArea => "wide_area",
            BaseStationClass::MediumRange => "medium_range",
            BaseStationClass::LocalArea => "local_area",
            BaseStationClass::Home { .. } => "home",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CarrierMode {
    Standalone,
    InBand,
    GuardBand,
}

impl CarrierMode {
    /// Always 180 kHz; the mode only changes where the carrier sits.
    pub fn bandwidth_hz(&self) -> f64 {
        NB_IOT_BANDWIDTH_HZ
    }

    pub fn name(&self) -> &'static str {
        match self {
            CarrierMode::Standalone => "standalone",
            CarrierMode::InBand => "in_band",
            CarrierMode::GuardBand => "guard_band",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CellRole {
    Anchor,
    NonAnchor,
}

impl CellRole {
    pub fn name(&self) -> &'static str {
        match self {
            CellRole::Anchor => "anchor",
            CellRole::NonAnchor => "non_anchor",
        }
    }
}

/// Log-distance model `PL = intercept + slope * log10(d_km)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropagationModel {
    pub intercept_db: f64,
    pub slope_db: f64,
}

impl PropagationModel {
    pub const MACRO: PropagationModel = PropagationModel {
        intercept_db: 128.1,
        slope_db: 37.6,
    };
    pub const SMALL_CELL: PropagationModel = PropagationModel {
        intercept_db: 140.7,
        slope_db: 36.7,
    };

    pub fn default_for(class: BaseStationClass) -> Self {
        if class.is_small_cell() {
            Self::SMALL_CELL
        } else {
            Self::MACRO
        }
    }

    /// Loss at a distance in meters, clamped to [`MIN_DISTANCE_M`].
    pub fn loss_at(&self, distance_m: f64) -> f64 {
        let d_km = distance_m.max(MIN_DISTANCE_M) / 1000.0;
        self.intercept_db + self.slope_db * d_km.log10()
    }
}

pub fn path_loss(model: &PropagationModel, tx: &Position, rx: &Position) -> f64 {
    model.loss_at(tx.distance_to(rx))
}

/// Plain description of a base station. Turned into a [`Cell`] by
/// [`Cell::new`], which enforces the class power cap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSpec {
    pub id: CellId,
    pub class: BaseStationClass,
    pub position: Position,
    /// NRS power per resource element.
    pub nrs_power_dbm: f64,
    /// Requested DL power boost, 0 or 6 dB.
    pub dl_boost_db: f64,
    pub antenna_gain_dbi: f64,
    pub mode: CarrierMode,
    pub frequency_index: u32,
    pub role: CellRole,
    pub cell_identity: u32,
    pub anchor_prb: Option<u32>,
    pub non_anchor_prbs: Vec<u32>,
    pub propagation: PropagationModel,
    /// Threshold broadcast for non-anchor selection (Arch2). `None` = always eligible.
    pub selection_threshold_dbm: Option<f64>,
    /// Serving-cell configured UE power limit. `None` = UE maximum.
    pub p_cmax_dbm: Option<f64>,
}

impl CellSpec {
    /// A macro anchor cell with otherwise neutral defaults.
    pub fn new(id: u32, class: BaseStationClass, position: Position) -> Self {
        Self {
            id: CellId(id),
            class,
            position,
            nrs_power_dbm: 0.0,
            dl_boost_db: 0.0,
            antenna_gain_dbi: 0.0,
            mode: CarrierMode::Standalone,
            frequency_index: 0,
            role: CellRole::Anchor,
            cell_identity: id,
            anchor_prb: Some(0),
            non_anchor_prbs: Vec::new(),
            propagation: PropagationModel::default_for(class),
            selection_threshold_dbm: None,
            p_cmax_dbm: None,
        }
    }

    pub fn dl_policy(&self) -> DlPowerPolicy {
        DlPowerPolicy {
            per_re_power_dbm: self.nrs_power_dbm,
            boost_db: self.dl_boost_db,
        }
    }
}

/// A validated base station. Dereferences to its [`CellSpec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Cell(CellSpec);

impl Cell {
    pub fn new(spec: CellSpec) -> Result<Self> {
        let id = spec.id;
        let bad = |reason: String| Err(Error::InvalidInput(format!("cell {id}: {reason}")));
        if !spec.class.is_valid() {
            return bad("home class needs 1, 2, 4 or 8 antenna ports".into());
        }
        if !spec.position.is_finite() {
            return bad("position must be finite".into());
        }
        for (name, v) in [
            ("nrs_power_dbm", spec.nrs_power_dbm),
            ("antenna_gain_dbi", spec.antenna_gain_dbi),
            ("propagation.intercept_db", spec.propagation.intercept_db),
            ("propagation.slope_db", spec.propagation.slope_db),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if spec.dl_boost_db != 0.0 && spec.dl_boost_db != 6.0 {
            return bad(format!(
                "dl_boost_db must be 0 or 6, got {}",
                spec.dl_boost_db
            ));
        }
        match (spec.role, spec.anchor_prb) {
            (CellRole::Anchor, None) => return bad("anchor role requires an anchor PRB".into()),
            (CellRole::NonAnchor, Some(_)) => {
                return bad("non-anchor role must not carry an anchor PRB".into())
            }
            _ => {}
        }
        if let Some(t) = spec.selection_threshold_dbm {
            if t.is_nan() {
                return bad("selection_threshold_dbm must be a number".into());
            }
        }
        if let Some(p) = spec.p_cmax_dbm {
            if !p.is_finite() {
                return bad("p_cmax_dbm must be finite".into());
            }
        }
        // Rejects DL power above the class cap.
        dl_re_power(&spec, &spec.dl_policy())?;
        Ok(Cell(spec))
    }

    pub fn spec(&self) -> &CellSpec {
        &self.0
    }

    pub fn into_spec(self) -> CellSpec {
        self.0
    }

    pub fn is_small_cell(&self) -> bool {
        self.0.class.is_small_cell()
    }
}

impl std::ops::Deref for Cell {
    type Target = CellSpec;

    fn deref(&self) -> &CellSpec {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct UeId(pub u32);

impl fmt::Display for UeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A device placed in a drop.
#[derive(Debug, Clone, PartialEq)]
pub struct Ue {
    pub id: UeId,
    pub position: Position,
    pub max_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    /// Member of the closed subscriber group of any CSG femto cell.
    pub csg_member: bool,
    /// Log-normal shadowing per cell, in topology order. Empty means none.
    pub shadowing_db: Vec<f64>,
}

impl Ue {
    pub fn new(id: u32, position: Position) -> Self {
        Self {
            id: UeId(id),
            position,
            max_power_dbm: 23.0,
            antenna_gain_dbi: 0.0,
            csg_member: false,
            shadowing_db: Vec::new(),
        }
    }

    pub fn shadowing_towards(&self, cell_index: usize) -> f64 {
        self.shadowing_db.get(cell_index).copied().unwrap_or(0.0)
    }
}

/// Per (UE, cell) link quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkMeasure {
    pub path_loss_db: f64,
    pub coupling_loss_db: f64,
    pub rsrp_dbm: f64,
}

/// RSRP for a known path loss.
pub fn rsrp_from_path_loss(nrs_power_dbm: f64, antenna_gain_dbi: f64, path_loss_db: f64) -> f64 {
    nrs_power_dbm + antenna_gain_dbi - path_loss_db
}

pub fn rsrp(cell: &CellSpec, ue_pos: &Position, model: &PropagationModel) -> f64 {
    rsrp_from_path_loss(
        cell.nrs_power_dbm,
        cell.antenna_gain_dbi,
        path_loss(model, &cell.position, ue_pos),
    )
}

/// Applies the class minimum-coupling-loss floor to a raw coupling loss.
pub fn clamp_coupling_loss(class: BaseStationClass, raw_db: f64) -> f64 {
    match class.min_coupling_loss_db() {
        Some(floor) => raw_db.max(floor),
        None => raw_db,
    }
}

pub fn coupling_loss_from_path_loss(
    class: BaseStationClass,
    path_loss_db: f64,
    tx_gain_dbi: f64,
    ue_ant_gain_dbi: f64,
) -> f64 {
    clamp_coupling_loss(class, path_loss_db - tx_gain_dbi - ue_ant_gain_dbi)
}

pub fn coupling_loss(
    cell: &CellSpec,
    ue_pos: &Position,
    ue_ant_gain_dbi: f64,
    model: &PropagationModel,
) -> f64 {
    coupling_loss_from_path_loss(
        cell.class,
        path_loss(model, &cell.position, ue_pos),
        cell.antenna_gain_dbi,
        ue_ant_gain_dbi,
    )
}

/// Johnson-Nyquist noise power over a bandwidth, noise figure excluded.
pub fn thermal_noise_dbm(bandwidth_hz: f64) -> Result<f64> {
    if bandwidth_hz.is_nan() || bandwidth_hz <= 0.0 || !bandwidth_hz.is_finite() {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth_hz} Hz"
        )));
    }
    Ok(THERMAL_NOISE_DENSITY_DBM_PER_HZ + linear_to_db(bandwidth_hz))
}

/// A received uplink power at some cell, tagged with its carrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interferer {
    pub frequency_index: u32,
    pub rx_power_dbm: f64,
}

/// Uplink SINR at `serving`. Only interferers on the serving carrier count.
pub fn ul_sinr_db(
    serving: &CellSpec,
    signal_dbm: f64,
    interferers: &[Interferer],
    bandwidth_hz: f64,
) -> Result<f64> {
    if !signal_dbm.is_finite() || interferers.iter().any(|i| !i.rx_power_dbm.is_finite()) {
        return Err(Error::InvalidInput("received powers must be finite".into()));
    }
    let noise_mw = db_to_linear(thermal_noise_dbm(bandwidth_hz)?);
    let interference_mw: f64 = interferers
        .iter()
        .filter(|i| i.frequency_index == serving.frequency_index)
        .map(|i| db_to_linear(i.rx_power_dbm))
        .sum();
    Ok(signal_dbm - linear_to_db(interference_mw + noise_mw))
}
