//! Uplink and downlink transmit-power rules.
//!
//! NPUSCH follows the open-loop rule
//! `min{P_CMAX, 10 log10(M) + P_O(j) + alpha(j) * PL}` for fewer than two
//! repetitions and transmits at `P_CMAX` otherwise. NPRACH mirrors the same
//! structure per coverage level.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::radio::{BaseStationClass, CarrierMode, CellSpec};
use crate::selection::CeLevel;

/// Boost available to wide-area cells running in-band or guard-band.
pub const DL_BOOST_DB: f64 = 6.0;

/// Bandwidth scaling factor for NPUSCH. Only the five legal values exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MFactor {
    Quarter,
    One,
    Three,
    Six,
    Twelve,
}

impl MFactor {
    pub const ALL: [MFactor; 5] = [
        MFactor::Quarter,
        MFactor::One,
        MFactor::Three,
        MFactor::Six,
        MFactor::Twelve,
    ];

    pub fn value(&self) -> f64 {
        match self {
            MFactor::Quarter => 0.25,
            MFactor::One => 1.0,
            MFactor::Three => 3.0,
            MFactor::Six => 6.0,
            MFactor::Twelve => 12.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.value() == v)
            .ok_or_else(|| {
                Error::InvalidInput(format!("M must be one of 1/4, 1, 3, 6, 12, got {v}"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SubcarrierSpacing {
    Khz3_75,
    Khz15,
}

impl SubcarrierSpacing {
    pub fn khz(&self) -> f64 {
        match self {
            SubcarrierSpacing::Khz3_75 => 3.75,
            SubcarrierSpacing::Khz15 => 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubcarrierAllocation {
    pub spacing: SubcarrierSpacing,
    pub num_subcarriers: u8,
}

impl SubcarrierAllocation {
    pub fn new(spacing: SubcarrierSpacing, num_subcarriers: u8) -> Result<Self> {
        let alloc = Self {
            spacing,
            num_subcarriers,
        };
        m_factor(&alloc)?;
        Ok(alloc)
    }
}

/// 3.75 kHz single-tone maps to 1/4; 15 kHz n-tone maps to n.
pub fn m_factor(alloc: &SubcarrierAllocation) -> Result<MFactor> {
    match (alloc.spacing, alloc.num_subcarriers) {
        (SubcarrierSpacing::Khz3_75, 1) => Ok(MFactor::Quarter),
        (SubcarrierSpacing::Khz15, 1) => Ok(MFactor::One),
        (SubcarrierSpacing::Khz15, 3) => Ok(MFactor::Three),
        (SubcarrierSpacing::Khz15, 6) => Ok(MFactor::Six),
        (SubcarrierSpacing::Khz15, 12) => Ok(MFactor::Twelve),
        (s, n) => Err(Error::InvalidInput(format!(
            "{n} subcarriers at {} kHz is not a valid allocation",
            s.khz()
        ))),
    }
}

/// Which open-loop parameter set applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PowerIndex {
    J1,
    J2,
}

impl PowerIndex {
    fn slot(&self) -> usize {
        match self {
            PowerIndex::J1 => 0,
            PowerIndex::J2 => 1,
        }
    }
}

/// All inputs of the NPUSCH power rule. Slot and serving cell are implied by
/// the call site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NpuschPowerParams {
    pub p_cmax_dbm: f64,
    /// `P_O_NPUSCH(j)` for j = 1, 2.
    pub p_o_npusch_dbm: [f64; 2],
    /// `alpha(j)` for j = 1, 2. The j = 2 entry is always 1.
    pub alpha: [f64; 2],
    pub m_npusch: MFactor,
    pub path_loss_db: f64,
    pub repetitions: u32,
    pub j: PowerIndex,
}

impl NpuschPowerParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.p_cmax_dbm,
            self.p_o_npusch_dbm[0],
            self.p_o_npusch_dbm[1],
            self.path_loss_db,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "NPUSCH power inputs must be finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha[0]) {
            return Err(Error::InvalidInput(format!(
                "alpha(1) must lie in [0, 1], got {}",
                self.alpha[0]
            )));
        }
        if self.alpha[1] != 1.0 {
            return Err(Error::InvalidInput(format!(
                "alpha(2) is fixed at 1, got {}",
                self.alpha[1]
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidInput("repetitions must be at least 1".into()));
        }
        Ok(())
    }

    pub fn p_o(&self) -> f64 {
        self.p_o_npusch_dbm[self.j.slot()]
    }

    pub fn alpha_j(&self) -> f64 {
        self.alpha[self.j.slot()]
    }
}

pub fn npusch_tx_power(p: &NpuschPowerParams) -> f64 {
    if p.repetitions >= 2 {
        return p.p_cmax_dbm;
    }
    let open_loop = 10.0 * p.m_npusch.value().log10() + p.p_o() + p.alpha_j() * p.path_loss_db;
    p.p_cmax_dbm.min(open_loop)
}

/// NPRACH power: open loop at CE0, full power once repetitions kick in.
pub fn nprach_tx_power(
    p_cmax_dbm: f64,
    preamble_rx_target_dbm: f64,
    path_loss_db: f64,
    level: CeLevel,
) -> f64 {
    match level {
        CeLevel::Ce0 => p_cmax_dbm.min(preamble_rx_target_dbm + path_loss_db),
        _ => p_cmax_dbm,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PCmaxPolicy {
    /// Use the small cell's configured limit.
    InterferenceSafe,
    /// Let the UE use its own maximum and rely on repetition less.
    CoverageFirst,
}

pub fn small_cell_p_cmax(
    ue_max_dbm: f64,
    cell_configured_dbm: f64,
    policy: PCmaxPolicy,
) -> Result<f64> {
    if cell_configured_dbm > ue_max_dbm {
        return Err(Error::config(
            "p_cmax_dbm",
            format!(
                "cell-configured {cell_configured_dbm} dBm exceeds UE maximum {ue_max_dbm} dBm"
            ),
        ));
    }
    Ok(match policy {
        PCmaxPolicy::InterferenceSafe => cell_configured_dbm,
        PCmaxPolicy::CoverageFirst => ue_max_dbm,
    })
}

/// P_CMAX for a UE served by `cell`: the UE maximum unless the cell configures a limit.
pub fn p_cmax_for(ue_max_dbm: f64, cell: &CellSpec, policy: PCmaxPolicy) -> Result<f64> {
    match cell.p_cmax_dbm {
        Some(configured) => small_cell_p_cmax(ue_max_dbm, configured, policy),
        None => Ok(ue_max_dbm),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DlPowerPolicy {
    pub per_re_power_dbm: f64,
    /// Requested boost, 0 or 6 dB.
    pub boost_db: f64,
}

/// Whether a cell is allowed to apply the in-band/guard-band boost.
pub fn boost_allowed(class: BaseStationClass, mode: CarrierMode) -> bool {
    class == BaseStationClass::WideArea && mode != CarrierMode::Standalone
}

/// DL power per resource element after any permitted boost.
pub fn dl_re_power(cell: &CellSpec, policy: &DlPowerPolicy) -> Result<f64> {
    if policy.boost_db != 0.0 && policy.boost_db != DL_BOOST_DB {
        return Err(Error::config(
            "dl_boost_db",
            format!(
                "boost must be 0 or {DL_BOOST_DB} dB, got {}",
                policy.boost_db
            ),
        ));
    }
    let boost = if boost_allowed(cell.class, cell.mode) {
        policy.boost_db
    } else {
        0.0
    };
    let power = policy.per_re_power_dbm + boost;
    if let Some(cap) = cell.class.max_output_power_dbm() {
        if power > cap {
            return Err(Error::config(
                format!("cell.{}.nrs_power_dbm", cell.id),
                format!(
                    "DL power {power} dBm exceeds the {} class cap of {cap} dBm",
                    cell.class.name()
                ),
            ));
        }
    }
    Ok(power)
}

/// Uplift for CSG members, growing with interference over thermal up to `cap_db`.
pub fn csg_power_uplift(iot_db: f64, cap_db: f64) -> f64 {
    iot_db.max(0.0).min(cap_db)
}
