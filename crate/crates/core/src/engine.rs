//! Drop-based Monte-Carlo engine.
//!
//! A drop places UEs, attaches each one, sets its NPUSCH power and sums the
//! uplink power it leaks into every co-channel cell that does not serve it.
//! Drop `d` of a scenario with seed `s` always draws from ChaCha8 stream `d`
//! of seed `s`, so drops can run in any order and on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::architecture::{
    attach, validate_topology, ArchitectureKind, AttachParams, FailureReason, Msg4Decision,
    Topology, TraceEvent, UeAttachState,
};
use crate::error::{ConfigIssue, Error, Result};
use crate::power::{
    csg_power_uplift, m_factor, npusch_tx_power, p_cmax_for, NpuschPowerParams, PCmaxPolicy,
    PowerIndex, SubcarrierAllocation, SubcarrierSpacing,
};
use crate::radio::{
    db_to_linear, linear_to_db, thermal_noise_dbm, BaseStationClass, CellId, Position, Ue, UeId,
    NB_IOT_BANDWIDTH_HZ,
};
use crate::selection::{CeLevel, CoverageThresholds, SelectionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DropRegion {
    UniformDisc {
        center: Position,
        radius_m: f64,
    },
    /// Uniform disc around a cell's position.
    Hotspot {
        cell: CellId,
        radius_m: f64,
    },
}

/// A UE placed by hand in every drop, after the random ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedUe {
    pub position: Position,
    pub csg_member: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadioConfig {
    pub ue_antenna_gain_dbi: f64,
    /// Log-normal shadowing standard deviation; 0 disables it.
    pub shadowing_sigma_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            ue_antenna_gain_dbi: 0.0,
            shadowing_sigma_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerConfig {
    pub ue_max_dbm: f64,
    pub p_o_npusch_dbm: [f64; 2],
    pub alpha: [f64; 2],
    pub j: PowerIndex,
    pub allocation: SubcarrierAllocation,
    pub p_cmax_policy: PCmaxPolicy,
    pub preamble_rx_target_dbm: f64,
    pub csg_uplift_cap_db: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            ue_max_dbm: 23.0,
            p_o_npusch_dbm: [-90.0, -90.0],
            alpha: [1.0, 1.0],
            j: PowerIndex::J1,
            allocation: SubcarrierAllocation {
                spacing: SubcarrierSpacing::Khz15,
                num_subcarriers: 1,
            },
            p_cmax_policy: PCmaxPolicy::InterferenceSafe,
            preamble_rx_target_dbm: -110.0,
            csg_uplift_cap_db: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RachConfig {
    pub max_attempts: u32,
    pub preamble_detection_snr_db: f64,
    pub msg4_redirect_snr_db: f64,
    /// Reported only; X2 transfers are not simulated in time.
    pub x2_latency_ms: f64,
}

impl Default for RachConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            preamble_detection_snr_db: 0.0,
            msg4_redirect_snr_db: 0.0,
            x2_latency_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Flags {
    /// Run the open loop on the smallest co-channel path loss instead of the serving one.
    pub protect_macro_ul: bool,
    /// Home cells serve CSG members only; members get an interference-driven uplift.
    pub csg_mode: bool,
    pub decoupled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub drops: u32,
    pub ue_count: u32,
    pub topology: Topology,
    pub region: DropRegion,
    /// Whether randomly dropped UEs belong to the CSG.
    pub dropped_ues_csg_members: bool,
    pub fixed_ues: Vec<FixedUe>,
    pub policy: SelectionPolicy,
    pub radio: RadioConfig,
    pub power: PowerConfig,
    pub coverage: CoverageThresholds,
    pub rach: RachConfig,
    pub flags: Flags,
}

impl ScenarioConfig {
    /// Every invariant breach, each with its field path.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |path: &str, reason: String| issues.push(ConfigIssue::new(path, reason));

        if self.drops == 0 {
            push("drops", "must be at least 1".into());
        }
        if self.ue_count == 0 {
            push("ue_count", "must be at least 1".into());
        }
        match self.region {
            DropRegion::UniformDisc { center, radius_m } => {
                if !center.is_finite() {
                    push("region.center", "must be finite".into());
                }
                if !(radius_m >= 0.0 && radius_m.is_finite()) {
                    push("region.radius_m", "must be finite and nonnegative".into());
                }
            }
            DropRegion::Hotspot { cell, radius_m } => {
                if self.topology.cell(cell).is_none() {
                    push("region.cell", format!("cell {cell} does not exist"));
                }
                if !(radius_m >= 0.0 && radius_m.is_finite()) {
                    push("region.radius_m", "must be finite and nonnegative".into());
                }
            }
        }
        for (i, f) in self.fixed_ues.iter().enumerate() {
            if !f.position.is_finite() {
                push(&format!("fixed_ue.{i}"), "position must be finite".into());
            }
        }
        match self.policy {
            SelectionPolicy::Hybrid {
                normal_coverage_rsrp_threshold_dbm: t,
            } if !t.is_finite() => push("selection.hybrid_threshold_dbm", "must be finite".into()),
            SelectionPolicy::ClassThresholds { offsets } => {
                let all = [
                    offsets.wide_area_db,
                    offsets.medium_range_db,
                    offsets.local_area_db,
                    offsets.home_db,
                ];
                if all.iter().any(|v| !v.is_finite()) {
                    push("selection.offsets", "must be finite".into());
                }
            }
            _ => {}
        }
        let r = &self.radio;
        if !r.ue_antenna_gain_dbi.is_finite() {
            push("radio.ue_antenna_gain_dbi", "must be finite".into());
        }
        if !(r.shadowing_sigma_db >= 0.0 && r.shadowing_sigma_db.is_finite()) {
            push(
                "radio.shadowing_sigma_db",
                "must be finite and nonnegative".into(),
            );
        }
        let p = &self.power;
        if !p.ue_max_dbm.is_finite() {
            push("power.ue_max_dbm", "must be finite".into());
        }
        if let Err(e) = m_factor(&p.allocation) {
            push("power.num_subcarriers", e.to_string());
        }
        let template = NpuschPowerParams {
            p_cmax_dbm: p.ue_max_dbm,
            p_o_npusch_dbm: p.p_o_npusch_dbm,
            alpha: p.alpha,
            m_npusch: crate::power::MFactor::One,
            path_loss_db: 0.0,
            repetitions: 1,
            j: p.j,
        };
        if let Err(e) = template.validate() {
            push("power", e.to_string());
        }
        if !p.preamble_rx_target_dbm.is_finite() {
            push("power.preamble_rx_target_dbm", "must be finite".into());
        }
        if !(p.csg_uplift_cap_db >= 0.0 && p.csg_uplift_cap_db.is_finite()) {
            push(
                "power.csg_uplift_cap_db",
                "must be finite and nonnegative".into(),
            );
        }
        for c in &self.topology.cells {
            if let Some(v) = c.p_cmax_dbm {
                if v > p.ue_max_dbm {
                    push(
                        &format!("cell.{}.p_cmax_dbm", c.id),
                        format!("{v} dBm exceeds the UE maximum of {} dBm", p.ue_max_dbm),
                    );
                }
            }
        }
        if let Err(Error::Config(v)) = self.coverage.validate() {
            issues.extend(v);
        }
        let mut push = |path: &str, reason: String| issues.push(ConfigIssue::new(path, reason));
        if self.rach.max_attempts == 0 {
            push("rach.max_attempts", "must be at least 1".into());
        }
        for (path, v) in [
            (
                "rach.preamble_detection_snr_db",
                self.rach.preamble_detection_snr_db,
            ),
            ("rach.msg4_redirect_snr_db", self.rach.msg4_redirect_snr_db),
            ("rach.x2_latency_ms", self.rach.x2_latency_ms),
        ] {
            if !v.is_finite() {
                push(path, "must be finite".into());
            }
        }
        if let Err(violations) = validate_topology(&self.topology) {
            for v in violations {
                push("topology", v.to_string());
            }
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn attach_params(&self) -> AttachParams {
        AttachParams {
            coverage: self.coverage,
            max_attempts: self.rach.max_attempts,
            preamble_rx_target_dbm: self.power.preamble_rx_target_dbm,
            preamble_detection_snr_db: self.rach.preamble_detection_snr_db,
            msg4_redirect_snr_db: self.rach.msg4_redirect_snr_db,
            p_cmax_policy: self.power.p_cmax_policy,
            csg_mode: self.flags.csg_mode,
            decoupled: self.flags.decoupled,
        }
    }

    fn region_center_radius(&self) -> (Position, f64) {
        match self.region {
            DropRegion::UniformDisc { center, radius_m } => (center, radius_m),
            DropRegion::Hotspot { cell, radius_m } => (
                self.topology
                    .cell(cell)
                    .map(|c| c.position)
                    .unwrap_or(Position::ORIGIN),
                radius_m,
            ),
        }
    }
}

/// The generator for one drop.
pub fn drop_rng(seed: u64, drop_index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(drop_index));
    rng
}

fn sample_positions<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<Position> {
    let (center, radius) = config.region_center_radius();
    (0..config.ue_count)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            Position::new(center.x + r * theta.cos(), center.y + r * theta.sin())
        })
        .collect()
}

/// Positions of the randomly dropped UEs of one drop.
pub fn drop_ues(config: &ScenarioConfig, drop_index: u32) -> Vec<Position> {
    sample_positions(config, &mut drop_rng(config.seed, drop_index))
}

fn build_ues<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<Ue> {
    let dropped = sample_positions(config, rng)
        .into_iter()
        .map(|p| (p, config.dropped_ues_csg_members));
    let fixed = config.fixed_ues.iter().map(|f| (f.position, f.csg_member));
    let mut ues: Vec<Ue> = dropped
        .chain(fixed)
        .enumerate()
        .map(|(i, (position, csg_member))| Ue {
            id: UeId(i as u32),
            position,
            max_power_dbm: config.power.ue_max_dbm,
            antenna_gain_dbi: config.radio.ue_antenna_gain_dbi,
            csg_member,
            shadowing_db: Vec::new(),
        })
        .collect();
    let sigma = config.radio.shadowing_sigma_db;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        let n = config.topology.cells.len();
        for ue in &mut ues {
            ue.shadowing_db = (0..n).map(|_| normal.sample(rng)).collect();
        }
    }
    ues
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachOutcome {
    Connected,
    OutOfCoverage,
    RachFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeMetrics {
    pub ue_id: UeId,
    pub x: f64,
    pub y: f64,
    pub csg_member: bool,
    pub outcome: AttachOutcome,
    pub dl_cell: Option<CellId>,
    pub ul_cell: Option<CellId>,
    pub ce_level: CeLevel,
    pub reps: Option<u32>,
    /// Smallest coupling loss over the cells this UE may use.
    pub best_coupling_loss_db: f64,
    pub tx_power_dbm: Option<f64>,
    /// repetitions x linear tx power x 1 ms, in mJ.
    pub energy_proxy_mj: Option<f64>,
    pub redirected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub cell_id: CellId,
    /// `None` when no UE leaks power into this cell.
    pub iot_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DropSummary {
    pub drop_index: u32,
    pub ue_count: u32,
    pub coverage_probability: f64,
    pub connected_fraction: f64,
    pub mean_tx_power_dbm: Option<f64>,
    pub mean_energy_proxy_mj: Option<f64>,
    /// Arch3 only: redirected UEs over connected UEs.
    pub redirect_rate: Option<f64>,
    pub x2_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub summary: DropSummary,
    pub ues: Vec<UeMetrics>,
    pub cells: Vec<CellMetrics>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl MetricsReport {
    pub fn iot_db(&self, cell: CellId) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.cell_id == cell)
            .and_then(|c| c.iot_db)
    }
}

/// One UE's uplink transmission as seen by every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkTx {
    pub serving: CellId,
    pub tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    /// Path loss towards each cell, in topology order.
    pub path_loss_db: Vec<f64>,
}

/// Linear interference (mW) landing in each cell, in topology order, and
/// whether anything landed there at all.
pub fn uplink_interference(t: &Topology, txs: &[UplinkTx]) -> Vec<Option<f64>> {
    let mut acc: Vec<Option<f64>> = vec![None; t.cells.len()];
    for tx in txs {
        let Some(serving) = t.cell(tx.serving) else {
            continue;
        };
        for (i, cell) in t.cells.iter().enumerate() {
            if cell.id == tx.serving || cell.frequency_index != serving.frequency_index {
                continue;
            }
            let rx =
                tx.tx_power_dbm + tx.antenna_gain_dbi + cell.antenna_gain_dbi - tx.path_loss_db[i];
            *acc[i].get_or_insert(0.0) += db_to_linear(rx);
        }
    }
    acc
}

fn iot_from(interference_mw: &[Option<f64>]) -> Vec<Option<f64>> {
    let noise = thermal_noise_dbm(NB_IOT_BANDWIDTH_HZ).expect("positive bandwidth");
    interference_mw
        .iter()
        .map(|i| i.map(|mw| linear_to_db(mw) - noise))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs one drop after validating the configuration.
pub fn run_drop(config: &ScenarioConfig, drop_index: u32) -> Result<MetricsReport> {
    config.validate()?;
    run_drop_validated(config, drop_index)
}

fn run_drop_validated(config: &ScenarioConfig, drop_index: u32) -> Result<MetricsReport> {
    let t = &config.topology;
    let mut rng = drop_rng(config.seed, drop_index);
    let ues = build_ues(config, &mut rng);
    let params = config.attach_params();
    let m = m_factor(&config.power.allocation)?;
    let mcl = config.coverage.mcl_db();
    let is_closed = |class: BaseStationClass| {
        config.flags.csg_mode && matches!(class, BaseStationClass::Home { .. })
    };

    let mut rows = Vec::with_capacity(ues.len());
    let mut txs: Vec<Option<UplinkTx>> = Vec::with_capacity(ues.len());
    let mut trace = Vec::new();
    for ue in &ues {
        let result = attach(ue, t, &config.policy, &params, &mut rng)?;
        let best_cl = result
            .measures
            .iter()
            .filter(|m| ue.csg_member || !is_closed(m.class))
            .map(|m| m.link.coupling_loss_db)
            .fold(f64::INFINITY, f64::min);

        let mut row = UeMetrics {
            ue_id: ue.id,
            x: ue.position.x,
            y: ue.position.y,
            csg_member: ue.csg_member,
            outcome: AttachOutcome::OutOfCoverage,
            dl_cell: None,
            ul_cell: None,
            ce_level: CeLevel::OutOfCoverage,
            reps: None,
            best_coupling_loss_db: best_cl,
            tx_power_dbm: None,
            energy_proxy_mj: None,
            redirected: result
                .redirect
                .map(|d| d == Msg4Decision::RedirectToSmallCell),
        };
        let mut tx = None;
        match result.state {
            UeAttachState::Connected {
                association,
                coverage,
            } => {
                let ul_idx = t
                    .index_of(association.ul_cell)
                    .expect("UL cell in topology");
                let ul_cell = &t.cells[ul_idx];
                let ul = &result.measures[ul_idx];
                let path_loss_db = if config.flags.protect_macro_ul {
                    t.cells
                        .iter()
                        .zip(&result.measures)
                        .filter(|(c, _)| c.frequency_index == ul_cell.frequency_index)
                        .map(|(_, m)| m.link.path_loss_db)
                        .fold(f64::INFINITY, f64::min)
                } else {
                    ul.link.path_loss_db
                };
                let reps = coverage.repetitions.unwrap_or(1);
                let p = NpuschPowerParams {
                    p_cmax_dbm: p_cmax_for(ue.max_power_dbm, ul_cell, config.power.p_cmax_policy)?,
                    p_o_npusch_dbm: config.power.p_o_npusch_dbm,
                    alpha: config.power.alpha,
                    m_npusch: m,
                    path_loss_db,
                    repetitions: reps,
                    j: config.power.j,
                };
                let power = npusch_tx_power(&p);
                row.outcome = AttachOutcome::Connected;
                row.dl_cell = Some(association.dl_cell);
                row.ul_cell = Some(association.ul_cell);
                row.ce_level = coverage.level;
                row.reps = Some(reps);
                row.tx_power_dbm = Some(power);
                tx = Some(UplinkTx {
                    serving: association.ul_cell,
                    tx_power_dbm: power,
                    antenna_gain_dbi: ue.antenna_gain_dbi,
                    path_loss_db: result
                        .measures
                        .iter()
                        .map(|m| m.link.path_loss_db)
                        .collect(),
                });
            }
            UeAttachState::Failed { reason } => {
                row.outcome = match reason {
                    FailureReason::OutOfCoverage => AttachOutcome::OutOfCoverage,
                    FailureReason::RachFailure => AttachOutcome::RachFailure,
                };
            }
            _ => unreachable!("attach always ends in a terminal state"),
        }
        rows.push(row);
        txs.push(tx);
        trace.extend(result.trace);
    }

    let active = |txs: &[Option<UplinkTx>]| txs.iter().flatten().cloned().collect::<Vec<_>>();
    let mut iot = iot_from(&uplink_interference(t, &active(&txs)));

    // CSG members of a closed femto raise their power with the femto's IoT.
    if config.flags.csg_mode {
        let mut changed = false;
        for (row, tx) in rows.iter_mut().zip(txs.iter_mut()) {
            let Some(tx) = tx else { continue };
            let idx = t.index_of(tx.serving).expect("serving cell in topology");
            if !is_closed(t.cells[idx].class) {
                continue;
            }
            let uplift =
                iot[idx].map_or(0.0, |v| csg_power_uplift(v, config.power.csg_uplift_cap_db));
            if uplift > 0.0 {
                tx.tx_power_dbm = (tx.tx_power_dbm + uplift).min(config.power.ue_max_dbm);
                row.tx_power_dbm = Some(tx.tx_power_dbm);
                changed = true;
            }
        }
        if changed {
            iot = iot_from(&uplink_interference(t, &active(&txs)));
        }
    }

    for row in &mut rows {
        if let (Some(p), Some(reps)) = (row.tx_power_dbm, row.reps) {
            row.energy_proxy_mj = Some(energy_proxy_mj(p, reps));
        }
    }

    let n = rows.len() as f64;
    let connected: Vec<&UeMetrics> = rows
        .iter()
        .filter(|r| r.outcome == AttachOutcome::Connected)
        .collect();
    let redirect_rate = (t.kind == ArchitectureKind::Arch3 && !connected.is_empty()).then(|| {
        connected
            .iter()
            .filter(|r| r.redirected == Some(true))
            .count() as f64
            / connected.len() as f64
    });
    let summary = DropSummary {
        drop_index,
        ue_count: rows.len() as u32,
        coverage_probability: rows
            .iter()
            .filter(|r| r.best_coupling_loss_db <= mcl)
            .count() as f64
            / n,
        connected_fraction: connected.len() as f64 / n,
        mean_tx_power_dbm: mean(connected.iter().filter_map(|r| r.tx_power_dbm)),
        mean_energy_proxy_mj: mean(connected.iter().filter_map(|r| r.energy_proxy_mj)),
        redirect_rate,
        x2_latency_ms: config.rach.x2_latency_ms,
    };
    let cells = t
        .cells
        .iter()
        .zip(iot)
        .map(|(c, iot_db)| CellMetrics {
            cell_id: c.id,
            iot_db,
        })
        .collect();
    Ok(MetricsReport {
        summary,
        ues: rows,
        cells,
        trace,
    })
}

/// Energy spent on one transmission: repetitions x mW x 1 ms, in mJ.
pub fn energy_proxy_mj(tx_power_dbm: f64, repetitions: u32) -> f64 {
    const UNIT_DURATION_S: f64 = 1e-3;
    f64::from(repetitions) * db_to_linear(tx_power_dbm) * UNIT_DURATION_S
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub samples: usize,
}

impl Stats {
    /// Mean and linearly interpolated percentiles; `None` for no samples.
    pub fn from_samples(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |q: f64| {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        Some(Stats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p5: pct(0.05),
            p50: pct(0.5),
            p95: pct(0.95),
            samples: sorted.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellIotStats {
    pub cell_id: CellId,
    pub iot_db: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary {
    pub scenario: String,
    pub architecture: &'static str,
    pub seed: u64,
    pub drops: u32,
    pub coverage_probability: Stats,
    pub connected_fraction: Stats,
    pub mean_tx_power_dbm: Option<Stats>,
    pub mean_energy_proxy_mj: Option<Stats>,
    pub redirect_rate: Option<Stats>,
    pub cells: Vec<CellIotStats>,
    pub x2_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub summary: CampaignSummary,
    pub drops: Vec<MetricsReport>,
}

/// Runs every drop (in parallel) and aggregates in drop order.
pub fn run_campaign(config: &ScenarioConfig) -> Result<CampaignReport> {
    config.validate()?;
    let drops = (0..config.drops)
        .into_par_iter()
        .map(|d| run_drop_validated(config, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(CampaignReport {
        summary: summarize(config, &drops),
        drops,
    })
}

fn summarize(config: &ScenarioConfig, drops: &[MetricsReport]) -> CampaignSummary {
    let collect = |f: &dyn Fn(&DropSummary) -> Option<f64>| -> Vec<f64> {
        drops.iter().filter_map(|d| f(&d.summary)).collect()
    };
    let cells = config
        .topology
        .cells
        .iter()
        .map(|c| CellIotStats {
            cell_id: c.id,
            iot_db: Stats::from_samples(
                &drops
                    .iter()
                    .filter_map(|d| d.iot_db(c.id))
                    .collect::<Vec<_>>(),
            ),
        })
        .collect();
    CampaignSummary {
        scenario: config.name.clone(),
        architecture: config.topology.kind.name(),
        seed: config.seed,
        drops: drops.len() as u32,
        coverage_probability: Stats::from_samples(&collect(&|s| Some(s.coverage_probability)))
            .expect("at least one drop"),
        connected_fraction: Stats::from_samples(&collect(&|s| Some(s.connected_fraction)))
            .expect("at least one drop"),
        mean_tx_power_dbm: Stats::from_samples(&collect(&|s| s.mean_tx_power_dbm)),
        mean_energy_proxy_mj: Stats::from_samples(&collect(&|s| s.mean_energy_proxy_mj)),
        redirect_rate: Stats::from_samples(&collect(&|s| s.redirect_rate)),
        cells,
        x2_latency_ms: config.rach.x2_latency_ms,
    }
}
