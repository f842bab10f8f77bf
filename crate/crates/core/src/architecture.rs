//! Small-cell deployment architectures and the per-architecture attach flow.
//!
//! * `Arch1`: every cell is a complete cell with its own S1, broadcast and
//!   PRACH. The UE measures everything and picks by policy.
//! * `Arch2`: macro anchors own S1 and broadcast; small cells are non-anchor
//!   eNBs reached over X2 and advertised in the anchor's neighbour list.
//! * `Arch3`: small cells share the macro's cell identity and have no PRACH
//!   or paging. Random access always goes to the macro, which may move the UE
//!   to a small cell with Msg4 after the small cell reports the preamble.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::power::{nprach_tx_power, p_cmax_for, PCmaxPolicy};
use crate::radio::{thermal_noise_dbm, Cell, CellId, CellRole, Ue, UeId, NB_IOT_BANDWIDTH_HZ};
use crate::selection::{
    assign_coverage_level, decoupled_association, measure_links, select_cell, Association,
    CellMeasure, CoverageLevel, CoverageThresholds, SelectionPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ArchitectureKind {
    Arch1,
    Arch2,
    Arch3,
}

impl ArchitectureKind {
    pub fn name(&self) -> &'static str {
        match self {
            ArchitectureKind::Arch1 => "arch1",
            ArchitectureKind::Arch2 => "arch2",
            ArchitectureKind::Arch3 => "arch3",
        }
    }
}

/// Cells plus their core-network and inter-eNB links.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub kind: ArchitectureKind,
    pub cells: Vec<Cell>,
    /// Cells with an S1 connection to the core network.
    pub s1: BTreeSet<CellId>,
    /// Undirected X2 (or X2-like) links, stored as (low, high).
    pub x2: BTreeSet<(CellId, CellId)>,
    /// Cells broadcasting their own MIB/SIB.
    pub broadcast: BTreeSet<CellId>,
    /// Cells with PRACH and paging resources.
    pub prach: BTreeSet<CellId>,
}

impl Topology {
    pub fn new(kind: ArchitectureKind, cells: Vec<Cell>) -> Self {
        Self {
            kind,
            cells,
            s1: BTreeSet::new(),
            x2: BTreeSet::new(),
            broadcast: BTreeSet::new(),
            prach: BTreeSet::new(),
        }
    }

    pub fn add_x2(&mut self, a: CellId, b: CellId) {
        self.x2.insert(if a <= b { (a, b) } else { (b, a) });
    }

    pub fn has_x2(&self, a: CellId, b: CellId) -> bool {
        self.x2.contains(&if a <= b { (a, b) } else { (b, a) })
    }

    pub fn x2_neighbors(&self, id: CellId) -> impl Iterator<Item = CellId> + '_ {
        self.x2.iter().filter_map(move |&(a, b)| {
            if a == id {
                Some(b)
            } else if b == id {
                Some(a)
            } else {
                None
            }
        })
    }

    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        self.cells.iter().find(|c| c.id == id)
    }

    pub fn index_of(&self, id: CellId) -> Option<usize> {
        self.cells.iter().position(|c| c.id == id)
    }

    /// The wide-area cell a small cell hangs off, by X2 and lowest id.
    pub fn macro_of(&self, small: CellId) -> Option<&Cell> {
        self.x2_neighbors(small)
            .filter_map(|id| self.cell(id))
            .filter(|c| !c.is_small_cell())
            .min_by_key(|c| c.id)
    }
}

/// One architecture rule. Names are stable and appear in error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Constraint {
    EmptyTopology,
    DuplicateCellId,
    UnknownLinkEndpoint,
    Arch1OwnS1,
    Arch1OwnBroadcast,
    Arch1CompleteCell,
    Arch2AnchorIsMacro,
    Arch2AnchorS1,
    Arch2NonAnchorS1,
    Arch2NonAnchorX2,
    Arch2NonAnchorBroadcast,
    Arch3MacroIsPrimary,
    Arch3OnlyMacroS1,
    Arch3SmallCellX2,
    Arch3SharedIdentity,
    Arch3NoSmallCellPrach,
    Arch3NoSmallCellBroadcast,
}

impl Constraint {
    pub fn name(&self) -> &'static str {
        match self {
            Constraint::EmptyTopology => "topology.nonempty",
            Constraint::DuplicateCellId => "topology.unique_ids",
            Constraint::UnknownLinkEndpoint => "topology.known_endpoints",
            Constraint::Arch1OwnS1 => "arch1.own_s1",
            Constraint::Arch1OwnBroadcast => "arch1.own_mib_sib",
            Constraint::Arch1CompleteCell => "arch1.complete_cell",
            Constraint::Arch2AnchorIsMacro => "arch2.anchor_is_macro",
            Constraint::Arch2AnchorS1 => "arch2.anchor_s1",
            Constraint::Arch2NonAnchorS1 => "arch2.only_anchor_s1",
            Constraint::Arch2NonAnchorX2 => "arch2.non_anchor_x2",
            Constraint::Arch2NonAnchorBroadcast => "arch2.non_anchor_no_mib_sib",
            Constraint::Arch3MacroIsPrimary => "arch3.macro_is_primary",
            Constraint::Arch3OnlyMacroS1 => "arch3.only_macro_s1",
            Constraint::Arch3SmallCellX2 => "arch3.small_cell_x2",
            Constraint::Arch3SharedIdentity => "arch3.shared_cell_identity",
            Constraint::Arch3NoSmallCellPrach => "arch3.no_small_cell_prach",
            Constraint::Arch3NoSmallCellBroadcast => "arch3.no_small_cell_mib_sib",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Constraint::EmptyTopology => "topology needs at least one cell",
            Constraint::DuplicateCellId => "cell ids must be unique",
            Constraint::UnknownLinkEndpoint => "link references a cell that does not exist",
            Constraint::Arch1OwnS1 => "every cell needs its own S1 interface",
            Constraint::Arch1OwnBroadcast => "every cell broadcasts its own MIB/SIB",
            Constraint::Arch1CompleteCell => {
                "every cell is a complete anchor cell with PRACH and paging resources"
            }
            Constraint::Arch2AnchorIsMacro => {
                "only wide-area cells may be anchors and at least one anchor is required"
            }
            Constraint::Arch2AnchorS1 => "anchor eNB needs an S1 connection",
            Constraint::Arch2NonAnchorS1 => "non-anchor must not have S1",
            Constraint::Arch2NonAnchorX2 => "non-anchor needs an X2 link to an anchor",
            Constraint::Arch2NonAnchorBroadcast => "non-anchor must not broadcast MIB/SIB",
            Constraint::Arch3MacroIsPrimary => {
                "a wide-area primary cell with S1, MIB/SIB and PRACH is required"
            }
            Constraint::Arch3OnlyMacroS1 => "only the macro cell may have S1",
            Constraint::Arch3SmallCellX2 => "small cell needs an X2-like link to a macro",
            Constraint::Arch3SharedIdentity => "small cell must share its macro's cell identity",
            Constraint::Arch3NoSmallCellPrach => {
                "small cell must not have PRACH or paging resources"
            }
            Constraint::Arch3NoSmallCellBroadcast => "small cell must not broadcast MIB/SIB",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub cells: Vec<CellId>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}",
            self.constraint.name(),
            self.constraint.description()
        )?;
        if !self.cells.is_empty() {
            let ids: Vec<String> = self.cells.iter().map(ToString::to_string).collect();
            write!(f, " (cells {})", ids.join(", "))?;
        }
        Ok(())
    }
}

/// Collects every violated rule together with the offending cells.
pub fn validate_topology(t: &Topology) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    fn check(out: &mut Vec<Violation>, constraint: Constraint, cells: Vec<CellId>) {
        if !cells.is_empty() {
            out.push(Violation { constraint, cells });
        }
    }
    let where_ = |pred: &dyn Fn(&Cell) -> bool| -> Vec<CellId> {
        t.cells.iter().filter(|c| pred(c)).map(|c| c.id).collect()
    };

    if t.cells.is_empty() {
        return Err(vec![Violation {
            constraint: Constraint::EmptyTopology,
            cells: Vec::new(),
        }]);
    }

    let mut seen = BTreeSet::new();
    check(
        &mut out,
        Constraint::DuplicateCellId,
        t.cells
            .iter()
            .filter(|c| !seen.insert(c.id))
            .map(|c| c.id)
            .collect(),
    );
    let known: BTreeSet<CellId> = t.cells.iter().map(|c| c.id).collect();
    let mut unknown: BTreeSet<CellId> = BTreeSet::new();
    for id in
        t.s1.iter()
            .chain(t.broadcast.iter())
            .chain(t.prach.iter())
            .chain(t.x2.iter().flat_map(|(a, b)| [a, b]))
    {
        if !known.contains(id) {
            unknown.insert(*id);
        }
    }
    check(
        &mut out,
        Constraint::UnknownLinkEndpoint,
        unknown.into_iter().collect(),
    );

    match t.kind {
        ArchitectureKind::Arch1 => {
            check(
                &mut out,
                Constraint::Arch1OwnS1,
                where_(&|c| !t.s1.contains(&c.id)),
            );
            check(
                &mut out,
                Constraint::Arch1OwnBroadcast,
                where_(&|c| !t.broadcast.contains(&c.id)),
            );
            check(
                &mut out,
                Constraint::Arch1CompleteCell,
                where_(&|c| c.role != CellRole::Anchor || !t.prach.contains(&c.id)),
            );
        }
        ArchitectureKind::Arch2 => {
            let is_anchor = |c: &Cell| c.role == CellRole::Anchor;
            let mut bad = where_(&|c| is_anchor(c) && c.is_small_cell());
            bad.extend(where_(&|c| !c.is_small_cell() && !is_anchor(c)));
            if bad.is_empty() && !t.cells.iter().any(is_anchor) {
                out.push(Violation {
                    constraint: Constraint::Arch2AnchorIsMacro,
                    cells: Vec::new(),
                });
            }
            bad.sort();
            check(&mut out, Constraint::Arch2AnchorIsMacro, bad);
            check(
                &mut out,
                Constraint::Arch2AnchorS1,
                where_(&|c| is_anchor(c) && !t.s1.contains(&c.id)),
            );
            check(
                &mut out,
                Constraint::Arch2NonAnchorS1,
                where_(&|c| !is_anchor(c) && t.s1.contains(&c.id)),
            );
            check(
                &mut out,
                Constraint::Arch2NonAnchorX2,
                where_(&|c| {
                    !is_anchor(c)
                        && !t
                            .x2_neighbors(c.id)
                            .any(|n| t.cell(n).is_some_and(|a| a.role == CellRole::Anchor))
                }),
            );
            check(
                &mut out,
                Constraint::Arch2NonAnchorBroadcast,
                where_(&|c| !is_anchor(c) && t.broadcast.contains(&c.id)),
            );
        }
        ArchitectureKind::Arch3 => {
            let primary_ok = |c: &Cell| {
                t.s1.contains(&c.id) && t.broadcast.contains(&c.id) && t.prach.contains(&c.id)
            };
            let macros: Vec<&Cell> = t.cells.iter().filter(|c| !c.is_small_cell()).collect();
            if macros.is_empty() {
                out.push(Violation {
                    constraint: Constraint::Arch3MacroIsPrimary,
                    cells: Vec::new(),
                });
            } else {
                check(
                    &mut out,
                    Constraint::Arch3MacroIsPrimary,
                    macros
                        .iter()
                        .filter(|c| !primary_ok(c))
                        .map(|c| c.id)
                        .collect(),
                );
            }
            check(
                &mut out,
                Constraint::Arch3OnlyMacroS1,
                where_(&|c| c.is_small_cell() && t.s1.contains(&c.id)),
            );
            check(
                &mut out,
                Constraint::Arch3SmallCellX2,
                where_(&|c| c.is_small_cell() && t.macro_of(c.id).is_none()),
            );
            check(
                &mut out,
                Constraint::Arch3SharedIdentity,
                where_(&|c| {
                    c.is_small_cell()
                        && t.macro_of(c.id)
                            .is_some_and(|m| m.cell_identity != c.cell_identity)
                }),
            );
            check(
                &mut out,
                Constraint::Arch3NoSmallCellPrach,
                where_(&|c| c.is_small_cell() && t.prach.contains(&c.id)),
            );
            check(
                &mut out,
                Constraint::Arch3NoSmallCellBroadcast,
                where_(&|c| c.is_small_cell() && t.broadcast.contains(&c.id)),
            );
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// NRS configuration advertised for a non-anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NrsConfig {
    pub cell_identity: u32,
    pub prbs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonAnchorEntry {
    pub cell_id: CellId,
    pub frequency_index: u32,
    pub nrs_config: NrsConfig,
    pub nrs_power_dbm: f64,
    pub selection_threshold_dbm: Option<f64>,
}

/// What an Arch2 anchor advertises about its neighbourhood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BroadcastInfo {
    pub anchor: CellId,
    pub anchor_list: Vec<CellId>,
    pub non_anchors: Vec<NonAnchorEntry>,
}

pub fn build_broadcast(anchor: CellId, t: &Topology) -> Result<BroadcastInfo> {
    if t.kind != ArchitectureKind::Arch2 {
        return Err(Error::Usage(format!(
            "neighbour broadcast only exists in arch2, topology is {}",
            t.kind.name()
        )));
    }
    let cell = t
        .cell(anchor)
        .ok_or_else(|| Error::Usage(format!("cell {anchor} is not in the topology")))?;
    if cell.role != CellRole::Anchor {
        return Err(Error::Usage(format!("cell {anchor} is not an anchor eNB")));
    }
    let anchor_list = t
        .cells
        .iter()
        .filter(|c| c.role == CellRole::Anchor)
        .map(|c| c.id)
        .collect();
    let mut non_anchors: Vec<NonAnchorEntry> = t
        .x2_neighbors(anchor)
        .filter_map(|id| t.cell(id))
        .filter(|c| c.role == CellRole::NonAnchor)
        .map(|c| NonAnchorEntry {
            cell_id: c.id,
            frequency_index: c.frequency_index,
            nrs_config: NrsConfig {
                cell_identity: c.cell_identity,
                prbs: c.non_anchor_prbs.clone(),
            },
            nrs_power_dbm: c.nrs_power_dbm,
            selection_threshold_dbm: c.selection_threshold_dbm,
        })
        .collect();
    non_anchors.sort_by_key(|e| e.cell_id);
    Ok(BroadcastInfo {
        anchor,
        anchor_list,
        non_anchors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureReason {
    OutOfCoverage,
    RachFailure,
}

impl FailureReason {
    pub fn name(&self) -> &'static str {
        match self {
            FailureReason::OutOfCoverage => "out_of_coverage",
            FailureReason::RachFailure => "rach_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum UeAttachState {
    Idle,
    Synchronized,
    BroadcastAcquired,
    RachInProgress {
        attempt: u32,
        target: CellId,
    },
    Granted,
    Connected {
        association: Association,
        coverage: CoverageLevel,
    },
    Failed {
        reason: FailureReason,
    },
}

impl UeAttachState {
    fn rank(&self) -> u8 {
        match self {
            UeAttachState::Idle => 0,
            UeAttachState::Synchronized => 1,
            UeAttachState::BroadcastAcquired => 2,
            UeAttachState::RachInProgress { .. } => 3,
            UeAttachState::Granted => 4,
            UeAttachState::Connected { .. } => 5,
            UeAttachState::Failed { .. } => 6,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            UeAttachState::Connected { .. } | UeAttachState::Failed { .. }
        )
    }

    /// Forward one step, repeat a RACH attempt, or fail from any live state.
    pub fn can_transition_to(&self, next: &UeAttachState) -> bool {
        if self.is_terminal() {
            return false;
        }
        match next {
            UeAttachState::Failed { .. } => true,
            UeAttachState::RachInProgress { attempt, .. } => match self {
                UeAttachState::RachInProgress { attempt: prev, .. } => *attempt == prev + 1,
                other => other.rank() == 2 && *attempt == 1,
            },
            _ => next.rank() == self.rank() + 1,
        }
    }
}

/// What a trace line records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TraceKind {
    Synchronized,
    BroadcastAcquired,
    NrsMeasured,
    RachAttempt,
    PreambleReport,
    Redirect,
    Granted,
    Connected,
    Failed,
}

impl TraceKind {
    pub fn label(&self) -> &'static str {
        match self {
            TraceKind::Synchronized => "SYNCHRONIZED",
            TraceKind::BroadcastAcquired => "BROADCAST_ACQUIRED",
            TraceKind::NrsMeasured => "NRS_MEASURED",
            TraceKind::RachAttempt => "RACH",
            TraceKind::PreambleReport => "PREAMBLE_REPORT",
            TraceKind::Redirect => "REDIRECT",
            TraceKind::Granted => "GRANTED",
            TraceKind::Connected => "CONNECTED",
            TraceKind::Failed => "FAILED",
        }
    }
}

/// One line of an attach trace.
///
/// Renders as `t=<step> ue=<id> <STATE> cell=<id> rsrp=<dBm> pl=<dB>` with
/// `-` for absent values, followed by any extra `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: u32,
    pub ue: UeId,
    pub kind: TraceKind,
    pub cell: Option<CellId>,
    pub rsrp_dbm: Option<f64>,
    pub path_loss_db: Option<f64>,
    pub extra: Vec<(&'static str, String)>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} ue={} {}", self.step, self.ue, self.kind.label())?;
        match self.cell {
            Some(c) => write!(f, " cell={c}")?,
            None => write!(f, " cell=-")?,
        }
        match self.rsrp_dbm {
            Some(v) => write!(f, " rsrp={v:.2}")?,
            None => write!(f, " rsrp=-")?,
        }
        match self.path_loss_db {
            Some(v) => write!(f, " pl={v:.2}")?,
            None => write!(f, " pl=-")?,
        }
        for (k, v) in &self.extra {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// A small cell's report on a preamble sent towards the macro.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreambleReport {
    pub small_cell_id: CellId,
    pub ue_id: UeId,
    pub received: bool,
    /// Present only when `received`.
    pub measured_ul_snr_db: Option<f64>,
}

/// Preamble SNR seen at a small cell for an NPRACH transmission at `nprach_tx_dbm`.
pub fn preamble_report(
    t: &Topology,
    small_cell: CellId,
    ue: &Ue,
    nprach_tx_dbm: f64,
    detection_snr_db: f64,
) -> Result<PreambleReport> {
    if t.kind != ArchitectureKind::Arch3 {
        return Err(Error::Usage(format!(
            "preamble reports are an arch3 mechanism, topology is {}",
            t.kind.name()
        )));
    }
    let idx = t
        .index_of(small_cell)
        .ok_or_else(|| Error::Usage(format!("cell {small_cell} is not in the topology")))?;
    let cell = &t.cells[idx];
    if !cell.is_small_cell() {
        return Err(Error::Usage(format!(
            "cell {small_cell} is not a small cell"
        )));
    }
    let pl = cell
        .propagation
        .loss_at(cell.position.distance_to(&ue.position))
        + ue.shadowing_towards(idx);
    let snr = nprach_tx_dbm + ue.antenna_gain_dbi + cell.antenna_gain_dbi
        - pl
        - thermal_noise_dbm(NB_IOT_BANDWIDTH_HZ)?;
    let received = snr >= detection_snr_db;
    Ok(PreambleReport {
        small_cell_id: small_cell,
        ue_id: ue.id,
        received,
        measured_ul_snr_db: received.then_some(snr),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Msg4Decision {
    Stay,
    RedirectToSmallCell,
}

pub fn msg4_redirect(report: &PreambleReport, redirect_snr_threshold_db: f64) -> Msg4Decision {
    match report.measured_ul_snr_db {
        Some(snr) if report.received && snr >= redirect_snr_threshold_db => {
            Msg4Decision::RedirectToSmallCell
        }
        _ => Msg4Decision::Stay,
    }
}

/// Knobs of the attach procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttachParams {
    pub coverage: CoverageThresholds,
    pub max_attempts: u32,
    pub preamble_rx_target_dbm: f64,
    pub preamble_detection_snr_db: f64,
    pub msg4_redirect_snr_db: f64,
    pub p_cmax_policy: PCmaxPolicy,
    /// Home cells only admit CSG members.
    pub csg_mode: bool,
    /// Serve DL from the strongest cell and UL from the least path loss.
    pub decoupled: bool,
}

impl Default for AttachParams {
    fn default() -> Self {
        Self {
            coverage: CoverageThresholds::default(),
            max_attempts: 3,
            preamble_rx_target_dbm: -110.0,
            preamble_detection_snr_db: 0.0,
            msg4_redirect_snr_db: 0.0,
            p_cmax_policy: PCmaxPolicy::InterferenceSafe,
            csg_mode: false,
            decoupled: false,
        }
    }
}

/// Random-access resources picked for the first preamble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RaResources {
    pub prb: u32,
    pub subcarrier: u32,
    pub time_slot: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttachResult {
    pub state: UeAttachState,
    pub trace: Vec<TraceEvent>,
    pub rach_target: Option<CellId>,
    pub ra_resources: Option<RaResources>,
    /// Arch3 only: what the macro decided after the preamble reports.
    pub redirect: Option<Msg4Decision>,
    pub measures: Vec<CellMeasure>,
}

impl AttachResult {
    pub fn association(&self) -> Option<Association> {
        match self.state {
            UeAttachState::Connected { association, .. } => Some(association),
            _ => None,
        }
    }

    pub fn coverage(&self) -> Option<CoverageLevel> {
        match self.state {
            UeAttachState::Connected { coverage, .. } => Some(coverage),
            _ => None,
        }
    }
}

const NPRACH_SUBCARRIERS: u32 = 12;
const NPRACH_TIME_SLOTS: u32 = 4;

struct Machine<'a> {
    ue: &'a Ue,
    state: UeAttachState,
    trace: Vec<TraceEvent>,
}

impl<'a> Machine<'a> {
    fn new(ue: &'a Ue) -> Self {
        Self {
            ue,
            state: UeAttachState::Idle,
            trace: Vec::new(),
        }
    }

    fn log(
        &mut self,
        kind: TraceKind,
        m: Option<&CellMeasure>,
        extra: Vec<(&'static str, String)>,
    ) {
        self.trace.push(TraceEvent {
            step: self.trace.len() as u32,
            ue: self.ue.id,
            kind,
            cell: m.map(|m| m.cell_id),
            rsrp_dbm: m.map(|m| m.link.rsrp_dbm),
            path_loss_db: m.map(|m| m.link.path_loss_db),
            extra,
        });
    }

    fn enter(
        &mut self,
        next: UeAttachState,
        kind: TraceKind,
        m: Option<&CellMeasure>,
        extra: Vec<(&'static str, String)>,
    ) {
        debug_assert!(
            self.state.can_transition_to(&next),
            "illegal attach transition {:?} -> {:?}",
            self.state,
            next
        );
        self.state = next;
        self.log(kind, m, extra);
    }

    fn fail(&mut self, reason: FailureReason, m: Option<&CellMeasure>) {
        self.enter(
            UeAttachState::Failed { reason },
            TraceKind::Failed,
            m,
            vec![("reason", reason.name().to_string())],
        );
    }
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Runs the attach procedure of one UE against a validated topology.
pub fn attach<R: Rng + ?Sized>(
    ue: &Ue,
    t: &Topology,
    policy: &SelectionPolicy,
    params: &AttachParams,
    rng: &mut R,
) -> Result<AttachResult> {
    let measures = measure_links(ue, &t.cells)?;
    let mut machine = Machine::new(ue);
    let measure_of = |id: CellId| measures.iter().find(|m| m.cell_id == id);
    let mcl = params.coverage.mcl_db();
    let admitted = |m: &CellMeasure| {
        m.link.coupling_loss_db <= mcl
            && !(params.csg_mode
                && matches!(m.class, crate::radio::BaseStationClass::Home { .. })
                && !ue.csg_member)
    };
    let strongest_of = |pool: &[CellMeasure]| -> Option<CellMeasure> {
        select_cell(pool, &SelectionPolicy::RsrpOnly)
            .ok()
            .and_then(|id| pool.iter().find(|m| m.cell_id == id).copied())
    };
    let decoupled = params.decoupled || matches!(policy, SelectionPolicy::Decoupled);

    let finish = |machine: Machine, target, ra, redirect| AttachResult {
        state: machine.state,
        trace: machine.trace,
        rach_target: target,
        ra_resources: ra,
        redirect,
        measures: measures.clone(),
    };

    // Synchronise to the strongest admitted cell that broadcasts system information.
    let sync_pool: Vec<CellMeasure> = measures
        .iter()
        .filter(|m| t.broadcast.contains(&m.cell_id) && admitted(m))
        .filter(|m| match t.kind {
            ArchitectureKind::Arch1 => true,
            ArchitectureKind::Arch2 => t
                .cell(m.cell_id)
                .is_some_and(|c| c.role == CellRole::Anchor),
            ArchitectureKind::Arch3 => !m.class.is_small_cell(),
        })
        .copied()
        .collect();
    let Some(sync) = strongest_of(&sync_pool) else {
        machine.fail(FailureReason::OutOfCoverage, None);
        return Ok(finish(machine, None, None, None));
    };
    machine.enter(
        UeAttachState::Synchronized,
        TraceKind::Synchronized,
        Some(&sync),
        vec![],
    );
    machine.enter(
        UeAttachState::BroadcastAcquired,
        TraceKind::BroadcastAcquired,
        Some(&sync),
        vec![],
    );

    // Candidate set and association per architecture.
    let association = match t.kind {
        ArchitectureKind::Arch1 => {
            let pool: Vec<CellMeasure> = measures
                .iter()
                .filter(|m| t.prach.contains(&m.cell_id) && admitted(m))
                .copied()
                .collect();
            choose(&pool, policy, decoupled)?
        }
        ArchitectureKind::Arch2 => {
            let info = build_broadcast(sync.cell_id, t)?;
            let mut pool: Vec<CellMeasure> = info
                .anchor_list
                .iter()
                .filter_map(|id| measure_of(*id))
                .filter(|m| t.broadcast.contains(&m.cell_id) && admitted(m))
                .copied()
                .collect();
            for entry in &info.non_anchors {
                let Some(m) = measure_of(entry.cell_id) else {
                    continue;
                };
                let threshold = entry.selection_threshold_dbm.unwrap_or(f64::NEG_INFINITY);
                let eligible = m.link.rsrp_dbm >= threshold && admitted(m);
                machine.log(
                    TraceKind::NrsMeasured,
                    Some(m),
                    vec![
                        (
                            "threshold",
                            entry.selection_threshold_dbm.map_or("-".into(), fmt2),
                        ),
                        ("eligible", eligible.to_string()),
                    ],
                );
                if eligible {
                    pool.push(*m);
                }
            }
            choose(&pool, policy, decoupled)?
        }
        ArchitectureKind::Arch3 => Association::coupled(sync.cell_id),
    };

    let target = association.ul_cell;
    let target_measure = *measure_of(target).expect("target comes from the measured set");
    let target_cell = t.cell(target).expect("target is in the topology");

    let ra = RaResources {
        prb: if target_cell.non_anchor_prbs.is_empty() {
            target_cell.anchor_prb.unwrap_or(0)
        } else {
            let i = rng.random_range(0..target_cell.non_anchor_prbs.len());
            target_cell.non_anchor_prbs[i]
        },
        subcarrier: rng.random_range(0..NPRACH_SUBCARRIERS),
        time_slot: rng.random_range(0..NPRACH_TIME_SLOTS),
    };

    // Preamble attempts, escalating the CE level after each miss.
    let p_cmax = p_cmax_for(ue.max_power_dbm, target_cell, params.p_cmax_policy)?;
    let noise = thermal_noise_dbm(NB_IOT_BANDWIDTH_HZ)?;
    let mut level =
        assign_coverage_level(target_measure.link.coupling_loss_db, &params.coverage).level;
    let mut detected = None;
    for attempt in 1..=params.max_attempts.max(1) {
        let reps = params.coverage.repetitions_for(level).unwrap_or(1);
        let tx = nprach_tx_power(
            p_cmax,
            params.preamble_rx_target_dbm,
            target_measure.link.path_loss_db,
            level,
        );
        let snr = tx + ue.antenna_gain_dbi + target_cell.antenna_gain_dbi
            - target_measure.link.path_loss_db
            - noise
            + 10.0 * f64::from(reps).log10();
        let mut extra = vec![
            ("attempt", attempt.to_string()),
            ("ce", level.name().to_string()),
            ("tx", fmt2(tx)),
            ("snr", fmt2(snr)),
        ];
        if attempt == 1 {
            extra.push(("prb", ra.prb.to_string()));
            extra.push(("sc", ra.subcarrier.to_string()));
            extra.push(("slot", ra.time_slot.to_string()));
        }
        machine.enter(
            UeAttachState::RachInProgress { attempt, target },
            TraceKind::RachAttempt,
            Some(&target_measure),
            extra,
        );
        if snr >= params.preamble_detection_snr_db {
            detected = Some((level, tx));
            break;
        }
        if let Some(next) = level.next() {
            level = next;
        }
    }
    let Some((rach_level, preamble_tx)) = detected else {
        machine.fail(FailureReason::RachFailure, Some(&target_measure));
        return Ok(finish(machine, Some(target), Some(ra), None));
    };

    // Arch3: small cells listen to the macro's PRACH and report back over X2.
    let mut association = association;
    let mut redirect = None;
    if t.kind == ArchitectureKind::Arch3 {
        let mut best: Option<PreambleReport> = None;
        let smalls = t.cells.iter().filter(|c| {
            c.is_small_cell() && t.has_x2(c.id, target) && measure_of(c.id).is_some_and(&admitted)
        });
        for small in smalls {
            let report = preamble_report(
                t,
                small.id,
                ue,
                preamble_tx,
                params.preamble_detection_snr_db,
            )?;
            machine.log(
                TraceKind::PreambleReport,
                measure_of(small.id),
                vec![
                    ("received", report.received.to_string()),
                    ("snr", report.measured_ul_snr_db.map_or("-".into(), fmt2)),
                ],
            );
            let better = match (&best, report.measured_ul_snr_db) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some(b), Some(s)) => s > b.measured_ul_snr_db.unwrap_or(f64::NEG_INFINITY),
            };
            if better {
                best = Some(report);
            }
        }
        let decision = best.as_ref().map_or(Msg4Decision::Stay, |r| {
            msg4_redirect(r, params.msg4_redirect_snr_db)
        });
        if decision == Msg4Decision::RedirectToSmallCell {
            let small = best.expect("redirect implies a report").small_cell_id;
            machine.log(
                TraceKind::Redirect,
                measure_of(small),
                vec![("from", target.to_string())],
            );
            association = if decoupled {
                Association {
                    dl_cell: target,
                    ul_cell: small,
                }
            } else {
                Association::coupled(small)
            };
        }
        redirect = Some(decision);
    }

    let grant_via = match t.kind {
        // Non-anchors have no SIB of their own; grants go through the anchor.
        ArchitectureKind::Arch2 if target_cell.role == CellRole::NonAnchor => sync.cell_id,
        _ => target,
    };
    machine.enter(
        UeAttachState::Granted,
        TraceKind::Granted,
        measure_of(grant_via),
        vec![],
    );

    let ul = measure_of(association.ul_cell).expect("UL cell measured");
    let mut coverage = assign_coverage_level(ul.link.coupling_loss_db, &params.coverage);
    if association.ul_cell == target && rach_level > coverage.level {
        coverage = params.coverage.level(rach_level);
    }
    machine.enter(
        UeAttachState::Connected {
            association,
            coverage,
        },
        TraceKind::Connected,
        Some(ul),
        vec![
            ("dl", association.dl_cell.to_string()),
            ("ul", association.ul_cell.to_string()),
            ("ce", coverage.level.name().to_string()),
        ],
    );
    Ok(finish(machine, Some(target), Some(ra), redirect))
}

fn choose(pool: &[CellMeasure], policy: &SelectionPolicy, decoupled: bool) -> Result<Association> {
    if decoupled {
        decoupled_association(pool)
    } else {
        select_cell(pool, policy).map(Association::coupled)
    }
}

/// Renders a trace as newline-terminated lines.
pub fn render_trace(trace: &[TraceEvent]) -> String {
    let mut s = String::new();
    for e in trace {
        s.push_str(&e.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{BaseStationClass, CellSpec, Position, PropagationModel};
    use crate::selection::CeLevel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn macro_spec(id: u32) -> CellSpec {
        let mut c = CellSpec::new(id, BaseStationClass::WideArea, Position::ORIGIN);
        c.nrs_power_dbm = 32.0;
        c.antenna_gain_dbi = 15.0;
        c
    }

    fn small_spec(id: u32, x: f64) -> CellSpec {
        let mut c = CellSpec::new(id, BaseStationClass::LocalArea, Position::new(x, 0.0));
        c.nrs_power_dbm = 18.0;
        c.antenna_gain_dbi = 5.0;
        c.role = CellRole::NonAnchor;
        c.anchor_prb = None;
        c.non_anchor_prbs = vec![3, 4];
        c
    }

    pub(crate) fn arch2() -> Topology {
        let cells = vec![
            Cell::new(macro_spec(1)).unwrap(),
            Cell::new(small_spec(2, 300.0)).unwrap(),
            Cell::new(small_spec(3, -300.0)).unwrap(),
        ];
        let mut t = Topology::new(ArchitectureKind::Arch2, cells);
        t.s1.insert(CellId(1));
        t.broadcast.insert(CellId(1));
        t.prach.insert(CellId(1));
        t.add_x2(CellId(1), CellId(2));
        t.add_x2(CellId(1), CellId(3));
        t
    }

    pub(crate) fn arch3() -> Topology {
        let mut s = small_spec(2, 250.0);
        s.cell_identity = 1;
        let cells = vec![Cell::new(macro_spec(1)).unwrap(), Cell::new(s).unwrap()];
        let mut t = Topology::new(ArchitectureKind::Arch3, cells);
        t.s1.insert(CellId(1));
        t.broadcast.insert(CellId(1));
        t.prach.insert(CellId(1));
        t.add_x2(CellId(1), CellId(2));
        t
    }

    fn arch1() -> Topology {
        let mut s = small_spec(2, 300.0);
        s.role = CellRole::Anchor;
        s.anchor_prb = Some(1);
        let cells = vec![Cell::new(macro_spec(1)).unwrap(), Cell::new(s).unwrap()];
        let mut t = Topology::new(ArchitectureKind::Arch1, cells);
        for id in [1, 2] {
            t.s1.insert(CellId(id));
            t.broadcast.insert(CellId(id));
            t.prach.insert(CellId(id));
        }
        t
    }

    fn names(t: &Topology) -> Vec<&'static str> {
        match validate_topology(t) {
            Ok(()) => vec![],
            Err(v) => v.iter().map(|v| v.constraint.name()).collect(),
        }
    }

    #[test]
    fn clean_topologies_validate() {
        assert_eq!(names(&arch1()), Vec::<&str>::new());
        assert_eq!(names(&arch2()), Vec::<&str>::new());
        assert_eq!(names(&arch3()), Vec::<&str>::new());
    }

    #[test]
    fn arch2_non_anchor_with_s1_is_flagged() {
        let mut t = arch2();
        t.s1.insert(CellId(2));
        let v = validate_topology(&t).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].constraint, Constraint::Arch2NonAnchorS1);
        assert_eq!(v[0].cells, vec![CellId(2)]);
        assert!(v[0].to_string().contains("non-anchor must not have S1"));
    }

    #[test]
    fn arch3_identity_mismatch_is_flagged() {
        let mut t = arch3();
        let mut spec = t.cells[1].clone().into_spec();
        spec.cell_identity = 9;
        t.cells[1] = Cell::new(spec).unwrap();
        assert_eq!(names(&t), vec!["arch3.shared_cell_identity"]);
    }

    #[test]
    fn every_violation_is_reported() {
        let mut t = arch2();
        t.s1.insert(CellId(2));
        t.broadcast.insert(CellId(3));
        t.x2.clear();
        let n = names(&t);
        assert!(n.contains(&"arch2.only_anchor_s1"));
        assert!(n.contains(&"arch2.non_anchor_no_mib_sib"));
        assert!(n.contains(&"arch2.non_anchor_x2"));
    }

    #[test]
    fn empty_topology_is_a_violation() {
        let t = Topology::new(ArchitectureKind::Arch1, vec![]);
        assert_eq!(names(&t), vec!["topology.nonempty"]);
    }

    #[test]
    fn broadcast_lists_x2_neighbours() {
        let t = arch2();
        let info = build_broadcast(CellId(1), &t).unwrap();
        assert_eq!(info.anchor_list, vec![CellId(1)]);
        assert_eq!(info.non_anchors.len(), 2);
        assert!(info.non_anchors.iter().all(|e| e.nrs_power_dbm == 18.0));
        assert_eq!(info.non_anchors[0].nrs_config.prbs, vec![3, 4]);

        let mut lonely = arch2();
        lonely.x2.clear();
        assert!(build_broadcast(CellId(1), &lonely)
            .unwrap()
            .non_anchors
            .is_empty());

        assert!(matches!(
            build_broadcast(CellId(2), &t),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            build_broadcast(CellId(1), &arch3()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn state_transitions() {
        use UeAttachState::*;
        assert!(Idle.can_transition_to(&Synchronized));
        assert!(!Idle.can_transition_to(&BroadcastAcquired));
        assert!(Idle.can_transition_to(&Failed {
            reason: FailureReason::OutOfCoverage
        }));
        let r1 = RachInProgress {
            attempt: 1,
            target: CellId(1),
        };
        let r2 = RachInProgress {
            attempt: 2,
            target: CellId(1),
        };
        assert!(BroadcastAcquired.can_transition_to(&r1));
        assert!(r1.can_transition_to(&r2));
        assert!(!r2.can_transition_to(&r1));
        assert!(r2.can_transition_to(&Granted));
        let failed = Failed {
            reason: FailureReason::RachFailure,
        };
        assert!(!failed.can_transition_to(&Idle));
    }

    #[test]
    fn trace_line_format() {
        let e = TraceEvent {
            step: 3,
            ue: UeId(7),
            kind: TraceKind::RachAttempt,
            cell: Some(CellId(1)),
            rsrp_dbm: Some(-81.1),
            path_loss_db: Some(128.1),
            extra: vec![("attempt", "1".into())],
        };
        assert_eq!(
            e.to_string(),
            "t=3 ue=7 RACH cell=1 rsrp=-81.10 pl=128.10 attempt=1"
        );
        let e = TraceEvent {
            cell: None,
            rsrp_dbm: None,
            path_loss_db: None,
            extra: vec![],
            ..e
        };
        assert_eq!(e.to_string(), "t=3 ue=7 RACH cell=- rsrp=- pl=-");
    }

    #[test]
    fn preamble_report_examples() {
        let mut t = arch3();
        let mut spec = t.cells[1].clone().into_spec();
        spec.antenna_gain_dbi = 0.0;
        spec.position = Position::ORIGIN;
        spec.propagation = PropagationModel {
            intercept_db: 80.0,
            slope_db: 0.0,
        };
        t.cells[1] = Cell::new(spec.clone()).unwrap();
        let ue = Ue::new(1, Position::new(20.0, 0.0));
        let r = preamble_report(&t, CellId(2), &ue, 23.0, 0.0).unwrap();
        assert!(r.received);
        assert!((r.measured_ul_snr_db.unwrap() - 64.45).abs() < 0.01);

        spec.propagation.intercept_db = 150.0;
        t.cells[1] = Cell::new(spec).unwrap();
        let r = preamble_report(&t, CellId(2), &ue, 23.0, 0.0).unwrap();
        assert!(!r.received);
        assert_eq!(r.measured_ul_snr_db, None);

        assert!(matches!(
            preamble_report(&arch2(), CellId(2), &ue, 23.0, 0.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn msg4_examples() {
        let report = |received, snr| PreambleReport {
            small_cell_id: CellId(2),
            ue_id: UeId(1),
            received,
            measured_ul_snr_db: snr,
        };
        assert_eq!(
            msg4_redirect(&report(true, Some(20.0)), 0.0),
            Msg4Decision::RedirectToSmallCell
        );
        assert_eq!(msg4_redirect(&report(false, None), 0.0), Msg4Decision::Stay);
        assert_eq!(
            msg4_redirect(&report(true, Some(-3.0)), 0.0),
            Msg4Decision::Stay
        );
    }

    #[test]
    fn arch1_single_macro_connects_at_ce0() {
        let t = {
            let mut t = Topology::new(
                ArchitectureKind::Arch1,
                vec![Cell::new(macro_spec(1)).unwrap()],
            );
            t.s1.insert(CellId(1));
            t.broadcast.insert(CellId(1));
            t.prach.insert(CellId(1));
            t
        };
        // macro model at 1 km: PL 128.1, CL 113.1 -> CE0
        let ue = Ue::new(0, Position::new(1000.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = attach(
            &ue,
            &t,
            &SelectionPolicy::RsrpOnly,
            &AttachParams::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.association(), Some(Association::coupled(CellId(1))));
        assert_eq!(r.coverage().unwrap().level, CeLevel::Ce0);
        let labels: Vec<_> = r.trace.iter().map(|e| e.kind).collect();
        assert_eq!(
            labels,
            vec![
                TraceKind::Synchronized,
                TraceKind::BroadcastAcquired,
                TraceKind::RachAttempt,
                TraceKind::Granted,
                TraceKind::Connected
            ]
        );
    }

    #[test]
    fn arch2_threshold_keeps_ue_on_anchor() {
        let mut t = arch2();
        for i in 1..3 {
            let mut spec = t.cells[i].clone().into_spec();
            spec.selection_threshold_dbm = Some(-20.0);
            t.cells[i] = Cell::new(spec).unwrap();
        }
        let ue = Ue::new(0, Position::new(280.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = attach(
            &ue,
            &t,
            &SelectionPolicy::PathLossBased,
            &AttachParams::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.rach_target, Some(CellId(1)));
        let nrs: Vec<_> = r
            .trace
            .iter()
            .filter(|e| e.kind == TraceKind::NrsMeasured)
            .collect();
        assert_eq!(nrs.len(), 2);
        assert!(nrs.iter().all(|e| e.to_string().contains("eligible=false")));

        // without the threshold the nearby pico wins on path loss
        let t = arch2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = attach(
            &ue,
            &t,
            &SelectionPolicy::PathLossBased,
            &AttachParams::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.rach_target, Some(CellId(2)));
        let granted = r
            .trace
            .iter()
            .find(|e| e.kind == TraceKind::Granted)
            .unwrap();
        assert_eq!(granted.cell, Some(CellId(1)));
        let prb = r.ra_resources.unwrap().prb;
        assert!(prb == 3 || prb == 4);
    }

    #[test]
    fn arch3_always_rach_on_macro() {
        let t = arch3();
        for policy in [
            SelectionPolicy::RsrpOnly,
            SelectionPolicy::PathLossBased,
            SelectionPolicy::Decoupled,
        ] {
            let ue = Ue::new(0, Position::new(240.0, 0.0));
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let r = attach(&ue, &t, &policy, &AttachParams::default(), &mut rng).unwrap();
            assert_eq!(r.rach_target, Some(CellId(1)));
            assert_eq!(r.redirect, Some(Msg4Decision::RedirectToSmallCell));
            assert_eq!(r.association().unwrap().ul_cell, CellId(2));
        }
    }

    #[test]
    fn out_of_coverage_fails() {
        let t = arch1();
        let ue = Ue::new(0, Position::new(60_000.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = attach(
            &ue,
            &t,
            &SelectionPolicy::RsrpOnly,
            &AttachParams::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            r.state,
            UeAttachState::Failed {
                reason: FailureReason::OutOfCoverage
            }
        );
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn attach_is_deterministic() {
        let t = arch2();
        let ue = Ue::new(4, Position::new(150.0, 90.0));
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            render_trace(
                &attach(
                    &ue,
                    &t,
                    &SelectionPolicy::RsrpOnly,
                    &AttachParams::default(),
                    &mut rng,
                )
                .unwrap()
                .trace,
            )
        };
        assert_eq!(run(), run());
    }
}
