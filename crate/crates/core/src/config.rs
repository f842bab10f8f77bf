//! Scenario files.
//!
//! Scenarios are TOML: top-level scalars, one table per subsystem and a
//! repeated `[[cell]]` block per base station. Parsing reports every problem
//! it finds, each with a dotted field path. [`serialize_config`] writes every
//! field including defaults, and parsing its output yields an equal config.

use std::cell::RefCell;
use std::collections::BTreeSet;

use toml::{Table, Value};

use crate::architecture::{ArchitectureKind, Topology};
use crate::engine::{
    DropRegion, FixedUe, Flags, PowerConfig, RachConfig, RadioConfig, ScenarioConfig,
};
use crate::error::{ConfigIssue, Error, Result};
use crate::power::{PCmaxPolicy, PowerIndex, SubcarrierAllocation, SubcarrierSpacing};
use crate::radio::{
    BaseStationClass, CarrierMode, Cell, CellId, CellRole, CellSpec, Position, PropagationModel,
};
use crate::selection::{ClassOffsets, CoverageThresholds, SelectionPolicy};

type Issues = RefCell<Vec<ConfigIssue>>;

/// A table being read, tracking which keys were consumed.
struct Section<'a> {
    path: String,
    table: &'a Table,
    used: RefCell<BTreeSet<String>>,
    issues: &'a Issues,
}

impl<'a> Section<'a> {
    fn new(path: impl Into<String>, table: &'a Table, issues: &'a Issues) -> Self {
        Self {
            path: path.into(),
            table,
            used: RefCell::new(BTreeSet::new()),
            issues,
        }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() || key.is_empty() {
            format!("{}{key}", self.path)
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn issue(&self, key: &str, reason: impl Into<String>) {
        self.issues
            .borrow_mut()
            .push(ConfigIssue::new(self.field(key), reason));
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.used.borrow_mut().insert(key.to_string());
        self.table.get(key)
    }

    fn missing(&self, key: &str) {
        self.issue(key, "required field is missing");
    }

    fn opt_f64(&self, key: &str) -> Option<f64> {
        match self.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.issue(key, "expected a number");
                None
            }
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> f64 {
        self.opt_f64(key).unwrap_or(default)
    }

    fn req_f64(&self, key: &str) -> Option<f64> {
        if self.table.get(key).is_none() {
            self.missing(key);
        }
        self.opt_f64(key)
    }

    fn opt_u32(&self, key: &str) -> Option<u32> {
        match self.get(key)? {
            Value::Integer(i) => match u32::try_from(*i) {
                Ok(v) => Some(v),
                Err(_) => {
                    self.issue(
                        key,
                        format!("{i} is out of range for a nonnegative integer"),
                    );
                    None
                }
            },
            _ => {
                self.issue(key, "expected an integer");
                None
            }
        }
    }

    fn u32_or(&self, key: &str, default: u32) -> u32 {
        self.opt_u32(key).unwrap_or(default)
    }

    fn req_u32(&self, key: &str) -> Option<u32> {
        if self.table.get(key).is_none() {
            self.missing(key);
        }
        self.opt_u32(key)
    }

    fn bool_or(&self, key: &str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.issue(key, "expected true or false");
                default
            }
        }
    }

    fn opt_str(&self, key: &str) -> Option<&'a str> {
        match self.get(key)? {
            Value::String(s) => Some(s.as_str()),
            _ => {
                self.issue(key, "expected a string");
                None
            }
        }
    }

    fn req_str(&self, key: &str) -> Option<&'a str> {
        if self.table.get(key).is_none() {
            self.missing(key);
        }
        self.opt_str(key)
    }

    fn enum_or<T: Copy>(&self, key: &str, default: T, options: &[(&str, T)]) -> T {
        let Some(s) = self.opt_str(key) else {
            return default;
        };
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
                self.issue(
                    key,
                    format!("unknown value {s:?}, expected one of {}", names.join(", ")),
                );
                default
            }
        }
    }

    fn array(&self, key: &str) -> Option<&'a Vec<Value>> {
        match self.get(key)? {
            Value::Array(a) => Some(a),
            _ => {
                self.issue(key, "expected an array");
                None
            }
        }
    }

    fn u32_list(&self, key: &str) -> Vec<u32> {
        let Some(a) = self.array(key) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for v in a {
            match v.as_integer().and_then(|i| u32::try_from(i).ok()) {
                Some(i) => out.push(i),
                None => {
                    self.issue(key, "expected an array of nonnegative integers");
                    return Vec::new();
                }
            }
        }
        out
    }

    fn f64_triple(&self, key: &str, default: [f64; 3]) -> [f64; 3] {
        let Some(a) = self.array(key) else {
            return default;
        };
        let vals: Vec<f64> = a
            .iter()
            .filter_map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
            .collect();
        match <[f64; 3]>::try_from(vals) {
            Ok(v) if a.len() == 3 => v,
            _ => {
                self.issue(key, "expected an array of three numbers");
                default
            }
        }
    }

    fn u32_triple(&self, key: &str, default: [u32; 3]) -> [u32; 3] {
        if self.table.get(key).is_none() {
            self.get(key);
            return default;
        }
        let vals = self.u32_list(key);
        match <[u32; 3]>::try_from(vals) {
            Ok(v) => v,
            Err(_) => {
                self.issue(key, "expected an array of three nonnegative integers");
                default
            }
        }
    }

    fn table(&self, key: &str) -> Option<Section<'a>> {
        match self.get(key)? {
            Value::Table(t) => Some(Section::new(self.field(key), t, self.issues)),
            _ => {
                self.issue(key, "expected a table");
                None
            }
        }
    }

    fn tables(&self, key: &str) -> Vec<Section<'a>> {
        let Some(a) = self.array(key) else {
            return Vec::new();
        };
        a.iter()
            .enumerate()
            .filter_map(|(i, v)| match v {
                Value::Table(t) => Some(Section::new(
                    format!("{}[{i}]", self.field(key)),
                    t,
                    self.issues,
                )),
                _ => {
                    self.issue(key, format!("entry {i} is not a table"));
                    None
                }
            })
            .collect()
    }

    /// Flags every key that was never read.
    fn finish(&self) {
        let used = self.used.borrow();
        for key in self.table.keys() {
            if !used.contains(key) {
                self.issue(key, "unknown key");
            }
        }
    }
}

const ARCHITECTURES: [(&str, ArchitectureKind); 3] = [
    ("arch1", ArchitectureKind::Arch1),
    ("arch2", ArchitectureKind::Arch2),
    ("arch3", ArchitectureKind::Arch3),
];
const MODES: [(&str, CarrierMode); 3] = [
    ("standalone", CarrierMode::Standalone),
    ("in_band", CarrierMode::InBand),
    ("guard_band", CarrierMode::GuardBand),
];
const ROLES: [(&str, CellRole); 2] = [
    ("anchor", CellRole::Anchor),
    ("non_anchor", CellRole::NonAnchor),
];
const P_CMAX_POLICIES: [(&str, PCmaxPolicy); 2] = [
    ("interference_safe", PCmaxPolicy::InterferenceSafe),
    ("coverage_first", PCmaxPolicy::CoverageFirst),
];

fn parse_seed(root: &Section) -> Option<u64> {
    if root.table.get("seed").is_none() {
        root.missing("seed");
        return None;
    }
    match root.get("seed")? {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        Value::String(s) => s.parse().ok().or_else(|| {
            root.issue("seed", "expected a 64-bit unsigned integer");
            None
        }),
        _ => {
            root.issue("seed", "expected a 64-bit unsigned integer");
            None
        }
    }
}

fn parse_region(sec: Option<Section>) -> DropRegion {
    let default = DropRegion::UniformDisc {
        center: Position::ORIGIN,
        radius_m: 1000.0,
    };
    let Some(s) = sec else { return default };
    let kind = s.opt_str("distribution").unwrap_or("uniform_disc");
    let region = match kind {
        "uniform_disc" => DropRegion::UniformDisc {
            center: Position::new(s.f64_or("center_x", 0.0), s.f64_or("center_y", 0.0)),
            radius_m: s.f64_or("radius_m", 1000.0),
        },
        "hotspot" => match s.req_u32("cell") {
            Some(cell) => DropRegion::Hotspot {
                cell: CellId(cell),
                radius_m: s.f64_or("radius_m", 50.0),
            },
            None => default,
        },
        other => {
            s.issue(
                "distribution",
                format!("unknown value {other:?}, expected uniform_disc or hotspot"),
            );
            default
        }
    };
    s.finish();
    region
}

fn parse_policy(sec: Option<Section>) -> SelectionPolicy {
    let Some(s) = sec else {
        return SelectionPolicy::RsrpOnly;
    };
    let policy = match s.opt_str("policy").unwrap_or("rsrp_only") {
        "rsrp_only" => SelectionPolicy::RsrpOnly,
        "path_loss" => SelectionPolicy::PathLossBased,
        "hybrid" => SelectionPolicy::Hybrid {
            normal_coverage_rsrp_threshold_dbm: s.req_f64("hybrid_threshold_dbm").unwrap_or(0.0),
        },
        "class_thresholds" => SelectionPolicy::ClassThresholds {
            offsets: ClassOffsets {
                wide_area_db: s.f64_or("offset_wide_area_db", 0.0),
                medium_range_db: s.f64_or("offset_medium_range_db", 0.0),
                local_area_db: s.f64_or("offset_local_area_db", 0.0),
                home_db: s.f64_or("offset_home_db", 0.0),
            },
        },
        "decoupled" => SelectionPolicy::Decoupled,
        other => {
            s.issue(
                "policy",
                format!("unknown value {other:?}, expected rsrp_only, path_loss, hybrid, class_thresholds or decoupled"),
            );
            SelectionPolicy::RsrpOnly
        }
    };
    s.finish();
    policy
}

fn parse_power(sec: Option<Section>) -> PowerConfig {
    let d = PowerConfig::default();
    let Some(s) = sec else { return d };
    let spacing = match s.opt_f64("subcarrier_spacing_khz") {
        None => d.allocation.spacing,
        Some(15.0) => SubcarrierSpacing::Khz15,
        Some(3.75) => SubcarrierSpacing::Khz3_75,
        Some(v) => {
            s.issue(
                "subcarrier_spacing_khz",
                format!("{v} kHz is not 3.75 or 15"),
            );
            d.allocation.spacing
        }
    };
    let num = s.u32_or("num_subcarriers", u32::from(d.allocation.num_subcarriers));
    let j = match s.opt_u32("j") {
        None | Some(1) => PowerIndex::J1,
        Some(2) => PowerIndex::J2,
        Some(other) => {
            s.issue("j", format!("must be 1 or 2, got {other}"));
            PowerIndex::J1
        }
    };
    let p = PowerConfig {
        ue_max_dbm: s.f64_or("ue_max_dbm", d.ue_max_dbm),
        p_o_npusch_dbm: [
            s.f64_or("p_o_npusch_dbm_j1", d.p_o_npusch_dbm[0]),
            s.f64_or("p_o_npusch_dbm_j2", d.p_o_npusch_dbm[1]),
        ],
        alpha: [s.f64_or("alpha_j1", d.alpha[0]), 1.0],
        j,
        allocation: SubcarrierAllocation {
            spacing,
            num_subcarriers: u8::try_from(num).unwrap_or(u8::MAX),
        },
        p_cmax_policy: s.enum_or("p_cmax_policy", d.p_cmax_policy, &P_CMAX_POLICIES),
        preamble_rx_target_dbm: s.f64_or("preamble_rx_target_dbm", d.preamble_rx_target_dbm),
        csg_uplift_cap_db: s.f64_or("csg_uplift_cap_db", d.csg_uplift_cap_db),
    };
    s.finish();
    p
}

/// Per-cell link flags as read from the file.
struct CellLinks {
    s1: bool,
    mib_sib: bool,
    prach: bool,
    x2: Vec<u32>,
}

fn parse_cell(s: &Section, kind: ArchitectureKind) -> Option<(CellSpec, CellLinks)> {
    let id = s.req_u32("id");
    let class_name = s.req_str("class");
    let x = s.req_f64("x");
    let y = s.req_f64("y");
    let nrs = s.req_f64("nrs_power_dbm");
    let ports = s.opt_u32("antenna_ports");
    let class = match class_name {
        Some("wide_area") => Some(BaseStationClass::WideArea),
        Some("medium_range") => Some(BaseStationClass::MediumRange),
        Some("local_area") => Some(BaseStationClass::LocalArea),
        Some("home") => {
            let p = ports.unwrap_or(1);
            if BaseStationClass::HOME_ANTENNA_PORTS
                .iter()
                .any(|&v| u32::from(v) == p)
            {
                Some(BaseStationClass::Home {
                    antenna_ports: p as u8,
                })
            } else {
                s.issue(
                    "antenna_ports",
                    format!("home cells support 1, 2, 4 or 8 ports, got {p}"),
                );
                None
            }
        }
        Some(other) => {
            s.issue(
                "class",
                format!(
                    "unknown value {other:?}, expected wide_area, medium_range, local_area or home"
                ),
            );
            None
        }
        None => None,
    };
    if ports.is_some() && !matches!(class, Some(BaseStationClass::Home { .. }) | None) {
        s.issue("antenna_ports", "only home cells take antenna_ports");
    }
    let class = class?;
    let small = class.is_small_cell();
    let default_role = match kind {
        ArchitectureKind::Arch1 => CellRole::Anchor,
        _ if small => CellRole::NonAnchor,
        _ => CellRole::Anchor,
    };
    let role = s.enum_or("role", default_role, &ROLES);
    let anchor_prb = match role {
        CellRole::Anchor => Some(s.u32_or("anchor_prb", 0)),
        CellRole::NonAnchor => s.opt_u32("anchor_prb"),
    };
    let prop_default = PropagationModel::default_for(class);
    let id = id?;
    let complete = match kind {
        ArchitectureKind::Arch1 => true,
        ArchitectureKind::Arch2 => role == CellRole::Anchor,
        ArchitectureKind::Arch3 => !small,
    };
    let spec = CellSpec {
        id: CellId(id),
        class,
        position: Position::new(x?, y?),
        nrs_power_dbm: nrs?,
        dl_boost_db: s.f64_or("dl_boost_db", 0.0),
        antenna_gain_dbi: s.f64_or("antenna_gain_dbi", 0.0),
        mode: s.enum_or("mode", CarrierMode::Standalone, &MODES),
        frequency_index: s.u32_or("frequency_index", 0),
        role,
        cell_identity: s.u32_or("cell_identity", id),
        anchor_prb,
        non_anchor_prbs: s.u32_list("non_anchor_prbs"),
        propagation: PropagationModel {
            intercept_db: s.f64_or("propagation_intercept_db", prop_default.intercept_db),
            slope_db: s.f64_or("propagation_slope_db", prop_default.slope_db),
        },
        selection_threshold_dbm: s.opt_f64("selection_threshold_dbm"),
        p_cmax_dbm: s.opt_f64("p_cmax_dbm"),
    };
    let links = CellLinks {
        s1: s.bool_or("s1", complete),
        mib_sib: s.bool_or("mib_sib", complete),
        prach: s.bool_or("prach", complete),
        x2: s.u32_list("x2"),
    };
    Some((spec, links))
}

/// Parses and fully validates a scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        Error::config("<document>", e.to_string().trim().to_string())
    })?;
    parse_table(&table)
}

fn parse_table(table: &Table) -> Result<ScenarioConfig> {
    let issues: Issues = RefCell::new(Vec::new());
    let root = Section::new("", table, &issues);

    let name = root.opt_str("name").unwrap_or("").to_string();
    let seed = parse_seed(&root);
    let drops = root.u32_or("drops", 1);
    let ue_count = root.req_u32("ue_count");
    let kind = root.enum_or("architecture", ArchitectureKind::Arch1, &ARCHITECTURES);
    let dropped_ues_csg_members = root.bool_or("dropped_ues_csg_members", false);

    let region = parse_region(root.table("region"));
    let policy = parse_policy(root.table("selection"));

    let radio = match root.table("radio") {
        Some(s) => {
            let r = RadioConfig {
                ue_antenna_gain_dbi: s.f64_or("ue_antenna_gain_dbi", 0.0),
                shadowing_sigma_db: s.f64_or("shadowing_sigma_db", 0.0),
            };
            s.finish();
            r
        }
        None => RadioConfig::default(),
    };
    let power = parse_power(root.table("power"));
    let coverage = match root.table("coverage") {
        Some(s) => {
            let d = CoverageThresholds::default();
            let c = CoverageThresholds {
                max_coupling_loss_db: s.f64_triple("max_coupling_loss_db", d.max_coupling_loss_db),
                repetitions: s.u32_triple("repetitions", d.repetitions),
            };
            s.finish();
            c
        }
        None => CoverageThresholds::default(),
    };
    let rach = match root.table("rach") {
        Some(s) => {
            let d = RachConfig::default();
            let r = RachConfig {
                max_attempts: s.u32_or("max_attempts", d.max_attempts),
                preamble_detection_snr_db: s
                    .f64_or("preamble_detection_snr_db", d.preamble_detection_snr_db),
                msg4_redirect_snr_db: s.f64_or("msg4_redirect_snr_db", d.msg4_redirect_snr_db),
                x2_latency_ms: s.f64_or("x2_latency_ms", d.x2_latency_ms),
            };
            s.finish();
            r
        }
        None => RachConfig::default(),
    };
    let flags = match root.table("flags") {
        Some(s) => {
            let f = Flags {
                protect_macro_ul: s.bool_or("protect_macro_ul", false),
                csg_mode: s.bool_or("csg_mode", false),
                decoupled: s.bool_or("decoupled", false),
            };
            s.finish();
            f
        }
        None => Flags::default(),
    };

    let fixed_ues: Vec<FixedUe> = root
        .tables("fixed_ue")
        .iter()
        .filter_map(|s| {
            let x = s.req_f64("x");
            let y = s.req_f64("y");
            let csg_member = s.bool_or("csg_member", false);
            s.finish();
            Some(FixedUe {
                position: Position::new(x?, y?),
                csg_member,
            })
        })
        .collect();

    if table.get("cell").is_none() {
        root.issue("cell", "at least one [[cell]] is required");
    }
    let mut cells = Vec::new();
    let mut links = Vec::new();
    for s in root.tables("cell") {
        if let Some((spec, l)) = parse_cell(&s, kind) {
            match Cell::new(spec) {
                Ok(cell) => {
                    cells.push(cell);
                    links.push(l);
                }
                Err(e) => s.issue("", cell_error_reason(e)),
            }
        }
        s.finish();
    }
    root.finish();

    let issues = issues.into_inner();
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }

    let mut topology = Topology::new(kind, Vec::new());
    for (cell, l) in cells.iter().zip(&links) {
        if l.s1 {
            topology.s1.insert(cell.id);
        }
        if l.mib_sib {
            topology.broadcast.insert(cell.id);
        }
        if l.prach {
            topology.prach.insert(cell.id);
        }
        for peer in &l.x2 {
            topology.add_x2(cell.id, CellId(*peer));
        }
    }
    topology.cells = cells;

    let config = ScenarioConfig {
        name,
        seed: seed.expect("seed checked above"),
        drops,
        ue_count: ue_count.expect("ue_count checked above"),
        topology,
        region,
        dropped_ues_csg_members,
        fixed_ues,
        policy,
        radio,
        power,
        coverage,
        rach,
        flags,
    };
    config.validate()?;
    Ok(config)
}

fn cell_error_reason(e: Error) -> String {
    match e {
        Error::Config(issues) => issues
            .into_iter()
            .map(|i| i.reason)
            .collect::<Vec<_>>()
            .join("; "),
        Error::InvalidInput(s) => s,
        other => other.to_string(),
    }
}

fn int(v: u32) -> Value {
    Value::Integer(i64::from(v))
}

fn to_table(c: &ScenarioConfig) -> Table {
    let mut root = Table::new();
    root.insert("name".into(), Value::String(c.name.clone()));
    root.insert(
        "seed".into(),
        match i64::try_from(c.seed) {
            Ok(i) => Value::Integer(i),
            Err(_) => Value::String(c.seed.to_string()),
        },
    );
    root.insert("drops".into(), int(c.drops));
    root.insert("ue_count".into(), int(c.ue_count));
    root.insert(
        "architecture".into(),
        Value::String(c.topology.kind.name().into()),
    );
    root.insert(
        "dropped_ues_csg_members".into(),
        Value::Boolean(c.dropped_ues_csg_members),
    );

    let mut region = Table::new();
    match c.region {
        DropRegion::UniformDisc { center, radius_m } => {
            region.insert("distribution".into(), "uniform_disc".into());
            region.insert("center_x".into(), center.x.into());
            region.insert("center_y".into(), center.y.into());
            region.insert("radius_m".into(), radius_m.into());
        }
        DropRegion::Hotspot { cell, radius_m } => {
            region.insert("distribution".into(), "hotspot".into());
            region.insert("cell".into(), int(cell.0));
            region.insert("radius_m".into(), radius_m.into());
        }
    }
    root.insert("region".into(), Value::Table(region));

    let mut sel = Table::new();
    sel.insert("policy".into(), c.policy.name().into());
    match c.policy {
        SelectionPolicy::Hybrid {
            normal_coverage_rsrp_threshold_dbm,
        } => {
            sel.insert(
                "hybrid_threshold_dbm".into(),
                normal_coverage_rsrp_threshold_dbm.into(),
            );
        }
        SelectionPolicy::ClassThresholds { offsets } => {
            sel.insert("offset_wide_area_db".into(), offsets.wide_area_db.into());
            sel.insert(
                "offset_medium_range_db".into(),
                offsets.medium_range_db.into(),
            );
            sel.insert("offset_local_area_db".into(), offsets.local_area_db.into());
            sel.insert("offset_home_db".into(), offsets.home_db.into());
        }
        _ => {}
    }
    root.insert("selection".into(), Value::Table(sel));

    let mut radio = Table::new();
    radio.insert(
        "ue_antenna_gain_dbi".into(),
        c.radio.ue_antenna_gain_dbi.into(),
    );
    radio.insert(
        "shadowing_sigma_db".into(),
        c.radio.shadowing_sigma_db.into(),
    );
    root.insert("radio".into(), Value::Table(radio));

    let p = &c.power;
    let mut power = Table::new();
    power.insert("ue_max_dbm".into(), p.ue_max_dbm.into());
    power.insert("p_o_npusch_dbm_j1".into(), p.p_o_npusch_dbm[0].into());
    power.insert("p_o_npusch_dbm_j2".into(), p.p_o_npusch_dbm[1].into());
    power.insert("alpha_j1".into(), p.alpha[0].into());
    power.insert(
        "j".into(),
        int(match p.j {
            PowerIndex::J1 => 1,
            PowerIndex::J2 => 2,
        }),
    );
    power.insert(
        "subcarrier_spacing_khz".into(),
        p.allocation.spacing.khz().into(),
    );
    power.insert(
        "num_subcarriers".into(),
        int(u32::from(p.allocation.num_subcarriers)),
    );
    power.insert(
        "p_cmax_policy".into(),
        match p.p_cmax_policy {
            PCmaxPolicy::InterferenceSafe => "interference_safe",
            PCmaxPolicy::CoverageFirst => "coverage_first",
        }
        .into(),
    );
    power.insert(
        "preamble_rx_target_dbm".into(),
        p.preamble_rx_target_dbm.into(),
    );
    power.insert("csg_uplift_cap_db".into(), p.csg_uplift_cap_db.into());
    root.insert("power".into(), Value::Table(power));

    let mut coverage = Table::new();
    coverage.insert(
        "max_coupling_loss_db".into(),
        Value::Array(
            c.coverage
                .max_coupling_loss_db
                .iter()
                .map(|v| Value::Float(*v))
                .collect(),
        ),
    );
    coverage.insert(
        "repetitions".into(),
        Value::Array(c.coverage.repetitions.iter().map(|v| int(*v)).collect()),
    );
    root.insert("coverage".into(), Value::Table(coverage));

    let mut rach = Table::new();
    rach.insert("max_attempts".into(), int(c.rach.max_attempts));
    rach.insert(
        "preamble_detection_snr_db".into(),
        c.rach.preamble_detection_snr_db.into(),
    );
    rach.insert(
        "msg4_redirect_snr_db".into(),
        c.rach.msg4_redirect_snr_db.into(),
    );
    rach.insert("x2_latency_ms".into(), c.rach.x2_latency_ms.into());
    root.insert("rach".into(), Value::Table(rach));

    let mut flags = Table::new();
    flags.insert("protect_macro_ul".into(), c.flags.protect_macro_ul.into());
    flags.insert("csg_mode".into(), c.flags.csg_mode.into());
    flags.insert("decoupled".into(), c.flags.decoupled.into());
    root.insert("flags".into(), Value::Table(flags));

    if !c.fixed_ues.is_empty() {
        let ues = c
            .fixed_ues
            .iter()
            .map(|f| {
                let mut t = Table::new();
                t.insert("x".into(), f.position.x.into());
                t.insert("y".into(), f.position.y.into());
                t.insert("csg_member".into(), f.csg_member.into());
                Value::Table(t)
            })
            .collect();
        root.insert("fixed_ue".into(), Value::Array(ues));
    }

    let t = &c.topology;
    let cells = t
        .cells
        .iter()
        .map(|cell| {
            let mut m = Table::new();
            m.insert("id".into(), int(cell.id.0));
            m.insert("class".into(), cell.class.name().into());
            if let BaseStationClass::Home { antenna_ports } = cell.class {
                m.insert("antenna_ports".into(), int(u32::from(antenna_ports)));
            }
            m.insert("x".into(), cell.position.x.into());
            m.insert("y".into(), cell.position.y.into());
            m.insert("nrs_power_dbm".into(), cell.nrs_power_dbm.into());
            m.insert("dl_boost_db".into(), cell.dl_boost_db.into());
            m.insert("antenna_gain_dbi".into(), cell.antenna_gain_dbi.into());
            m.insert("mode".into(), cell.mode.name().into());
            m.insert("frequency_index".into(), int(cell.frequency_index));
            m.insert("role".into(), cell.role.name().into());
            m.insert("cell_identity".into(), int(cell.cell_identity));
            if let Some(prb) = cell.anchor_prb {
                m.insert("anchor_prb".into(), int(prb));
            }
            m.insert(
                "non_anchor_prbs".into(),
                Value::Array(cell.non_anchor_prbs.iter().map(|p| int(*p)).collect()),
            );
            m.insert(
                "propagation_intercept_db".into(),
                cell.propagation.intercept_db.into(),
            );
            m.insert(
                "propagation_slope_db".into(),
                cell.propagation.slope_db.into(),
            );
            if let Some(v) = cell.selection_threshold_dbm {
                m.insert("selection_threshold_dbm".into(), v.into());
            }
            if let Some(v) = cell.p_cmax_dbm {
                m.insert("p_cmax_dbm".into(), v.into());
            }
            m.insert("s1".into(), t.s1.contains(&cell.id).into());
            m.insert("mib_sib".into(), t.broadcast.contains(&cell.id).into());
            m.insert("prach".into(), t.prach.contains(&cell.id).into());
            m.insert(
                "x2".into(),
                Value::Array(t.x2_neighbors(cell.id).map(|id| int(id.0)).collect()),
            );
            Value::Table(m)
        })
        .collect();
    root.insert("cell".into(), Value::Array(cells));
    root
}

/// Writes every field, defaults included.
pub fn serialize_config(c: &ScenarioConfig) -> String {
    toml::to_string(&to_table(c)).expect("config tables always serialize")
}

fn parse_override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Keys that only exist for some value of a selector key.
const VARIANT_KEYS: &[(&str, &str, &[&str])] = &[
    (
        "selection",
        "policy",
        &[
            "hybrid_threshold_dbm",
            "offset_wide_area_db",
            "offset_medium_range_db",
            "offset_local_area_db",
            "offset_home_db",
        ],
    ),
    ("region", "distribution", &["center_x", "center_y", "cell"]),
];

/// Sets `path = value` pairs on a config and re-validates it.
///
/// Paths are dotted config fields. `cell.<id>.<field>` addresses a cell by id
/// and `fixed_ue.<n>.<field>` a fixed UE by position. Keys the schema does not
/// know are rejected by the parser.
pub fn apply_overrides(
    config: &ScenarioConfig,
    overrides: &[(String, String)],
) -> Result<ScenarioConfig> {
    let mut table = to_table(config);
    let mut issues = Vec::new();
    // Switching a variant drops the old variant's keys unless they are set too.
    for (section, selector, dependents) in VARIANT_KEYS {
        let selector_path = format!("{section}.{selector}");
        if !overrides.iter().any(|(p, _)| *p == selector_path) {
            continue;
        }
        if let Some(Value::Table(t)) = table.get_mut(*section) {
            for key in *dependents {
                let path = format!("{section}.{key}");
                if !overrides.iter().any(|(p, _)| *p == path) {
                    t.remove(*key);
                }
            }
        }
    }
    for (path, raw) in overrides {
        if let Err(reason) = set_path(&mut table, path, parse_override_value(raw)) {
            issues.push(ConfigIssue::new(path.clone(), reason));
        }
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    parse_table(&table)
}

fn set_path(root: &mut Table, path: &str, value: Value) -> std::result::Result<(), String> {
    let parts: Vec<&str> = path.split('.').collect();
    let mut table = root;
    let mut i = 0;
    while i + 1 < parts.len() {
        let key = parts[i];
        match key {
            "cell" | "fixed_ue" => {
                let sel = parts.get(i + 1).ok_or("missing element selector")?;
                let n: u32 = sel
                    .parse()
                    .map_err(|_| format!("{sel:?} is not a number"))?;
                let Some(Value::Array(items)) = table.get_mut(key) else {
                    return Err(format!("no {key} entries"));
                };
                let found = if key == "cell" {
                    items
                        .iter_mut()
                        .find(|v| v.get("id").and_then(Value::as_integer) == Some(i64::from(n)))
                } else {
                    items.get_mut(n as usize)
                };
                table = match found {
                    Some(Value::Table(t)) => t,
                    _ => return Err(format!("no {key} {n}")),
                };
                i += 2;
            }
            _ => {
                let entry = table
                    .entry(key.to_string())
                    .or_insert_with(|| Value::Table(Table::new()));
                table = match entry {
                    Value::Table(t) => t,
                    _ => return Err(format!("{key} is not a section")),
                };
                i += 1;
            }
        }
    }
    let last = parts
        .get(i)
        .filter(|k| !k.is_empty())
        .ok_or("path does not name a field")?;
    table.insert(last.to_string(), value);
    Ok(())
}
