//! Running a scenario end to end and writing its output bundle.
//!
//! Everything is computed in memory first, then each file goes to a temp file
//! in the target directory and is renamed into place. A failed run leaves no
//! new files behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::config::{apply_overrides, parse_config, serialize_config};
use crate::engine::{run_campaign, CampaignReport, ScenarioConfig, Stats};
use crate::error::{Error, Result};
use crate::presets::{preset_config, PresetScenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Env var consulted when no output directory is given.
pub const OUT_DIR_ENV: &str = "NBSIM_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioSource {
    ConfigFile(PathBuf),
    Preset(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRequest {
    pub source: ScenarioSource,
    /// `path = value` pairs applied after loading.
    pub overrides: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub format: OutputFormat,
    pub trace: bool,
    pub verbosity: u8,
}

impl RunRequest {
    pub fn new(source: ScenarioSource) -> Self {
        Self {
            source,
            overrides: Vec::new(),
            seed: None,
            out_dir: None,
            format: OutputFormat::Csv,
            trace: false,
            verbosity: 0,
        }
    }
}

/// File name and contents, in write order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputBundle {
    pub files: Vec<(String, Vec<u8>)>,
}

impl OutputBundle {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: Option<PathBuf>,
    pub bundle: Option<OutputBundle>,
    pub error: Option<Error>,
}

/// Loads the scenario a request names, with overrides and seed applied.
pub fn resolve_config(req: &RunRequest) -> Result<ScenarioConfig> {
    let mut config = match &req.source {
        ScenarioSource::ConfigFile(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::config("config", format!("cannot read {}: {e}", path.display()))
            })?;
            parse_config(&text)?
        }
        ScenarioSource::Preset(name) => preset_config(name.parse::<PresetScenario>()?),
    };
    if !req.overrides.is_empty() {
        config = apply_overrides(&config, &req.overrides)?;
    }
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn resolve_out_dir(req: &RunRequest) -> Result<PathBuf> {
    if let Some(d) = &req.out_dir {
        return Ok(d.clone());
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => Ok(PathBuf::from(d)),
        _ => Err(Error::config(
            "out",
            format!("no output directory; pass --out or set {OUT_DIR_ENV}"),
        )),
    }
}

/// Runs a request and writes its bundle. Never panics on bad input; the exit
/// code tells config errors (1) from runtime failures (2).
pub fn execute(req: &RunRequest) -> RunOutcome {
    let fail = |code, out_dir, e| RunOutcome {
        exit_code: code,
        out_dir,
        bundle: None,
        error: Some(e),
    };
    let (config, dir) = match resolve_config(req).and_then(|c| Ok((c, resolve_out_dir(req)?))) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_CONFIG, None, e),
    };
    if req.verbosity > 0 {
        eprintln!(
            "running {} ({} drops x {} UEs, seed {})",
            if config.name.is_empty() {
                "scenario"
            } else {
                &config.name
            },
            config.drops,
            config.ue_count,
            config.seed
        );
    }
    let bundle = match run_campaign(&config)
        .and_then(|r| render_bundle(&config, &r, req.format, req.trace))
    {
        Ok(b) => b,
        Err(e) => return fail(EXIT_RUNTIME, Some(dir), e),
    };
    if let Err(e) = write_bundle(&bundle, &dir) {
        return fail(EXIT_RUNTIME, Some(dir), e);
    }
    if req.verbosity > 0 {
        eprintln!("wrote {} files to {}", bundle.files.len(), dir.display());
    }
    RunOutcome {
        exit_code: EXIT_OK,
        out_dir: Some(dir),
        bundle: Some(bundle),
        error: None,
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    architecture: &'a str,
    seed: u64,
    metric: String,
    mean: Option<f64>,
    p5: Option<f64>,
    p50: Option<f64>,
    p95: Option<f64>,
    samples: usize,
}

#[derive(Serialize)]
struct DropRow {
    drop: u32,
    ue_count: u32,
    coverage_probability: f64,
    connected_fraction: f64,
    mean_tx_power_dbm: Option<f64>,
    mean_energy_proxy_mj: Option<f64>,
    redirect_rate: Option<f64>,
    x2_latency_ms: f64,
}

#[derive(Serialize)]
struct UeRow {
    drop: u32,
    ue_id: u32,
    x: f64,
    y: f64,
    csg_member: bool,
    outcome: &'static str,
    dl_cell: Option<u32>,
    ul_cell: Option<u32>,
    ce_level: &'static str,
    reps: Option<u32>,
    tx_power_dbm: Option<f64>,
    energy_proxy: Option<f64>,
    redirected: Option<bool>,
}

#[derive(Serialize)]
struct CellRow {
    drop: u32,
    cell_id: u32,
    iot_db: Option<f64>,
}

/// CSV form of [`CellRow`]: a cell with no interferers reads `none`.
#[derive(Serialize)]
struct CellCsvRow {
    drop: u32,
    cell_id: u32,
    iot_db: String,
}

impl From<CellRow> for CellCsvRow {
    fn from(r: CellRow) -> Self {
        Self {
            drop: r.drop,
            cell_id: r.cell_id,
            iot_db: r
                .iot_db
                .map_or_else(|| "none".to_string(), |v| v.to_string()),
        }
    }
}

fn summary_rows(report: &CampaignReport) -> Vec<SummaryRow<'_>> {
    let s = &report.summary;
    let mut metrics: Vec<(String, Option<Stats>)> = vec![
        ("coverage_probability".into(), Some(s.coverage_probability)),
        ("connected_fraction".into(), Some(s.connected_fraction)),
        ("mean_tx_power_dbm".into(), s.mean_tx_power_dbm),
        ("mean_energy_proxy_mj".into(), s.mean_energy_proxy_mj),
        ("redirect_rate".into(), s.redirect_rate),
    ];
    for c in &s.cells {
        metrics.push((format!("iot_db.cell{}", c.cell_id), c.iot_db));
    }
    metrics
        .into_iter()
        .map(|(metric, st)| SummaryRow {
            scenario: &s.scenario,
            architecture: s.architecture,
            seed: s.seed,
            metric,
            mean: st.map(|v| v.mean),
            p5: st.map(|v| v.p5),
            p50: st.map(|v| v.p50),
            p95: st.map(|v| v.p95),
            samples: st.map_or(0, |v| v.samples),
        })
        .collect()
}

fn drop_rows(report: &CampaignReport) -> Vec<DropRow> {
    report
        .drops
        .iter()
        .map(|d| {
            let s = &d.summary;
            DropRow {
                drop: s.drop_index,
                ue_count: s.ue_count,
                coverage_probability: s.coverage_probability,
                connected_fraction: s.connected_fraction,
                mean_tx_power_dbm: s.mean_tx_power_dbm,
                mean_energy_proxy_mj: s.mean_energy_proxy_mj,
                redirect_rate: s.redirect_rate,
                x2_latency_ms: s.x2_latency_ms,
            }
        })
        .collect()
}

fn ue_rows(report: &CampaignReport) -> Vec<UeRow> {
    report
        .drops
        .iter()
        .flat_map(|d| {
            d.ues.iter().map(move |u| UeRow {
                drop: d.summary.drop_index,
                ue_id: u.ue_id.0,
                x: u.x,
                y: u.y,
                csg_member: u.csg_member,
                outcome: match u.outcome {
                    crate::engine::AttachOutcome::Connected => "connected",
                    crate::engine::AttachOutcome::OutOfCoverage => "out_of_coverage",
                    crate::engine::AttachOutcome::RachFailure => "rach_failure",
                },
                dl_cell: u.dl_cell.map(|c| c.0),
                ul_cell: u.ul_cell.map(|c| c.0),
                ce_level: u.ce_level.name(),
                reps: u.reps,
                tx_power_dbm: u.tx_power_dbm,
                energy_proxy: u.energy_proxy_mj,
                redirected: u.redirected,
            })
        })
        .collect()
}

fn cell_rows(report: &CampaignReport) -> Vec<CellRow> {
    report
        .drops
        .iter()
        .flat_map(|d| {
            d.cells.iter().map(move |c| CellRow {
                drop: d.summary.drop_index,
                cell_id: c.cell_id.0,
                iot_db: c.iot_db,
            })
        })
        .collect()
}

/// CSV with a header row even when there are no records.
fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| Error::Serialize(e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Serialize(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serialize(e.to_string()))
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "scenario",
    "architecture",
    "seed",
    "metric",
    "mean",
    "p5",
    "p50",
    "p95",
    "samples",
];
pub const DROP_COLUMNS: [&str; 8] = [
    "drop",
    "ue_count",
    "coverage_probability",
    "connected_fraction",
    "mean_tx_power_dbm",
    "mean_energy_proxy_mj",
    "redirect_rate",
    "x2_latency_ms",
];
pub const UE_COLUMNS: [&str; 13] = [
    "drop",
    "ue_id",
    "x",
    "y",
    "csg_member",
    "outcome",
    "dl_cell",
    "ul_cell",
    "ce_level",
    "reps",
    "tx_power_dbm",
    "energy_proxy",
    "redirected",
];
pub const CELL_COLUMNS: [&str; 3] = ["drop", "cell_id", "iot_db"];

/// Renders every output file without touching the filesystem.
pub fn render_bundle(
    config: &ScenarioConfig,
    report: &CampaignReport,
    format: OutputFormat,
    trace: bool,
) -> Result<OutputBundle> {
    let ext = format.extension();
    let (summary, drops, ues, cells) = match format {
        OutputFormat::Csv => (
            to_csv(&summary_rows(report), &SUMMARY_COLUMNS)?,
            to_csv(&drop_rows(report), &DROP_COLUMNS)?,
            to_csv(&ue_rows(report), &UE_COLUMNS)?,
            to_csv(
                &cell_rows(report)
                    .into_iter()
                    .map(CellCsvRow::from)
                    .collect::<Vec<_>>(),
                &CELL_COLUMNS,
            )?,
        ),
        OutputFormat::Json => (
            to_json(&report.summary)?,
            to_json(&drop_rows(report))?,
            to_json(&ue_rows(report))?,
            to_json(&cell_rows(report))?,
        ),
    };
    let mut files = vec![
        (format!("summary.{ext}"), summary),
        (format!("drops.{ext}"), drops),
        (format!("ues.{ext}"), ues),
        (format!("cells.{ext}"), cells),
    ];
    if trace {
        let mut log = String::new();
        for d in &report.drops {
            for e in &d.trace {
                log.push_str(&format!("{e} drop={}\n", d.summary.drop_index));
            }
        }
        files.push(("trace.log".into(), log.into_bytes()));
    }
    files.push((
        "resolved_config.toml".into(),
        serialize_config(config).into_bytes(),
    ));
    Ok(OutputBundle { files })
}

/// Writes a bundle into `dir`, replacing same-named files atomically.
///
/// All temp files are written before any rename. If a rename fails, files
/// this call created are removed again.
pub fn write_bundle(bundle: &OutputBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::with_capacity(bundle.files.len());
    for (name, bytes) in &bundle.files {
        let mut tmp = NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((dir.join(name), tmp));
    }
    let mut created = Vec::new();
    let mut written = Vec::new();
    for (path, tmp) in staged {
        let existed = path.exists();
        if let Err(e) = tmp.persist(&path) {
            for p in created {
                let _ = fs::remove_file(p);
            }
            return Err(Error::Io(e.error));
        }
        if !existed {
            created.push(path.clone());
        }
        written.push(path);
    }
    Ok(written)
}

/// Runs a config and writes its outputs; the non-CLI entry point.
pub fn write_outputs(
    config: &ScenarioConfig,
    report: &CampaignReport,
    format: OutputFormat,
    trace: bool,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    write_bundle(&render_bundle(config, report, format, trace)?, dir)
}
