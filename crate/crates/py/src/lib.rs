//! Python bindings.
//!
//! Scalar models are plain functions. Scenarios are wrapped in [`Scenario`],
//! whose run results come back as dicts decoded from the same JSON the CLI
//! writes.

use std::path::PathBuf;

use nbsim_core::cli::{write_outputs, OutputFormat};
use nbsim_core::error::Error;
use nbsim_core::power::{self, MFactor, NpuschPowerParams, PowerIndex};
use nbsim_core::radio::{self, BaseStationClass, PropagationModel};
use nbsim_core::selection::{assign_coverage_level, CeLevel, CoverageThresholds};
use nbsim_core::{
    apply_overrides, parse_config, preset_config, run_campaign, run_drop, serialize_config,
    PresetScenario, ScenarioConfig,
};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Topology(_) | Error::InvalidInput(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_class(name: &str, antenna_ports: u8) -> PyResult<BaseStationClass> {
    let class = match name {
        "wide_area" => BaseStationClass::WideArea,
        "medium_range" => BaseStationClass::MediumRange,
        "local_area" => BaseStationClass::LocalArea,
        "home" => BaseStationClass::Home { antenna_ports },
        other => return Err(PyValueError::new_err(format!("unknown class {other:?}"))),
    };
    if !class.is_valid() {
        return Err(PyValueError::new_err(format!(
            "home cells take 1, 2, 4 or 8 antenna ports, got {antenna_ports}"
        )));
    }
    Ok(class)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Log-distance path loss in dB for a cell class at `distance_m`.
#[pyfunction]
fn path_loss_db(class_name: &str, distance_m: f64) -> PyResult<f64> {
    let class = parse_class(class_name, 1)?;
    Ok(PropagationModel::default_for(class).loss_at(distance_m))
}

/// Coupling loss with the class floor applied.
#[pyfunction]
#[pyo3(signature = (class_name, path_loss_db, tx_gain_dbi=0.0, ue_gain_dbi=0.0, antenna_ports=1))]
fn coupling_loss_db(
    class_name: &str,
    path_loss_db: f64,
    tx_gain_dbi: f64,
    ue_gain_dbi: f64,
    antenna_ports: u8,
) -> PyResult<f64> {
    let class = parse_class(class_name, antenna_ports)?;
    Ok(radio::coupling_loss_from_path_loss(
        class,
        path_loss_db,
        tx_gain_dbi,
        ue_gain_dbi,
    ))
}

/// Maximum DL output power for a class, in dBm.
#[pyfunction]
#[pyo3(signature = (class_name, antenna_ports=1))]
fn max_output_power_dbm(class_name: &str, antenna_ports: u8) -> PyResult<f64> {
    parse_class(class_name, antenna_ports)?
        .max_output_power_dbm()
        .ok_or_else(|| PyValueError::new_err("class has no power cap"))
}

#[pyfunction]
#[pyo3(signature = (bandwidth_hz=radio::NB_IOT_BANDWIDTH_HZ))]
fn thermal_noise_dbm(bandwidth_hz: f64) -> PyResult<f64> {
    radio::thermal_noise_dbm(bandwidth_hz).map_err(to_py)
}

/// NPUSCH transmit power in dBm. `m` is one of 0.25, 1, 3, 6, 12.
#[pyfunction]
#[pyo3(signature = (p_cmax_dbm, p_o_dbm, alpha, m, path_loss_db, repetitions=1, j=1))]
fn npusch_tx_power(
    p_cmax_dbm: f64,
    p_o_dbm: f64,
    alpha: f64,
    m: f64,
    path_loss_db: f64,
    repetitions: u32,
    j: u8,
) -> PyResult<f64> {
    let m_npusch = MFactor::from_value(m).map_err(to_py)?;
    let (j, alpha) = match j {
        1 => (PowerIndex::J1, [alpha, 1.0]),
        2 => (PowerIndex::J2, [1.0, alpha]),
        _ => return Err(PyValueError::new_err("j must be 1 or 2")),
    };
    let p = NpuschPowerParams {
        p_cmax_dbm,
        p_o_npusch_dbm: [p_o_dbm, p_o_dbm],
        alpha,
        m_npusch,
        path_loss_db,
        repetitions,
        j,
    };
    p.validate().map_err(to_py)?;
    Ok(power::npusch_tx_power(&p))
}

fn ce_from_name(name: &str) -> PyResult<CeLevel> {
    CeLevel::SERVED
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| PyValueError::new_err(format!("unknown CE level {name:?}")))
}

/// NPRACH transmit power in dBm for CE level "CE0", "CE1" or "CE2".
#[pyfunction]
fn nprach_tx_power(
    p_cmax_dbm: f64,
    preamble_rx_target_dbm: f64,
    path_loss_db: f64,
    ce_level: &str,
) -> PyResult<f64> {
    Ok(power::nprach_tx_power(
        p_cmax_dbm,
        preamble_rx_target_dbm,
        path_loss_db,
        ce_from_name(ce_level)?,
    ))
}

/// `(level, repetitions)` for a coupling loss under the default thresholds.
#[pyfunction]
fn coverage_level(coupling_loss_db: f64) -> (String, Option<u32>) {
    let c = assign_coverage_level(coupling_loss_db, &CoverageThresholds::default());
    (c.level.name().to_string(), c.repetitions)
}

/// A validated scenario.
#[pyclass(module = "nbsim")]
struct Scenario {
    config: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    /// A built-in scenario with optional `[(path, value), ...]` overrides.
    #[staticmethod]
    #[pyo3(signature = (name, overrides=None))]
    fn from_preset(name: &str, overrides: Option<Vec<(String, String)>>) -> PyResult<Self> {
        let preset: PresetScenario = name.parse().map_err(to_py)?;
        let mut config = preset_config(preset);
        if let Some(o) = overrides.filter(|o| !o.is_empty()) {
            config = apply_overrides(&config, &o).map_err(to_py)?;
        }
        Ok(Self { config })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            config: parse_config(text).map_err(to_py)?,
        })
    }

    /// A copy with `[(path, value), ...]` applied.
    fn with_overrides(&self, overrides: Vec<(String, String)>) -> PyResult<Self> {
        Ok(Self {
            config: apply_overrides(&self.config, &overrides).map_err(to_py)?,
        })
    }

    fn to_toml(&self) -> String {
        serialize_config(&self.config)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.config.name
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.config.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.config.seed = seed;
    }

    #[getter]
    fn drops(&self) -> u32 {
        self.config.drops
    }

    #[getter]
    fn ue_count(&self) -> u32 {
        self.config.ue_count
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        self.config.topology.kind.name()
    }

    fn run_drop<'py>(&self, py: Python<'py>, drop_index: u32) -> PyResult<Bound<'py, PyAny>> {
        let config = &self.config;
        let report = py.detach(|| run_drop(config, drop_index)).map_err(to_py)?;
        json_to_py(py, &report)
    }

    fn run_campaign<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let config = &self.config;
        let report = py.detach(|| run_campaign(config)).map_err(to_py)?;
        json_to_py(py, &report)
    }

    /// Runs the campaign and writes the same bundle as the CLI.
    #[pyo3(signature = (out_dir, format="csv", trace=false))]
    fn write(
        &self,
        py: Python<'_>,
        out_dir: PathBuf,
        format: &str,
        trace: bool,
    ) -> PyResult<Vec<String>> {
        let format = match format {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            other => return Err(PyValueError::new_err(format!("unknown format {other:?}"))),
        };
        let config = &self.config;
        let paths = py
            .detach(|| {
                let report = run_campaign(config)?;
                write_outputs(config, &report, format, trace, &out_dir)
            })
            .map_err(to_py)?;
        Ok(paths.iter().map(|p| p.display().to_string()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, architecture={}, seed={}, drops={}, ue_count={})",
            self.config.name,
            self.config.topology.kind.name(),
            self.config.seed,
            self.config.drops,
            self.config.ue_count
        )
    }
}

#[pymodule]
fn nbsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(path_loss_db, m)?)?;
    m.add_function(wrap_pyfunction!(coupling_loss_db, m)?)?;
    m.add_function(wrap_pyfunction!(max_output_power_dbm, m)?)?;
    m.add_function(wrap_pyfunction!(thermal_noise_dbm, m)?)?;
    m.add_function(wrap_pyfunction!(npusch_tx_power, m)?)?;
    m.add_function(wrap_pyfunction!(nprach_tx_power, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_level, m)?)?;
    m.add_class::<Scenario>()?;
    m.add("PRESETS", PresetScenario::ALL.map(|p| p.name()).to_vec())?;
    Ok(())
}
