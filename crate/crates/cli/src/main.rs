use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use nbsim_core::cli::{execute, OutputFormat, RunRequest, ScenarioSource, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "nbsim", version, about = "Seeded NB-IoT HetNet simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its output bundle.
    #[command(group(ArgGroup::new("scenario").required(true).args(["config", "preset"])))]
    Run {
        /// Scenario file (TOML).
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Built-in scenario: fig3a, fig3b, homogeneous, decoupled-demo.
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to $NBSIM_OUT.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write the attach trace.
        #[arg(long)]
        trace: bool,
        /// Set a config field, e.g. --set flags.protect_macro_ul=true.
        #[arg(long = "set", value_name = "PATH=VALUE", value_parser = parse_kv)]
        overrides: Vec<(String, String)>,
        #[arg(short, long, action = clap::ArgAction::Count)]
        verbose: u8,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected PATH=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let Command::Run {
        config,
        preset,
        seed,
        out,
        format,
        trace,
        overrides,
        verbose,
    } = cli.command;
    let source = match (config, preset) {
        (Some(path), None) => ScenarioSource::ConfigFile(path),
        (None, Some(name)) => ScenarioSource::Preset(name),
        _ => unreachable!("clap enforces exactly one scenario source"),
    };
    let req = RunRequest {
        source,
        overrides,
        seed,
        out_dir: out,
        format: match format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        },
        trace,
        verbosity: verbose,
    };
    let outcome = execute(&req);
    if let Some(e) = &outcome.error {
        eprintln!("nbsim: {e}");
    }
    ExitCode::from(outcome.exit_code as u8)
}
