//! `locfisher`: local Fisher information sweeps, composite breakdowns,
//! Monte Carlo checks and the acceptance battery.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 numerical error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use locfisher::dynamics::DerivativeStrategy;
use locfisher::io::{GridScale, InitialState, MatrixJson, ScenarioFile, TimeGrid};
use locfisher::scenarios::Preset;
use locfisher::validation::Tolerances;

use config::{default_time, first_basis_state, resolve_model, EstimatorChoice, MonteCarloConfig, RunConfig, SweepConfig};

pub const SCHEMA: &str = include_str!("../schema/validation-report.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scale {
    Lin,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Strategy {
    Analytic,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitialKind {
    Iid,
    Entangled,
    File,
}

#[derive(Parser, Debug)]
#[command(name = "locfisher", version, about = "Fisher information under local observables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Table of t, J_single, j_N, J_N, blank term and accessible trace over a time grid.
    FisherSweep(SweepArgs),
    /// Per-block breakdown of J_N over a time grid.
    Composite(CompositeArgs),
    /// Simulated measurements of an estimator; one CSV row per repeat.
    Montecarlo(MonteCarloArgs),
    /// Run the acceptance battery.
    Validate(ValidateArgs),
    /// Replay a configuration echoed in an earlier output's metadata.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print the JSON schema of `validate --json` output.
    Schema,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Preset (two_level_single, two_level_iid2, two_level_ent2), `two_level_decay`, or a model file.
    #[arg(long, default_value = "two_level_single")]
    model: String,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    gamma_plus: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    gamma_minus: f64,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value_t = 1e-4, allow_negative_numbers = true)]
    g: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    t_start: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    t_stop: f64,
    #[arg(long, default_value_t = 50)]
    t_points: usize,
    #[arg(long, value_enum, default_value_t = Scale::Lin)]
    t_scale: Scale,
}

#[derive(Args, Debug, Clone)]
struct OutputArgs {
    /// Output file; stdout if omitted. CSV output also writes `<out>.meta.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Scenario file `{N, model, initial_state, g, t_grid}`; overrides the model and grid flags.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Strategy::Analytic)]
    strategy: Strategy,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CompositeArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Number of subsystems; defaults to the preset's.
    #[arg(long = "N", alias = "n")]
    n: Option<usize>,
    #[arg(long, value_enum)]
    initial: Option<InitialKind>,
    /// Density matrix for `--initial file` (a JSON matrix of [re, im] pairs on M^N).
    #[arg(long)]
    initial_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MonteCarloArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    g: f64,
    /// Evolution time; defaults to the optimal time of two-level models.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    shots: usize,
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Optimal)]
    estimator: EstimatorChoice,
    /// Comma-separated sizes for the averaged-estimator variance check, e.g. `1,2,4,8`.
    #[arg(long, value_delimiter = ',')]
    averaging: Vec<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Print the machine-readable report instead of one line per criterion.
    #[arg(long)]
    json: bool,
    /// Harness self-test: make criterion ID fail by setting its tolerances to -inf.
    #[arg(long, value_name = "ID")]
    perturb: Option<usize>,
    /// Comma-separated subset of criteria.
    #[arg(long, value_delimiter = ',')]
    only: Vec<usize>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn strategy(s: Strategy) -> DerivativeStrategy {
    match s {
        Strategy::Analytic => DerivativeStrategy::Analytic,
        Strategy::Fd => DerivativeStrategy::FiniteDifference,
    }
}

fn grid(g: &GridArgs) -> TimeGrid {
    TimeGrid {
        start: g.t_start,
        stop: g.t_stop,
        points: g.t_points,
        scale: match g.t_scale {
            Scale::Lin => GridScale::Lin,
            Scale::Log => GridScale::Log,
        },
    }
}

fn preset_initial(p: Option<Preset>, dim: usize) -> (usize, InitialState) {
    let plus = MatrixJson::from(&first_basis_state(dim));
    match p {
        Some(Preset::TwoLevelIid2) => (2, InitialState::Iid { state: plus }),
        Some(Preset::TwoLevelEnt2) => (2, InitialState::EntangledPair),
        _ => (1, InitialState::Iid { state: plus }),
    }
}

fn sweep_config(a: &SweepArgs) -> Result<SweepConfig, CliError> {
    if let Some(path) = &a.scenario {
        let file = ScenarioFile::from_json(&read(path)?).map_err(|e| CliError::Config(e.to_string()))?;
        return Ok(SweepConfig::from_scenario(file, strategy(a.strategy)));
    }
    let model = resolve_model(&a.model.model, a.model.gamma_plus, a.model.gamma_minus)?;
    let dim = model.spec.channels().map_err(|e| CliError::Config(format!("model: {e}")))?.dim_m();
    let (n, initial_state) = preset_initial(model.preset, dim);
    Ok(SweepConfig {
        n,
        model: model.spec,
        initial_state,
        g: a.grid.g,
        t_grid: grid(&a.grid),
        strategy: strategy(a.strategy),
    })
}

fn composite_config(a: &CompositeArgs) -> Result<SweepConfig, CliError> {
    let mut cfg = sweep_config(&a.sweep)?;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    match a.initial {
        None => {}
        Some(InitialKind::Entangled) => cfg.initial_state = InitialState::EntangledPair,
        Some(InitialKind::Iid) => {
            if !matches!(cfg.initial_state, InitialState::Iid { .. }) {
                let dim = cfg.model.channels().map_err(|e| CliError::Config(e.to_string()))?.dim_m();
                cfg.initial_state = InitialState::Iid {
                    state: MatrixJson::from(&first_basis_state(dim)),
                };
            }
        }
        Some(InitialKind::File) => {
            let path = a
                .initial_file
                .as_ref()
                .ok_or_else(|| CliError::Config("--initial file needs --initial-file <path>".into()))?;
            let matrix: MatrixJson = serde_json::from_str(&read(path)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg.initial_state = InitialState::Explicit { matrix };
        }
    }
    Ok(cfg)
}

fn montecarlo_config(a: &MonteCarloArgs) -> Result<MonteCarloConfig, CliError> {
    let model = resolve_model(&a.model.model, a.model.gamma_plus, a.model.gamma_minus)?;
    if matches!(model.preset, Some(p) if p.n_subsystems() != 1) {
        return Err(CliError::Config("montecarlo runs on a single system; use two_level_single or a model file".into()));
    }
    let dim = model.spec.channels().map_err(|e| CliError::Config(format!("model: {e}")))?.dim_m();
    let t = match a.t.or_else(|| default_time(&model.spec)) {
        Some(t) => t,
        None => return Err(CliError::Config("--t is required for this model".into())),
    };
    Ok(MonteCarloConfig {
        model: model.spec,
        initial_state: MatrixJson::from(&first_basis_state(dim)),
        g: a.g,
        t,
        shots: a.shots,
        repeats: a.repeats,
        seed: a.seed,
        estimator: a.estimator,
        averaging: a.averaging.clone(),
    })
}

fn write_output(out: &commands::Output, args: &OutputArgs) -> Result<(), CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", p.display()));
    match &args.out {
        None => print!("{}", out.body),
        Some(path) => {
            std::fs::write(path, &out.body).map_err(|e| io(path, e))?;
            if let Some(meta) = &out.meta {
                let mut side = path.clone().into_os_string();
                side.push(".meta.json");
                let side = PathBuf::from(side);
                let mut text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Numeric(e.to_string()))?;
                text.push('\n');
                std::fs::write(&side, text).map_err(|e| io(&side, e))?;
            }
        }
    }
    Ok(())
}

fn execute(config: RunConfig, output: &OutputArgs) -> Result<(), CliError> {
    let out = commands::run(&config, output.format)?;
    write_output(&out, output)
}

/// Caps rayon's pool at `LOCFISHER_THREADS` workers when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LOCFISHER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("LOCFISHER_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::FisherSweep(a) => execute(RunConfig::FisherSweep(sweep_config(&a)?), &a.output),
        Command::Composite(a) => {
            let cfg = composite_config(&a)?;
            execute(RunConfig::Composite(cfg), &a.sweep.output)
        }
        Command::Montecarlo(a) => execute(RunConfig::Montecarlo(montecarlo_config(&a)?), &a.output),
        Command::Run { config, output } => {
            let text = read(&config)?;
            // accept either a bare config or a whole metadata/JSON output that embeds one
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            let inner = value.get("config").cloned().unwrap_or(value);
            let cfg: RunConfig = serde_json::from_value(inner).map_err(|e| CliError::Config(format!("config: {e}")))?;
            execute(cfg, &output)
        }
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(())
        }
        Command::Validate(a) => {
            let mut tol = Tolerances::default();
            if let Some(id) = a.perturb {
                tol = tol.perturbed(id).map_err(|e| CliError::Config(e.to_string()))?;
            }
            if let Some(&bad) = a.only.iter().find(|&&id| id == 0 || id > locfisher::validation::CRITERIA) {
                return Err(CliError::Config(format!("no criterion {bad}")));
            }
            let report = commands::validate(&tol, &a.only, a.json);
            if a.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).map_err(|e| CliError::Numeric(e.to_string()))?
                );
            }
            if report.passed {
                Ok(())
            } else {
                let failed: Vec<String> = report
                    .criteria
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| format!("{} ({})", c.id, c.name))
                    .collect();
                Err(CliError::Validation(format!("failing criteria: {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("locfisher: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
