//! Resolved run configurations. Every command is turned into one of these
//! before any computation, and the same value is echoed into the output
//! metadata; `locfisher run --config <file>` replays it.

use locfisher::dynamics::DerivativeStrategy;
use locfisher::io::{InitialState, MatrixJson, ModelSpec, ScenarioFile, TimeGrid};
use locfisher::scenarios::{Preset, TwoLevelDecayModel};
use locfisher::{c64, CMatrix};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunConfig {
    FisherSweep(SweepConfig),
    Composite(SweepConfig),
    Montecarlo(MonteCarloConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub model: ModelSpec,
    pub initial_state: InitialState,
    pub g: f64,
    pub t_grid: TimeGrid,
    #[serde(default)]
    pub strategy: DerivativeStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EstimatorChoice {
    /// SLD with blank value `-Tr[L rho] / (1 - Tr rho)`.
    Optimal,
    /// SLD shifted to blank value zero.
    OptimalAlt,
    SigmaX,
    SigmaY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub model: ModelSpec,
    /// Single-system state on `M`.
    pub initial_state: MatrixJson,
    pub g: f64,
    pub t: f64,
    pub shots: usize,
    pub repeats: usize,
    pub seed: u64,
    pub estimator: EstimatorChoice,
    /// Sizes `N` of the averaged-estimator check; empty to skip.
    #[serde(default)]
    pub averaging: Vec<usize>,
}

impl SweepConfig {
    pub fn scenario_file(&self) -> ScenarioFile {
        ScenarioFile {
            n: self.n,
            model: self.model.clone(),
            initial_state: self.initial_state.clone(),
            g: self.g,
            t_grid: self.t_grid,
        }
    }

    pub fn from_scenario(file: ScenarioFile, strategy: DerivativeStrategy) -> Self {
        Self {
            n: file.n,
            model: file.model,
            initial_state: file.initial_state,
            g: file.g,
            t_grid: file.t_grid,
            strategy,
        }
    }
}

impl RunConfig {
    /// Checks everything that can be checked without running the computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| CliError::Config(m);
        match self {
            RunConfig::FisherSweep(s) | RunConfig::Composite(s) => {
                if !s.g.is_finite() {
                    return Err(cfg("g must be finite".into()));
                }
                s.t_grid.validate().map_err(|e| cfg(format!("t_grid: {e}")))?;
                s.scenario_file().scenario().map_err(|e| cfg(format!("scenario: {e}")))?;
            }
            RunConfig::Montecarlo(m) => {
                if !m.g.is_finite() || !m.t.is_finite() || m.t < 0.0 {
                    return Err(cfg("g must be finite and t finite and non-negative".into()));
                }
                if m.shots < 2 {
                    return Err(cfg(format!("shots must be at least 2, got {}", m.shots)));
                }
                if m.repeats < 2 {
                    return Err(cfg(format!("repeats must be at least 2, got {}", m.repeats)));
                }
                if m.averaging.contains(&0) {
                    return Err(cfg("averaging sizes must be positive".into()));
                }
                let channels = m.model.channels().map_err(|e| cfg(format!("model: {e}")))?;
                let rho = m.initial_state.to_matrix().map_err(|e| cfg(format!("initial_state: {e}")))?;
                if rho.nrows() != channels.dim_m() {
                    return Err(cfg(format!(
                        "initial_state is {}x{} but the model acts on dimension {}",
                        rho.nrows(),
                        rho.ncols(),
                        channels.dim_m()
                    )));
                }
                if matches!(m.estimator, EstimatorChoice::SigmaX | EstimatorChoice::SigmaY) && rho.nrows() != 2 {
                    return Err(cfg("Pauli estimators need a two-dimensional accessible space".into()));
                }
            }
        }
        Ok(())
    }
}

/// Model named on the command line: a preset name or a model file.
pub struct ResolvedModel {
    pub spec: ModelSpec,
    pub preset: Option<Preset>,
}

pub fn resolve_model(name: &str, gamma_plus: f64, gamma_minus: f64) -> Result<ResolvedModel, CliError> {
    if let Ok(p) = name.parse::<Preset>() {
        return Ok(ResolvedModel {
            spec: ModelSpec::two_level(gamma_plus, gamma_minus),
            preset: Some(p),
        });
    }
    if name == "two_level_decay" {
        return Ok(ResolvedModel {
            spec: ModelSpec::two_level(gamma_plus, gamma_minus),
            preset: None,
        });
    }
    let text = std::fs::read_to_string(name).map_err(|e| {
        CliError::Config(format!(
            "--model {name:?} is neither a preset (two_level_single, two_level_iid2, two_level_ent2) nor a readable file: {e}"
        ))
    })?;
    let spec = ModelSpec::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(ResolvedModel { spec, preset: None })
}

/// `|0><0|` on `M`; for the two-level model this is `|+><+|`.
pub fn first_basis_state(dim: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(0, 0)] = c64(1.0, 0.0);
    m
}

/// Default optimal time for two-level models, if the model has one.
pub fn default_time(spec: &ModelSpec) -> Option<f64> {
    match spec {
        ModelSpec::TwoLevelDecay { params } => TwoLevelDecayModel::new(params.gamma_plus, params.gamma_minus)
            .ok()
            .map(|m| m.optimal_time().t_star),
        _ => None,
    }
}
