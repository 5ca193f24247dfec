//! Command implementations. Each returns the primary output text and, for
//! CSV, the metadata that goes into the `.meta.json` sidecar.

use locfisher::composite::{block_fisher, single_blank_fisher, BlockFisherReport, CompositeScenario};
use locfisher::dynamics::EvolvedFamily;
use locfisher::fisher::{family_fisher, LocalEstimator, LocalFamily};
use locfisher::io::InitialState;
use locfisher::montecarlo::{averaging_scaling, empirical_cr_check, MeasurementModel, RepeatRow};
use locfisher::operator::{pauli, trace_re};
use locfisher::states::{BlankExtendedState, DensityOperator, Subsequence};
use locfisher::validation::{run_criterion, Tolerances, ValidationReport, CRITERIA};
use locfisher::CMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{first_basis_state, EstimatorChoice, MonteCarloConfig, RunConfig, SweepConfig};
use crate::{CliError, Format};

pub struct Output {
    pub body: String,
    pub meta: Option<Value>,
}

/// Shortest representation that round-trips; used for every CSV cell.
pub fn cell(x: f64) -> Result<String, CliError> {
    if !x.is_finite() {
        return Err(CliError::Numeric(format!("non-finite value {x} in output")));
    }
    Ok(format!("{x:.16e}"))
}

fn check_finite_json(v: &Value) -> Result<(), CliError> {
    // serde_json writes non-finite floats as null; any null in a numeric
    // result table therefore signals a defect.
    match v {
        Value::Array(a) => a.iter().try_for_each(check_finite_json),
        Value::Object(o) => o.values().try_for_each(check_finite_json),
        Value::Null => Err(CliError::Numeric("non-finite value in output".into())),
        _ => Ok(()),
    }
}

fn generator() -> String {
    format!("locfisher {}", env!("CARGO_PKG_VERSION"))
}

pub fn run(config: &RunConfig, format: Format) -> Result<Output, CliError> {
    config.validate()?;
    match config {
        RunConfig::FisherSweep(s) => fisher_sweep(config, s, format),
        RunConfig::Composite(s) => composite(config, s, format),
        RunConfig::Montecarlo(m) => montecarlo(config, m, format),
    }
}

fn numeric(g: f64, t: f64) -> impl Fn(locfisher::Error) -> CliError {
    move |e| CliError::Numeric(format!("at g = {g:e}, t = {t:e}: {e}"))
}

/// Single-system state used for the `J_single` column: the i.i.d. factor, or
/// the first basis state of `M` otherwise.
fn single_state(s: &SweepConfig, dim: usize) -> Result<DensityOperator, CliError> {
    let m = match &s.initial_state {
        InitialState::Iid { state } => state.to_matrix().map_err(|e| CliError::Config(e.to_string()))?,
        _ => first_basis_state(dim),
    };
    DensityOperator::normalized(m).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Serialize)]
struct SweepRow {
    t: f64,
    #[serde(rename = "J_single")]
    j_single: f64,
    #[serde(rename = "j_N")]
    j_n: f64,
    #[serde(rename = "J_N")]
    big_j_n: f64,
    blank_term: f64,
    trace_accessible: f64,
}

const SWEEP_COLUMNS: [&str; 6] = ["t", "J_single", "j_N", "J_N", "blank_term", "trace_accessible"];

struct Prepared {
    scenario: CompositeScenario,
    single: DensityOperator,
    times: Vec<f64>,
}

fn prepare(s: &SweepConfig) -> Result<Prepared, CliError> {
    let scenario = s
        .scenario_file()
        .scenario()
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_strategy(s.strategy);
    let single = single_state(s, scenario.dim_m())?;
    let times = s.t_grid.times().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Prepared {
        scenario,
        single,
        times,
    })
}

fn sweep_row(p: &Prepared, s: &SweepConfig, t: f64) -> Result<(SweepRow, BlockFisherReport), CliError> {
    let g = s.g;
    let err = numeric(g, t);
    let fam = EvolvedFamily::new(p.single.clone(), p.scenario.channels().clone(), t)
        .map_err(&err)?
        .with_strategy(s.strategy);
    let j_single = family_fisher(&fam, g).map_err(&err)?.value;
    let small = single_blank_fisher(&p.scenario, g, t).map_err(&err)?;
    let big = block_fisher(&p.scenario, g, t).map_err(&err)?;
    Ok((
        SweepRow {
            t,
            j_single,
            j_n: small.value,
            big_j_n: big.value,
            blank_term: small.blank_term,
            trace_accessible: small.trace,
        },
        big,
    ))
}

fn sweep_rows(p: &Prepared, s: &SweepConfig) -> Result<Vec<(SweepRow, BlockFisherReport)>, CliError> {
    p.times.par_iter().map(|&t| sweep_row(p, s, t)).collect()
}

fn fisher_sweep(config: &RunConfig, s: &SweepConfig, format: Format) -> Result<Output, CliError> {
    let p = prepare(s)?;
    let rows: Vec<SweepRow> = sweep_rows(&p, s)?.into_iter().map(|(r, _)| r).collect();
    match format {
        Format::Csv => {
            let mut body = SWEEP_COLUMNS.join(",");
            body.push('\n');
            for r in &rows {
                let cells = [r.t, r.j_single, r.j_n, r.big_j_n, r.blank_term, r.trace_accessible]
                    .into_iter()
                    .map(cell)
                    .collect::<Result<Vec<_>, _>>()?;
                body.push_str(&cells.join(","));
                body.push('\n');
            }
            Ok(Output {
                body,
                meta: Some(json!({ "generator": generator(), "columns": SWEEP_COLUMNS, "config": config })),
            })
        }
        Format::Json => {
            let v = json!({ "generator": generator(), "config": config, "rows": rows });
            check_finite_json(&v["rows"])?;
            Ok(Output {
                body: pretty(&v)?,
                meta: None,
            })
        }
    }
}

const COMPOSITE_COLUMNS: [&str; 7] = ["t", "block", "trace", "fisher", "support_rank", "j_N", "J_N"];

fn composite(config: &RunConfig, s: &SweepConfig, format: Format) -> Result<Output, CliError> {
    let p = prepare(s)?;
    let rows = sweep_rows(&p, s)?;
    match format {
        Format::Csv => {
            let mut body = COMPOSITE_COLUMNS.join(",");
            body.push('\n');
            for (r, report) in &rows {
                // rows in subsequence order: by size, then lexicographic
                for sub in Subsequence::all(s.n) {
                    let Some(b) = report.block(sub) else { continue };
                    let label = sub.to_string();
                    body.push_str(&format!(
                        "{},\"{}\",{},{},{},{},{}\n",
                        cell(r.t)?,
                        label,
                        cell(b.trace)?,
                        cell(b.fisher)?,
                        b.support_rank,
                        cell(r.j_n)?,
                        cell(r.big_j_n)?
                    ));
                }
            }
            Ok(Output {
                body,
                meta: Some(json!({ "generator": generator(), "columns": COMPOSITE_COLUMNS, "config": config })),
            })
        }
        Format::Json => {
            let points: Vec<Value> = rows
                .iter()
                .map(|(r, report)| {
                    json!({
                        "t": r.t,
                        "J_single": r.j_single,
                        "j_N": r.j_n,
                        "J_N": r.big_j_n,
                        "blank_term": r.blank_term,
                        "trace_accessible": r.trace_accessible,
                        "blocks": report.blocks,
                        "flags": report.flags,
                    })
                })
                .collect();
            for p in &points {
                for k in ["t", "J_single", "j_N", "J_N", "blank_term", "trace_accessible"] {
                    check_finite_json(&p[k])?;
                }
            }
            let v = json!({ "generator": generator(), "config": config, "points": points });
            Ok(Output {
                body: pretty(&v)?,
                meta: None,
            })
        }
    }
}

fn estimator_for(choice: EstimatorChoice, report: &locfisher::fisher::FisherReport) -> Result<LocalEstimator, CliError> {
    let est = match choice {
        EstimatorChoice::Optimal => report.optimal_estimator.clone(),
        EstimatorChoice::OptimalAlt => report.alternative_optimal_estimator(),
        EstimatorChoice::SigmaX => LocalEstimator::new(pauli::x(), 0.0).map_err(|e| CliError::Config(e.to_string()))?,
        EstimatorChoice::SigmaY => LocalEstimator::new(pauli::y(), 0.0).map_err(|e| CliError::Config(e.to_string()))?,
    };
    Ok(est)
}

fn montecarlo(config: &RunConfig, m: &MonteCarloConfig, format: Format) -> Result<Output, CliError> {
    let err = numeric(m.g, m.t);
    let channels = m.model.channels().map_err(|e| CliError::Config(e.to_string()))?;
    let rho0: CMatrix = m.initial_state.to_matrix().map_err(|e| CliError::Config(e.to_string()))?;
    let rho0 = DensityOperator::normalized(rho0).map_err(|e| CliError::Config(e.to_string()))?;
    let fam = EvolvedFamily::new(rho0, channels, m.t).map_err(&err)?;
    let report = family_fisher(&fam, m.g).map_err(&err)?;
    let est = estimator_for(m.estimator, &report)?;
    let cr = empirical_cr_check(&fam, &est, m.g, m.shots, m.repeats, m.seed).map_err(&err)?;
    let averaging = if m.averaging.is_empty() {
        Vec::new()
    } else {
        let (rho, _) = fam.accessible_with_derivative(m.g).map_err(&err)?;
        let state = BlankExtendedState {
            blank_weight: (1.0 - trace_re(&rho)).max(0.0),
            accessible: rho,
        };
        let model = MeasurementModel::new(&est, &state).map_err(&err)?;
        averaging_scaling(&model, &m.averaging, m.shots, m.seed).map_err(&err)?
    };
    let summary = json!({
        "fisher": cr.fisher,
        "cr_bound": cr.cr_bound,
        "analytic_delta_g_sq": cr.analytic_delta_g_sq,
        "slope": cr.slope,
        "ratio": cr.ratio,
        "ratio_se": cr.ratio_se,
        "mse_ratio": cr.mse_ratio,
        "mse_ratio_se": cr.mse_ratio_se,
        "rng": cr.rng,
        "base_seed": cr.base_seed,
        "repeat_seeds": "base_seed + repeat index",
        "averaging": averaging,
    });
    check_finite_json(&summary)?;
    match format {
        Format::Csv => {
            let mut body = String::from(RepeatRow::CSV_HEADER);
            body.push('\n');
            for r in &cr.rows {
                body.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.seed,
                    r.n_shots,
                    cell(r.mean)?,
                    cell(r.variance)?,
                    cell(r.g_hat)?,
                    cell(r.delta_g_sq)?
                ));
            }
            Ok(Output {
                body,
                meta: Some(json!({ "generator": generator(), "config": config, "summary": summary })),
            })
        }
        Format::Json => {
            let v = json!({ "generator": generator(), "config": config, "summary": summary, "rows": cr.rows });
            check_finite_json(&v["rows"])?;
            Ok(Output {
                body: pretty(&v)?,
                meta: None,
            })
        }
    }
}

fn pretty(v: &Value) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Numeric(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Runs the battery, printing one line per criterion as it completes unless
/// `quiet`.
pub fn validate(tol: &Tolerances, only: &[usize], quiet: bool) -> ValidationReport {
    let ids: Vec<usize> = if only.is_empty() { (1..=CRITERIA).collect() } else { only.to_vec() };
    let criteria = ids
        .into_iter()
        .map(|id| {
            let r = run_criterion(id, tol);
            if !quiet {
                println!("{r}");
            }
            r
        })
        .collect::<Vec<_>>();
    ValidationReport {
        passed: criteria.iter().all(|c| c.passed),
        tolerances: *tol,
        rng: locfisher::montecarlo::RNG_ALGORITHM,
        criteria,
    }
}
