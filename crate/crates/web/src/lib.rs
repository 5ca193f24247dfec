//! WebAssembly bindings for the browser demo. Every export takes plain
//! numbers and returns a JSON string, so the page needs no glue beyond
//! `JSON.parse`. Errors come back as strings.

use locfisher::composite::{block_fisher, single_blank_fisher};
use locfisher::dynamics::EvolvedFamily;
use locfisher::fisher::{family_fisher, LocalEstimator};
use locfisher::montecarlo::empirical_cr_check;
use locfisher::operator::pauli;
use locfisher::scenarios::{Preset, TwoLevelDecayModel};
use locfisher::states::DensityOperator;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest grid the page may request; keeps a sweep well under a second.
pub const MAX_POINTS: usize = 400;
pub const MAX_SHOTS: usize = 2_000_000;
pub const MAX_REPEATS: usize = 200;

fn model(gamma_plus: f64, gamma_minus: f64) -> Result<TwoLevelDecayModel, String> {
    TwoLevelDecayModel::new(gamma_plus, gamma_minus).map_err(|e| e.to_string())
}

fn to_json(v: serde_json::Value) -> Result<String, String> {
    serde_json::to_string(&v).map_err(|e| e.to_string())
}

/// `J_single`, and `(j_2, J_2)` for the product and entangled pairs, on a
/// linear grid `(0, t_stop]`, with the closed-form single-system curve.
#[wasm_bindgen]
pub fn fisher_curves(gamma_plus: f64, gamma_minus: f64, g: f64, t_stop: f64, points: usize) -> Result<String, String> {
    let m = model(gamma_plus, gamma_minus)?;
    if !(t_stop.is_finite() && t_stop > 0.0) || !g.is_finite() {
        return Err("t_stop must be positive and g finite".into());
    }
    if points == 0 || points > MAX_POINTS {
        return Err(format!("points must be in 1..={MAX_POINTS}"));
    }
    let times: Vec<f64> = (1..=points).map(|i| t_stop * i as f64 / points as f64).collect();
    let mut out = json!({ "t": times, "closed_form_single": times.iter().map(|&t| m.closed_form_j_single(t)).collect::<Vec<_>>() });
    for p in Preset::ALL {
        let sc = p.scenario(&m).map_err(|e| e.to_string())?;
        let (mut small, mut big) = (Vec::with_capacity(points), Vec::with_capacity(points));
        for &t in &times {
            let at = |e: locfisher::Error| format!("t = {t}: {e}");
            small.push(single_blank_fisher(&sc, g, t).map_err(at)?.value);
            big.push(block_fisher(&sc, g, t).map_err(at)?.value);
        }
        out[p.name()] = json!({ "j": small, "J": big });
    }
    to_json(out)
}

/// Closed-form and numerically located maximum of the single-system curve.
#[wasm_bindgen]
pub fn optimal_time(gamma_plus: f64, gamma_minus: f64) -> Result<String, String> {
    let m = model(gamma_plus, gamma_minus)?;
    to_json(json!({ "closed_form": m.optimal_time(), "numerical": m.numerical_optimal_time() }))
}

/// Simulated measurements of an estimator on the single system started in
/// `|+>`. `estimator` is `optimal`, `optimal_alt`, `sigma_x` or `sigma_y`.
#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn monte_carlo(
    gamma_plus: f64,
    gamma_minus: f64,
    g: f64,
    t: f64,
    shots: usize,
    repeats: usize,
    seed: u64,
    estimator: &str,
) -> Result<String, String> {
    let m = model(gamma_plus, gamma_minus)?;
    if shots > MAX_SHOTS || repeats > MAX_REPEATS {
        return Err(format!("at most {MAX_SHOTS} shots and {MAX_REPEATS} repeats in the browser"));
    }
    let e = |e: locfisher::Error| e.to_string();
    let rho0 = DensityOperator::normalized(Preset::TwoLevelSingle.initial_state()).map_err(e)?;
    let fam = EvolvedFamily::new(rho0, m.channels(), t).map_err(e)?;
    let report = family_fisher(&fam, g).map_err(e)?;
    let est = match estimator {
        "optimal" => report.optimal_estimator.clone(),
        "optimal_alt" => report.alternative_optimal_estimator(),
        "sigma_x" => LocalEstimator::new(pauli::x(), 0.0).map_err(e)?,
        "sigma_y" => LocalEstimator::new(pauli::y(), 0.0).map_err(e)?,
        other => return Err(format!("unknown estimator {other:?}")),
    };
    let cr = empirical_cr_check(&fam, &est, g, shots, repeats, seed).map_err(e)?;
    to_json(json!({
        "fisher": cr.fisher,
        "cr_bound": cr.cr_bound,
        "analytic_delta_g_sq": cr.analytic_delta_g_sq,
        "ratio": cr.ratio,
        "ratio_se": cr.ratio_se,
        "delta_g_sq": cr.rows.iter().map(|r| r.delta_g_sq).collect::<Vec<_>>(),
        "g_hat": cr.rows.iter().map(|r| r.g_hat).collect::<Vec<_>>(),
    }))
}
