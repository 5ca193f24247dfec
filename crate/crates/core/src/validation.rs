//! Acceptance battery: eleven criteria with pinned tolerances.
//!
//! Every criterion is a list of [`Check`]s of the form `deviation <= tolerance`.
//! [`Tolerances::perturbed`] replaces one criterion's tolerances by `-inf`,
//! which makes that criterion fail; the CLI uses it to self-test the harness.

use std::f64::consts::LN_2;
use std::fmt;

use serde::Serialize;

use crate::composite::{
    block_fisher, descendants_direct, descendants_via_channels, single_blank_fisher, CompositeScenario,
};
use crate::dynamics::{ChannelFamily, EvolvedFamily};
use crate::fisher::{
    expected_error_at, family_fisher, local_fisher, pure_state_fisher, pure_state_fisher_terms, LinearFamily,
};
use crate::montecarlo::{averaging_scaling, empirical_cr_check, MeasurementModel, RNG_ALGORITHM};
use crate::operator::{hermitian_eig, trace_re};
use crate::random;
use crate::scenarios::{golden_section_max, Branch, LeakageModel, Preset, TwoLevelDecayModel};
use crate::states::{BlankExtendedState, DensityOperator};
use crate::{c64, CMatrix, Error, Result};

/// Number of criteria in the battery.
pub const CRITERIA: usize = 11;

/// Pinned tolerances. Field names follow the criterion they belong to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub c1_rel: f64,
    pub c2_t_star_abs: f64,
    pub c2_j_max_rel: f64,
    pub c3_pure_abs: f64,
    pub c3_exponent_abs: f64,
    /// Relative floor; the effective tolerance is `max(c45_rel, c45_g_factor * g)`.
    pub c45_rel: f64,
    pub c45_g_factor: f64,
    pub c5_early_rel: f64,
    pub c5_late_abs: f64,
    pub c6_abs: f64,
    pub c7_slack: f64,
    pub c8_bound_slack: f64,
    pub c8_equality_rel: f64,
    pub c9_abs: f64,
    pub c10_ratio_abs: f64,
    pub c10_scaling_rel: f64,
    pub c11_exponent_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            c1_rel: 0.01,
            c2_t_star_abs: 1e-3,
            c2_j_max_rel: 0.01,
            c3_pure_abs: 1e-8,
            c3_exponent_abs: 0.05,
            c45_rel: 0.01,
            c45_g_factor: 10.0,
            c5_early_rel: 0.05,
            c5_late_abs: 0.1,
            c6_abs: 1e-10,
            c7_slack: 1e-9,
            c8_bound_slack: 1e-9,
            c8_equality_rel: 1e-7,
            c9_abs: 1e-8,
            c10_ratio_abs: 0.1,
            c10_scaling_rel: 0.1,
            c11_exponent_abs: 0.1,
        }
    }
}

impl Tolerances {
    /// Copy with every tolerance of criterion `id` set to `-inf`.
    pub fn perturbed(mut self, id: usize) -> Result<Self> {
        let x = f64::NEG_INFINITY;
        match id {
            1 => self.c1_rel = x,
            2 => (self.c2_t_star_abs, self.c2_j_max_rel) = (x, x),
            3 => (self.c3_pure_abs, self.c3_exponent_abs) = (x, x),
            4 => self.c45_g_factor = -1.0,
            5 => (self.c5_early_rel, self.c5_late_abs) = (x, x),
            6 => self.c6_abs = x,
            7 => self.c7_slack = x,
            8 => (self.c8_bound_slack, self.c8_equality_rel) = (x, x),
            9 => self.c9_abs = x,
            10 => (self.c10_ratio_abs, self.c10_scaling_rel) = (x, x),
            11 => self.c11_exponent_abs = x,
            _ => return Err(Error::InvalidArgument(format!("no criterion {id}; expected 1..={CRITERIA}"))),
        }
        Ok(self)
    }
}

/// One `deviation <= tolerance` comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub measured: f64,
    pub expected: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(label: impl Into<String>, measured: f64, expected: f64, deviation: f64, tolerance: f64) -> Self {
        Self {
            label: label.into(),
            measured,
            expected,
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Extra context that does not affect the outcome.
    pub notes: Vec<String>,
    /// Set when evaluation itself failed.
    pub error: Option<String>,
}

impl CriterionResult {
    fn from_checks(id: usize, checks: Vec<Check>, notes: Vec<String>) -> Self {
        Self {
            id,
            name: NAMES[id - 1],
            passed: !checks.is_empty() && checks.iter().all(|c| c.passed),
            checks,
            notes,
            error: None,
        }
    }

    fn failed(id: usize, err: Error) -> Self {
        Self {
            id,
            name: NAMES[id - 1],
            passed: false,
            checks: Vec::new(),
            notes: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2}. {}", self.id, self.name)?;
        if let Some(e) = &self.error {
            return write!(f, ": error: {e}");
        }
        let parts: Vec<String> = self
            .checks
            .iter()
            .map(|c| {
                format!(
                    "{}{} {:.3e} (tol {:.1e})",
                    if c.passed { "" } else { "!" },
                    c.label,
                    c.deviation,
                    c.tolerance
                )
            })
            .collect();
        write!(f, ": {}", parts.join("; "))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub tolerances: Tolerances,
    pub rng: &'static str,
    pub criteria: Vec<CriterionResult>,
}

pub const NAMES: [&str; CRITERIA] = [
    "single-system Fisher curve",
    "optimal time",
    "pure-state formula consistency",
    "composite i.i.d.",
    "composite entangled",
    "oracle equivalence of descendant paths",
    "monotonicity J >= j",
    "Cramer-Rao property suite",
    "SLD gauge invariance",
    "Monte Carlo",
    "first-order solution residual",
];

/// Runs one criterion; evaluation errors become a failed result.
pub fn run_criterion(id: usize, tol: &Tolerances) -> CriterionResult {
    let out = match id {
        1 => criterion_1(tol),
        2 => criterion_2(tol),
        3 => criterion_3(tol),
        4 => criterion_4(tol),
        5 => criterion_5(tol),
        6 => criterion_6(tol),
        7 => criterion_7(tol),
        8 => criterion_8(tol),
        9 => criterion_9(tol),
        10 => criterion_10(tol),
        11 => criterion_11(tol),
        _ => Err(Error::InvalidArgument(format!("no criterion {id}"))),
    };
    match out {
        Ok(r) => r,
        Err(e) if (1..=CRITERIA).contains(&id) => CriterionResult::failed(id, e),
        Err(e) => CriterionResult {
            id,
            name: "unknown",
            passed: false,
            checks: Vec::new(),
            notes: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

pub fn run_all(tol: &Tolerances) -> ValidationReport {
    let criteria: Vec<CriterionResult> = (1..=CRITERIA).map(|id| run_criterion(id, tol)).collect();
    ValidationReport {
        passed: criteria.iter().all(|c| c.passed),
        tolerances: *tol,
        rng: RNG_ALGORITHM,
        criteria,
    }
}

// ---------------------------------------------------------------------------

const G_SMALL: f64 = 1e-4;

fn reference_model() -> TwoLevelDecayModel {
    TwoLevelDecayModel::new(2.0, 1.0).expect("valid rates")
}

/// 50 points, `t in [0.05, 3]`.
pub fn reference_grid() -> Vec<f64> {
    (0..50).map(|k| 0.05 + (3.0 - 0.05) * k as f64 / 49.0).collect()
}

fn single_family(model: &TwoLevelDecayModel, branch: Branch, t: f64) -> Result<EvolvedFamily> {
    let rho = DensityOperator::pure(&TwoLevelDecayModel::ket(branch))?;
    EvolvedFamily::new(rho, model.channels(), t)
}

fn numeric_single(model: &TwoLevelDecayModel, branch: Branch, g: f64, t: f64) -> Result<f64> {
    Ok(family_fisher(&single_family(model, branch, t)?, g)?.value)
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_1(tol: &Tolerances) -> Result<CriterionResult> {
    let m = reference_model();
    let mut worst = 0.0_f64;
    let mut worst_t = 0.0;
    for t in reference_grid() {
        let e = rel(numeric_single(&m, Branch::Plus, G_SMALL, t)?, m.closed_form_j_single(t));
        if e > worst {
            worst = e;
            worst_t = t;
        }
    }
    Ok(CriterionResult::from_checks(
        1,
        vec![Check::new("max rel err vs 4d^2", worst, 0.0, worst, tol.c1_rel)],
        vec![format!("worst at t = {worst_t:.4}")],
    ))
}

fn criterion_2(tol: &Tolerances) -> Result<CriterionResult> {
    let m = reference_model();
    let fam = |t: f64| numeric_single(&m, Branch::Plus, G_SMALL, t);
    fam(0.5)?; // surface evaluation errors before maximising
    let (t_num, j_num) = golden_section_max(|t| fam(t).unwrap_or(f64::NEG_INFINITY), 0.01, 2.0, 1e-9);
    let closed = m.optimal_time();
    Ok(CriterionResult::from_checks(
        2,
        vec![
            Check::new("argmax t", t_num, LN_2, (t_num - LN_2).abs(), tol.c2_t_star_abs),
            Check::new("rel err J_max", j_num, 0.25, rel(j_num, 0.25), tol.c2_j_max_rel),
        ],
        vec![format!(
            "closed form: t* = {:.12}, J_max = {:.12}",
            closed.t_star, closed.j_max
        )],
    ))
}

/// Blank term of the pure-state formula for the leakage model, `t` in `[1e-4, 1e-2]`.
pub fn leakage_blank_terms() -> Result<(Vec<f64>, Vec<f64>)> {
    let lm = LeakageModel::new(0.7, 0.3)?;
    let ts: Vec<f64> = (0..9).map(|k| 1e-4 * 10f64.powf(k as f64 / 4.0)).collect();
    let mut ys = Vec::new();
    for &t in &ts {
        let (psi, dpsi) = lm.accessible_state(1.0, t)?;
        ys.push(pure_state_fisher_terms(&psi, &dpsi)?.blank_term);
    }
    Ok((ts, ys))
}

/// Same fit for the decaying two-level model, whose norm loss is linear in `t`.
pub fn decay_blank_terms(g: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = reference_model();
    let ts: Vec<f64> = (0..9).map(|k| 1e-3 * 10f64.powf(k as f64 / 8.0)).collect();
    let mut ys = Vec::new();
    for &t in &ts {
        let (psi, dpsi) = m.evolved_state(g, t, Branch::Plus)?;
        ys.push(pure_state_fisher_terms(&psi, &dpsi)?.blank_term);
    }
    Ok((ts, ys))
}

fn criterion_3(tol: &Tolerances) -> Result<CriterionResult> {
    let m = reference_model();
    let mut worst = 0.0_f64;
    for t in reference_grid() {
        let (psi, dpsi) = m.evolved_state(G_SMALL, t, Branch::Plus)?;
        let pure = pure_state_fisher(&psi, &dpsi)?;
        let rho = &psi * psi.adjoint();
        let drho = &dpsi * psi.adjoint() + &psi * dpsi.adjoint();
        let local = local_fisher(&rho, &drho)?.value;
        worst = worst.max((pure - local).abs());
    }
    let (ts, ys) = leakage_blank_terms()?;
    let slope = loglog_slope(&ts, &ys);
    let coeff = ys[0] / (ts[0] * ts[0]);
    let (dts, dys) = decay_blank_terms(0.1)?;
    Ok(CriterionResult::from_checks(
        3,
        vec![
            Check::new("max |pure - local|", worst, 0.0, worst, tol.c3_pure_abs),
            Check::new("early blank-term exponent", slope, 2.0, (slope - 2.0).abs(), tol.c3_exponent_abs),
        ],
        vec![
            format!("exponent fitted on the three-level leakage model (norm 1 - g^2 t^2); c = {coeff:.6} (limit 4)"),
            format!(
                "decaying two-level model (norm loss linear in t) gives exponent {:.3} instead",
                loglog_slope(&dts, &dys)
            ),
        ],
    ))
}

fn composite_tolerance(tol: &Tolerances, g: f64) -> f64 {
    if tol.c45_g_factor < 0.0 {
        return f64::NEG_INFINITY;
    }
    tol.c45_rel.max(tol.c45_g_factor * g)
}

fn criterion_4(tol: &Tolerances) -> Result<CriterionResult> {
    let m = reference_model();
    let sc = Preset::TwoLevelIid2.scenario(&m)?;
    let limit = composite_tolerance(tol, G_SMALL);
    let labels = ["J_[]", "J_[1]", "J_[2]", "J_[1,2]"];
    let mut worst_small = 0.0_f64;
    let mut worst_big = 0.0_f64;
    let mut worst_ratio = 0.0_f64;
    let mut worst_block = [0.0_f64; 4];
    for t in reference_grid() {
        let (j_cf, big_cf) = Preset::TwoLevelIid2.closed_forms(&m, t);
        let j = single_blank_fisher(&sc, G_SMALL, t)?.value;
        let report = block_fisher(&sc, G_SMALL, t)?;
        worst_small = worst_small.max(rel(j, j_cf));
        worst_big = worst_big.max(rel(report.value, big_cf));
        let j1 = numeric_single(&m, Branch::Plus, G_SMALL, t)?;
        worst_ratio = worst_ratio.max(rel(report.value / j1, 2.0));
        for (k, (s, want)) in m.iid_block_closed_forms(t).into_iter().enumerate() {
            let got = report.block(s).map_or(f64::NAN, |b| b.fisher);
            // the fully blank block vanishes at this order; measure it against J^(2)
            let dev = if want == 0.0 { (got / big_cf).abs() } else { rel(got, want) };
            worst_block[k] = worst_block[k].max(dev);
        }
    }
    let mut checks = vec![
        Check::new("j2 rel err", worst_small, 0.0, worst_small, limit),
        Check::new("J2 rel err", worst_big, 0.0, worst_big, limit),
        Check::new("J2/J1 vs 2", worst_ratio, 0.0, worst_ratio, limit),
    ];
    for (k, l) in labels.iter().enumerate() {
        checks.push(Check::new(format!("{l} rel err"), worst_block[k], 0.0, worst_block[k], limit));
    }
    Ok(CriterionResult::from_checks(
        4,
        checks,
        vec!["J_[1,2] is O(g); its deviation is |J_[1,2]| / J2".into()],
    ))
}

fn criterion_5(tol: &Tolerances) -> Result<CriterionResult> {
    let m = reference_model();
    let sc = Preset::TwoLevelEnt2.scenario(&m)?;
    let limit = composite_tolerance(tol, G_SMALL);
    let mut worst_small = 0.0_f64;
    let mut worst_big = 0.0_f64;
    for t in reference_grid() {
        let (j_cf, big_cf) = Preset::TwoLevelEnt2.closed_forms(&m, t);
        worst_small = worst_small.max(rel(single_blank_fisher(&sc, G_SMALL, t)?.value, j_cf));
        worst_big = worst_big.max(rel(block_fisher(&sc, G_SMALL, t)?.value, big_cf));
    }
    let early_t = 0.01;
    let early = block_fisher(&sc, G_SMALL, early_t)?.value / numeric_single(&m, Branch::Plus, G_SMALL, early_t)?;
    // |+> has left M almost entirely by t = 10 (trace ~ e^-40), so the
    // single-system reference there is the |-> branch, which has the same 4 d^2.
    let late_t = 10.0;
    let late = block_fisher(&sc, G_SMALL, late_t)?.value / numeric_single(&m, Branch::Minus, G_SMALL, late_t)?;
    Ok(CriterionResult::from_checks(
        5,
        vec![
            Check::new("j2 rel err", worst_small, 0.0, worst_small, limit),
            Check::new("J2 rel err", worst_big, 0.0, worst_big, limit),
            Check::new("J2/J1 at t=0.01 vs 4 (rel)", early, 4.0, rel(early, 4.0), tol.c5_early_rel),
            Check::new("J2/J1 at t=10 vs 1", late, 1.0, (late - 1.0).abs(), tol.c5_late_abs),
        ],
        Vec::new(),
    ))
}

fn random_scenario(r: &mut impl rand::Rng, n: usize, unitary: bool) -> Result<CompositeScenario> {
    let channels = if unitary {
        random::unitary_family(r, 3, 2)
    } else {
        ChannelFamily::effective(random::effective_family(r, 2))
    };
    let dim = 2usize.pow(n as u32);
    let rank = r.random_range(1..=dim);
    CompositeScenario::new(n, DensityOperator::normalized(random::density(r, dim, rank))?, channels)
}

fn criterion_6(tol: &Tolerances) -> Result<CriterionResult> {
    use rand::Rng as _;
    let mut r = random::rng(6);
    let mut worst = 0.0_f64;
    let mut worst_d = 0.0_f64;
    for k in 0..25 {
        let n = if k < 20 { 2 } else { 3 };
        let sc = random_scenario(&mut r, n, k % 2 == 1)?;
        let g = r.random_range(-0.5..0.5);
        let t = r.random_range(0.1..1.5);
        let (db, dd) = descendants_via_channels(&sc, g, t)?.max_difference(&descendants_direct(&sc, g, t)?);
        worst = worst.max(db);
        worst_d = worst_d.max(dd);
    }
    Ok(CriterionResult::from_checks(
        6,
        vec![Check::new("max block difference", worst, 0.0, worst, tol.c6_abs)],
        vec![format!(
            "20 N=2 + 5 N=3 scenarios, half dilated effective, half unitary leakage; max derivative difference {worst_d:.2e} (finite differences on the direct path)"
        )],
    ))
}

fn criterion_7(tol: &Tolerances) -> Result<CriterionResult> {
    use rand::Rng as _;
    let mut r = random::rng(7);
    let mut worst = f64::NEG_INFINITY;
    let mut entangled = 0;
    for k in 0..100 {
        let n = if k % 2 == 0 { 2 } else { 3 };
        let sc = random_scenario(&mut r, n, k % 4 == 3)?;
        if is_entangled_across_first_cut(sc.initial(), sc.dim_m())? {
            entangled += 1;
        }
        let g = r.random_range(-0.5..0.5);
        let t = r.random_range(0.05..2.0);
        let big = block_fisher(&sc, g, t)?.value;
        let small = single_blank_fisher(&sc, g, t)?.value;
        worst = worst.max(small - big);
    }
    Ok(CriterionResult::from_checks(
        7,
        vec![Check::new("max (j - J)", worst, 0.0, worst, tol.c7_slack)],
        vec![format!("{entangled} of 100 initial states are entangled (negative partial transpose across site 1)")],
    ))
}

/// Partial-transpose test on the first site.
fn is_entangled_across_first_cut(rho: &CMatrix, d: usize) -> Result<bool> {
    let rest = rho.nrows() / d;
    let pt = CMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| {
        let (a, b) = (i / rest, i % rest);
        let (c, e) = (j / rest, j % rest);
        rho[(c * rest + b, a * rest + e)]
    });
    Ok(hermitian_eig(&pt)?.min_value() < -1e-12)
}

fn random_local_family(r: &mut impl rand::Rng, d: usize) -> Result<LinearFamily> {
    let scale = r.random_range(0.3..0.9);
    let rho = random::density(r, d, d) * c64(scale, 0.0);
    let drho = random::hermitian(r, d) * c64(0.5, 0.0);
    LinearFamily::new(rho, drho, 0.0)
}

fn criterion_8(tol: &Tolerances) -> Result<CriterionResult> {
    use crate::fisher::LocalFamily;
    let mut r = random::rng(8);
    let mut worst_bound = f64::NEG_INFINITY;
    let mut worst_eq = 0.0_f64;
    let mut insensitive = 0;
    for _ in 0..20 {
        let fam = random_local_family(&mut r, 3)?;
        let (rho, drho) = fam.accessible_with_derivative(0.0)?;
        let report = local_fisher(&rho, &drho)?;
        let j = report.value;
        for est in [report.optimal_estimator.clone(), report.alternative_optimal_estimator()] {
            let e = expected_error_at(&rho, &drho, &est)?;
            worst_eq = worst_eq.max(rel(e.delta_g_squared() * j, 1.0));
        }
        for _ in 0..10 {
            let est = random::local_estimator(&mut r, 3);
            match expected_error_at(&rho, &drho, &est) {
                Ok(e) => worst_bound = worst_bound.max(1.0 / j - e.delta_g_squared()),
                Err(Error::InsensitiveEstimator(_)) => insensitive += 1,
                Err(e) => return Err(e),
            }
        }
    }
    // The two-level model at the optimal time, where sigma_y is optimal.
    let m = reference_model();
    let fam = single_family(&m, Branch::Plus, m.optimal_time().t_star)?;
    let (rho, drho) = fam.accessible_with_derivative(1e-3)?;
    let report = local_fisher(&rho, &drho)?;
    for est in [report.optimal_estimator.clone(), report.alternative_optimal_estimator()] {
        let e = expected_error_at(&rho, &drho, &est)?;
        worst_eq = worst_eq.max(rel(e.delta_g_squared() * report.value, 1.0));
    }
    Ok(CriterionResult::from_checks(
        8,
        vec![
            Check::new("max (1/J - dg^2), 200 estimators", worst_bound, 0.0, worst_bound, tol.c8_bound_slack),
            Check::new("max |dg^2 J - 1|, both optimal variants", worst_eq, 0.0, worst_eq, tol.c8_equality_rel),
        ],
        vec![format!("{insensitive} random estimators had zero slope (infinite error)")],
    ))
}

fn criterion_9(tol: &Tolerances) -> Result<CriterionResult> {
    use rand::Rng as _;
    let mut r = random::rng(9);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let d = r.random_range(3..=5);
        let rank = r.random_range(1..d);
        let scale = r.random_range(0.3..0.95);
        let rho = random::density(&mut r, d, rank) * c64(scale, 0.0);
        let a = random::matrix(&mut r, d, d);
        let drho = &a * &rho + &rho * a.adjoint();
        let report = local_fisher(&rho, &drho)?;
        let l = &report.sld;
        // projector onto the kernel of rho
        let eig = hermitian_eig(&rho)?;
        let q = eig.vectors.columns(rank, d - rank).into_owned();
        let k = &q * random::hermitian(&mut r, d - rank) * q.adjoint();
        let l2 = l + &k;
        let tr = trace_re(&rho);
        let value = |l: &CMatrix| {
            let c = trace_re(&(l * &rho));
            (trace_re(&(l * l * &rho)) + c * c / (1.0 - tr), c)
        };
        let (j1, c1) = value(l);
        let (j2, c2) = value(&l2);
        worst = worst.max((j1 - j2).abs()).max((c1 - c2).abs()).max((j1 - report.value).abs());
    }
    Ok(CriterionResult::from_checks(
        9,
        vec![Check::new("max change of J, Tr[L rho]", worst, 0.0, worst, tol.c9_abs)],
        Vec::new(),
    ))
}

fn criterion_10(tol: &Tolerances) -> Result<CriterionResult> {
    let m = reference_model();
    let g = 1e-3;
    let fam = single_family(&m, Branch::Plus, m.optimal_time().t_star)?;
    let report = family_fisher(&fam, g)?;
    let cr = empirical_cr_check(&fam, &report.optimal_estimator, g, 1_000_000, 50, 10_000)?;
    let mut checks = vec![Check::new(
        "dg^2 J (10^6 shots x 50)",
        cr.ratio,
        1.0,
        (cr.ratio - 1.0).abs(),
        tol.c10_ratio_abs,
    )];
    use crate::fisher::LocalFamily;
    let (rho, _) = fam.accessible_with_derivative(g)?;
    let state = BlankExtendedState {
        blank_weight: (1.0 - trace_re(&rho)).max(0.0),
        accessible: rho,
    };
    let model = MeasurementModel::new(&report.optimal_estimator, &state)?;
    for p in averaging_scaling(&model, &[1, 2, 4, 8], 1_000_000, 20_000)? {
        checks.push(Check::new(
            format!("N={} var*N/V", p.n_avg),
            p.ratio,
            1.0,
            (p.ratio - 1.0).abs(),
            tol.c10_scaling_rel,
        ));
    }
    Ok(CriterionResult::from_checks(
        10,
        checks,
        vec![format!(
            "ratio {:.5} +- {:.5} (SE); MSE-based ratio {:.4} +- {:.4}",
            cr.ratio, cr.ratio_se, cr.mse_ratio, cr.mse_ratio_se
        )],
    ))
}

/// Residual norms of the first-order state at `t = 1` for `g = 1e-2, 1e-3, 1e-4`.
pub fn first_order_residuals() -> Result<(Vec<f64>, Vec<f64>)> {
    let m = reference_model();
    let gs = vec![1e-2, 1e-3, 1e-4];
    let mut res = Vec::new();
    for &g in &gs {
        let (psi, _) = m.evolved_state(g, 1.0, Branch::Plus)?;
        res.push((psi - m.first_order_state(g, 1.0, Branch::Plus)).norm());
    }
    Ok((gs, res))
}

fn criterion_11(tol: &Tolerances) -> Result<CriterionResult> {
    let (gs, res) = first_order_residuals()?;
    let slope = loglog_slope(&gs, &res);
    // sign check: the residual with the opposite sign of the correction is O(g)
    let m = reference_model();
    let (psi, _) = m.evolved_state(1e-3, 1.0, Branch::Plus)?;
    let flipped = m.first_order_state(-1e-3, 1.0, Branch::Plus);
    let flipped_res = (psi - flipped).norm();
    Ok(CriterionResult::from_checks(
        11,
        vec![Check::new("residual exponent in g", slope, 2.0, (slope - 2.0).abs(), tol.c11_exponent_abs)],
        vec![format!(
            "residuals {:.3e}, {:.3e}, {:.3e}; with the opposite sign of i g d the residual at g=1e-3 is {flipped_res:.3e}",
            res[0], res[1], res[2]
        )],
    ))
}
