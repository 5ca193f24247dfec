//! Simulated projective measurements of local estimators.
//!
//! Sampling is reproducible bit-for-bit: shots are drawn in batches of
//! [`BATCH_SIZE`], batch `b` using `ChaCha8Rng::seed_from_u64(seed)` on stream
//! `b`. Batches may run in parallel; results are concatenated in batch order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fisher::{expected_error_at, local_fisher, LinearCalibration, LocalEstimator, LocalFamily};
use crate::operator::{hermitian_eig, trace_re};
use crate::states::BlankExtendedState;
use crate::{par, Error, Result};

/// Pinned in every report so runs can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64(seed), stream = batch index";
pub const BATCH_SIZE: usize = 65_536;
/// Eigenvalues closer than this times `max |lambda|` are one outcome.
pub const MERGE_TOL: f64 = 1e-10;
const PROB_NEGATIVE_TOL: f64 = 1e-12;
const PROB_SUM_TOL: f64 = 1e-9;

/// Outcome distribution of one projective measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementModel {
    outcomes: Vec<f64>,
    probabilities: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl MeasurementModel {
    /// Born distribution of `est` on `state`, degenerate eigenvalues merged.
    pub fn new(est: &LocalEstimator, state: &BlankExtendedState) -> Result<Self> {
        if est.dim_m() != state.dim_m() {
            return Err(Error::DimensionMismatch(format!(
                "estimator on dim {} vs state on dim {}",
                est.dim_m(),
                state.dim_m()
            )));
        }
        let rho = state.to_dense();
        let eig = hermitian_eig(&est.to_dense())?;
        let scale = eig.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut outcomes: Vec<f64> = Vec::new();
        let mut probabilities: Vec<f64> = Vec::new();
        for (k, &lambda) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(k);
            let p = (v.adjoint() * &rho * v)[(0, 0)].re;
            match outcomes.last() {
                Some(&prev) if (prev - lambda).abs() < MERGE_TOL * scale => {
                    *probabilities.last_mut().expect("paired with outcome") += p;
                }
                _ => {
                    outcomes.push(lambda);
                    probabilities.push(p);
                }
            }
        }
        Self::from_distribution(outcomes, probabilities)
    }

    pub fn from_distribution(outcomes: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        if outcomes.len() != probabilities.len() || outcomes.is_empty() {
            return Err(Error::DimensionMismatch("outcomes and probabilities must pair up".into()));
        }
        if outcomes.iter().chain(&probabilities).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measurement distribution".into()));
        }
        if let Some(&p) = probabilities.iter().find(|&&p| p < -PROB_NEGATIVE_TOL) {
            return Err(Error::NotPositive(p));
        }
        let probabilities: Vec<f64> = probabilities.into_iter().map(|p| p.max(0.0)).collect();
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidTrace {
                trace: total,
                reason: "outcome probabilities must sum to one",
            });
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        *cumulative.last_mut().expect("non-empty") = 1.0;
        Ok(Self {
            outcomes,
            probabilities,
            cumulative,
        })
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn mean(&self) -> f64 {
        self.outcomes.iter().zip(&self.probabilities).map(|(x, p)| x * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.outcomes
            .iter()
            .zip(&self.probabilities)
            .map(|(x, p)| p * (x - m).powi(2))
            .sum()
    }

    fn draw_index(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.outcomes.len() - 1)
    }
}

fn batch_rng(seed: u64, batch: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(batch as u64);
    r
}

fn batches(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BATCH_SIZE))
        .map(|b| (b, BATCH_SIZE.min(n - b * BATCH_SIZE)))
        .collect()
}

/// Indices of `n_shots` i.i.d. outcomes.
fn sample_indices(model: &MeasurementModel, n_shots: usize, seed: u64) -> Vec<usize> {
    let parts = par::map(&batches(n_shots), |&(b, len)| {
        let mut r = batch_rng(seed, b);
        (0..len).map(|_| model.draw_index(r.random::<f64>())).collect::<Vec<_>>()
    });
    parts.concat()
}

/// `n_shots` i.i.d. outcome values.
pub fn sample_outcomes(model: &MeasurementModel, n_shots: usize, seed: u64) -> Result<Vec<f64>> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
    }
    Ok(sample_indices(model, n_shots, seed).into_iter().map(|k| model.outcomes[k]).collect())
}

/// Outcome counts of `n_shots` draws; identical to tallying [`sample_outcomes`].
pub fn sample_counts(model: &MeasurementModel, n_shots: usize, seed: u64) -> Result<Vec<u64>> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
    }
    let k = model.outcomes.len();
    let parts = par::map(&batches(n_shots), |&(b, len)| {
        let mut r = batch_rng(seed, b);
        let mut counts = vec![0u64; k];
        for _ in 0..len {
            counts[model.draw_index(r.random::<f64>())] += 1;
        }
        counts
    });
    let mut total = vec![0u64; k];
    for c in parts {
        for (t, x) in total.iter_mut().zip(c) {
            *t += x;
        }
    }
    Ok(total)
}

/// `n_shots` draws of the mean of `n_avg` independent outcomes, i.e. one
/// measurement of the averaged estimator on `n_avg` copies per shot.
pub fn sample_averaged(model: &MeasurementModel, n_avg: usize, n_shots: usize, seed: u64) -> Result<Vec<f64>> {
    if n_avg == 0 {
        return Err(Error::InvalidArgument("averaging size must be at least 1".into()));
    }
    let raw = sample_outcomes(model, n_avg * n_shots, seed)?;
    Ok(raw.chunks(n_avg).map(|c| c.iter().sum::<f64>() / n_avg as f64).collect())
}

/// Summary of one run of shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunStatistics {
    pub rng_seed: u64,
    pub n_shots: usize,
    pub sample_mean: f64,
    /// Unbiased (`n - 1`) sample variance; zero for a single shot.
    pub sample_variance: f64,
    /// `f(sample_mean)` for the calibration used.
    pub g_hat: f64,
    /// `(g_hat - g_ref)^2` when a reference value was given.
    pub empirical_mse: Option<f64>,
}

fn mean_variance(values: impl Iterator<Item = (f64, f64)> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().map(|(x, w)| x * w).sum::<f64>() / n;
    let ss: f64 = values.map(|(x, w)| w * (x - mean).powi(2)).sum();
    let var = if n > 1.0 { ss / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// `g_hat = f(sample mean)` and sample statistics.
pub fn estimate_from_shots(
    outcomes: &[f64],
    calibration: &LinearCalibration,
    g_ref: Option<f64>,
    seed: u64,
) -> Result<RunStatistics> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    let (mean, var) = mean_variance(outcomes.iter().map(|&x| (x, 1.0)), outcomes.len() as f64);
    Ok(finish_stats(seed, outcomes.len(), mean, var, calibration, g_ref))
}

/// [`estimate_from_shots`] from outcome counts.
pub fn estimate_from_counts(
    model: &MeasurementModel,
    counts: &[u64],
    calibration: &LinearCalibration,
    g_ref: Option<f64>,
    seed: u64,
) -> Result<RunStatistics> {
    if counts.len() != model.outcomes.len() {
        return Err(Error::DimensionMismatch("one count per outcome".into()));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("no outcomes".into()));
    }
    let pairs = model.outcomes.iter().zip(counts).map(|(&x, &c)| (x, c as f64));
    let (mean, var) = mean_variance(pairs, n as f64);
    Ok(finish_stats(seed, n as usize, mean, var, calibration, g_ref))
}

fn finish_stats(
    seed: u64,
    n: usize,
    mean: f64,
    var: f64,
    calibration: &LinearCalibration,
    g_ref: Option<f64>,
) -> RunStatistics {
    let g_hat = calibration.apply(mean);
    RunStatistics {
        rng_seed: seed,
        n_shots: n,
        sample_mean: mean,
        sample_variance: var,
        g_hat,
        empirical_mse: g_ref.map(|g| (g_hat - g).powi(2)),
    }
}

/// One CSV row per repeat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepeatRow {
    pub seed: u64,
    pub n_shots: usize,
    pub mean: f64,
    pub variance: f64,
    pub g_hat: f64,
    /// Single-shot `delta g^2 = variance / slope^2`.
    pub delta_g_sq: f64,
}

impl RepeatRow {
    pub const CSV_HEADER: &'static str = "seed,n_shots,mean,variance,g_hat,delta_g_sq";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.seed, self.n_shots, self.mean, self.variance, self.g_hat, self.delta_g_sq
        )
    }
}

/// Empirical single-shot error against the bound `1 / J`.
#[derive(Debug, Clone, Serialize)]
pub struct CrCheckReport {
    pub g: f64,
    pub fisher: f64,
    pub cr_bound: f64,
    /// `V / slope^2` from the exact distribution.
    pub analytic_delta_g_sq: f64,
    pub slope: f64,
    /// `mean_r(delta_g_sq_r) * J`.
    pub ratio: f64,
    pub ratio_se: f64,
    /// `mean_r(n (g_hat_r - g)^2) * J`; noisier, shown for comparison.
    pub mse_ratio: f64,
    pub mse_ratio_se: f64,
    pub base_seed: u64,
    pub rng: &'static str,
    pub rows: Vec<RepeatRow>,
}

impl CrCheckReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RepeatRow::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (m, v) = mean_variance(xs.iter().map(|&x| (x, 1.0)), n);
    (m, (v / n).sqrt())
}

/// Seed of repeat `r`: `base_seed + r` (wrapping).
pub fn repeat_seed(base_seed: u64, r: usize) -> u64 {
    base_seed.wrapping_add(r as u64)
}

/// Measures `est` on the family at `g` for `n_repeats` runs of `n_shots`.
pub fn empirical_cr_check(
    family: &dyn LocalFamily,
    est: &LocalEstimator,
    g: f64,
    n_shots: usize,
    n_repeats: usize,
    base_seed: u64,
) -> Result<CrCheckReport> {
    if n_repeats < 2 || n_shots < 2 {
        return Err(Error::InvalidArgument("need at least 2 shots and 2 repeats".into()));
    }
    let (rho, drho) = family.accessible_with_derivative(g)?;
    let fisher = local_fisher(&rho, &drho)?.value;
    let err = expected_error_at(&rho, &drho, est)?;
    let calibration = LinearCalibration {
        g0: g,
        mean: err.mean,
        slope: err.slope,
    };
    let state = BlankExtendedState {
        blank_weight: (1.0 - trace_re(&rho)).max(0.0),
        accessible: rho,
    };
    let model = MeasurementModel::new(est, &state)?;
    let mut rows = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let seed = repeat_seed(base_seed, r);
        let counts = sample_counts(&model, n_shots, seed)?;
        let s = estimate_from_counts(&model, &counts, &calibration, Some(g), seed)?;
        rows.push(RepeatRow {
            seed,
            n_shots,
            mean: s.sample_mean,
            variance: s.sample_variance,
            g_hat: s.g_hat,
            delta_g_sq: s.sample_variance / (err.slope * err.slope),
        });
    }
    let scaled: Vec<f64> = rows.iter().map(|r| r.delta_g_sq * fisher).collect();
    let (ratio, ratio_se) = mean_and_se(&scaled);
    let mse: Vec<f64> = rows
        .iter()
        .map(|r| n_shots as f64 * (r.g_hat - g).powi(2) * fisher)
        .collect();
    let (mse_ratio, mse_ratio_se) = mean_and_se(&mse);
    Ok(CrCheckReport {
        g,
        fisher,
        cr_bound: 1.0 / fisher,
        analytic_delta_g_sq: err.delta_g_squared(),
        slope: err.slope,
        ratio,
        ratio_se,
        mse_ratio,
        mse_ratio_se,
        base_seed,
        rng: RNG_ALGORITHM,
        rows,
    })
}

/// Empirical variance of the `N`-sample average relative to `V / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragingPoint {
    pub n_avg: usize,
    pub empirical_variance: f64,
    pub predicted_variance: f64,
    /// `empirical / predicted`.
    pub ratio: f64,
}

pub fn averaging_scaling(
    model: &MeasurementModel,
    sizes: &[usize],
    n_shots: usize,
    seed: u64,
) -> Result<Vec<AveragingPoint>> {
    let v = model.variance();
    if v <= 0.0 {
        return Err(Error::InvalidArgument("dispersion-free outcome distribution".into()));
    }
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let xs = sample_averaged(model, n, n_shots, repeat_seed(seed, i))?;
            let (_, var) = mean_variance(xs.iter().map(|&x| (x, 1.0)), xs.len() as f64);
            let predicted = v / n as f64;
            Ok(AveragingPoint {
                n_avg: n,
                empirical_variance: var,
                predicted_variance: predicted,
                ratio: var / predicted,
            })
        })
        .collect()
}
