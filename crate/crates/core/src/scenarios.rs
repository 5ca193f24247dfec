//! Preset models: the decaying two-level system with its leading-order closed
//! forms, and a unitary three-level leakage model whose norm loss is quadratic
//! at early times.
//!
//! Two-level model: `H = -i diag(G+, G-) + g sigma_x` on `M = span{|+>, |->}`
//! with `|+> = (1, 0)` and `|-> = (0, 1)`. To first order in `g`,
//!
//! ```text
//! |+-(g, t)> = e^{-G+- t} |+-> + i g d(t) |-+>,   d(t) = (e^{-G+ t} - e^{-G- t}) / (G+ - G-)
//! ```
//!
//! and every information quantity below is quoted at order `g^0`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::composite::CompositeScenario;
use crate::dynamics::{evolve_vector_with_derivative, ChannelFamily, HamiltonianFamily};
use crate::operator::pauli;
use crate::states::{DensityOperator, Subsequence, SubspaceProjector};
use crate::{c64, CMatrix, CVector, Error, Result};

/// Which basis state a single system starts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
}

/// `G+`, `G-` with `G+ != G-`, both positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelDecayModel {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

/// Closed-form optimum of `4 d(t)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalTime {
    pub t_star: f64,
    pub j_max: f64,
}

/// Selector for the two-subsystem closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeForm {
    /// `j^(2)` for `|++>`.
    IidSmallJ2,
    /// `J^(2)` for `|++>`.
    IidJ2,
    /// `j^(2)` for `(|+-> + |-+>)/sqrt 2`.
    EntSmallJ2,
    /// `J^(2)` for `(|+-> + |-+>)/sqrt 2`.
    EntJ2,
}

impl TwoLevelDecayModel {
    pub fn new(gamma_plus: f64, gamma_minus: f64) -> Result<Self> {
        for (name, v) in [("gamma_plus", gamma_plus), ("gamma_minus", gamma_minus)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if (gamma_plus - gamma_minus).abs() <= 1e-12 * gamma_plus.max(gamma_minus) {
            return Err(Error::InvalidArgument(
                "decay rates must differ (the response d(t) is 0/0 otherwise)".into(),
            ));
        }
        Ok(Self {
            gamma_plus,
            gamma_minus,
        })
    }

    fn rates(&self, branch: Branch) -> (f64, f64) {
        match branch {
            Branch::Plus => (self.gamma_plus, self.gamma_minus),
            Branch::Minus => (self.gamma_minus, self.gamma_plus),
        }
    }

    pub fn hamiltonian(&self) -> HamiltonianFamily {
        let mut h0 = CMatrix::zeros(2, 2);
        h0[(0, 0)] = c64(0.0, -self.gamma_plus);
        h0[(1, 1)] = c64(0.0, -self.gamma_minus);
        HamiltonianFamily::affine(h0, pauli::x(), false).expect("2x2 coefficients")
    }

    pub fn channels(&self) -> ChannelFamily {
        ChannelFamily::effective(self.hamiltonian())
    }

    pub fn ket(branch: Branch) -> CVector {
        match branch {
            Branch::Plus => CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]),
            Branch::Minus => CVector::from_vec(vec![c64(0.0, 0.0), c64(1.0, 0.0)]),
        }
    }

    /// `d(t) = (e^{-G+ t} - e^{-G- t}) / (G+ - G-)`.
    pub fn d(&self, t: f64) -> f64 {
        ((-self.gamma_plus * t).exp() - (-self.gamma_minus * t).exp())
            / (self.gamma_plus - self.gamma_minus)
    }

    /// Single-system information `4 d(t)^2` (either branch).
    pub fn closed_form_j_single(&self, t: f64) -> f64 {
        4.0 * self.d(t).powi(2)
    }

    pub fn optimal_time(&self) -> OptimalTime {
        let (gp, gm) = (self.gamma_plus, self.gamma_minus);
        let dg = gp - gm;
        let t_star = (gp.ln() - gm.ln()) / dg;
        let j_max = 4.0 / (dg * dg)
            * ((gm / gp).powf(gp / dg) - (gp / gm).powf(gm / (gm - gp))).powi(2);
        OptimalTime { t_star, j_max }
    }

    /// Golden-section maximisation of `4 d(t)^2`. The maximiser lies below
    /// `1 / min(G+, G-)` (from `ln x <= x - 1`), so `[0, 2 / min]` brackets it.
    pub fn numerical_optimal_time(&self) -> OptimalTime {
        let f = |t: f64| self.closed_form_j_single(t);
        let (t, v) = golden_section_max(f, 0.0, 2.0 / self.gamma_plus.min(self.gamma_minus), 1e-12);
        OptimalTime { t_star: t, j_max: v }
    }

    /// Probability of still being in `M` at `t` for the `|+>` preparation, order `g^0`.
    pub fn survival(&self, t: f64) -> f64 {
        (-2.0 * self.gamma_plus * t).exp()
    }

    /// `e^{-G t} |branch> + i g d(t) |other>`.
    pub fn first_order_state(&self, g: f64, t: f64, branch: Branch) -> CVector {
        let (own, _) = self.rates(branch);
        let other = match branch {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        };
        Self::ket(branch) * c64((-own * t).exp(), 0.0) + Self::ket(other) * c64(0.0, g * self.d(t))
    }

    /// Exact `|branch(g, t)>` and its `g`-derivative.
    pub fn evolved_state(&self, g: f64, t: f64, branch: Branch) -> Result<(CVector, CVector)> {
        evolve_vector_with_derivative(&self.hamiltonian(), &Self::ket(branch), g, t)
    }

    pub fn closed_form_composite(&self, t: f64, which: CompositeForm) -> f64 {
        let d2 = self.d(t).powi(2);
        let a = (-self.gamma_plus * t).exp();
        let b = (-self.gamma_minus * t).exp();
        match which {
            CompositeForm::IidSmallJ2 => 8.0 * d2 * a * a,
            CompositeForm::IidJ2 => 8.0 * d2,
            CompositeForm::EntSmallJ2 => 8.0 * d2 * (a * a + b * b),
            CompositeForm::EntJ2 => {
                let small = 8.0 * d2 * (a * a + b * b);
                let denom = a * a * (1.0 - b * b) + b * b * (1.0 - a * a);
                if denom <= 0.0 {
                    return small;
                }
                small + 4.0 * d2 * (1.0 + 2.0 * a * b).powi(2) * (a - b).powi(2) / denom
            }
        }
    }

    /// Per-block `J^(2)` contributions for `|++>`: `[]`, `[1]`, `[2]`, `[1,2]`.
    pub fn iid_block_closed_forms(&self, t: f64) -> BTreeMap<Subsequence, f64> {
        let d2 = self.d(t).powi(2);
        let a2 = (-2.0 * self.gamma_plus * t).exp();
        BTreeMap::from([
            (Subsequence::EMPTY, 8.0 * d2 * a2),
            (Subsequence::from_sites(&[0]), 4.0 * d2 * (1.0 - a2)),
            (Subsequence::from_sites(&[1]), 4.0 * d2 * (1.0 - a2)),
            (Subsequence::from_sites(&[0, 1]), 0.0),
        ])
    }
}

/// Maximises a unimodal `f` on `[lo, hi]`; returns `(argmax, max)`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let t = 0.5 * (lo + hi);
    (t, f(t))
}

/// Named presets for the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TwoLevelSingle,
    TwoLevelIid2,
    TwoLevelEnt2,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::TwoLevelSingle, Preset::TwoLevelIid2, Preset::TwoLevelEnt2];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoLevelSingle => "two_level_single",
            Preset::TwoLevelIid2 => "two_level_iid2",
            Preset::TwoLevelEnt2 => "two_level_ent2",
        }
    }

    pub fn n_subsystems(self) -> usize {
        match self {
            Preset::TwoLevelSingle => 1,
            _ => 2,
        }
    }

    /// Initial state on `M^(x)N`.
    pub fn initial_state(self) -> CMatrix {
        let p = TwoLevelDecayModel::ket(Branch::Plus);
        let m = TwoLevelDecayModel::ket(Branch::Minus);
        let psi = match self {
            Preset::TwoLevelSingle => p,
            Preset::TwoLevelIid2 => p.kronecker(&p),
            Preset::TwoLevelEnt2 => {
                (p.kronecker(&m) + m.kronecker(&p)) * c64(std::f64::consts::FRAC_1_SQRT_2, 0.0)
            }
        };
        &psi * psi.adjoint()
    }

    pub fn scenario(self, model: &TwoLevelDecayModel) -> Result<CompositeScenario> {
        CompositeScenario::new(
            self.n_subsystems(),
            DensityOperator::normalized(self.initial_state())?,
            model.channels(),
        )
    }

    /// Leading-order `(j^(N), J^(N))` for this preset.
    pub fn closed_forms(self, model: &TwoLevelDecayModel, t: f64) -> (f64, f64) {
        match self {
            Preset::TwoLevelSingle => {
                let j = model.closed_form_j_single(t);
                (j, j)
            }
            Preset::TwoLevelIid2 => (
                model.closed_form_composite(t, CompositeForm::IidSmallJ2),
                model.closed_form_composite(t, CompositeForm::IidJ2),
            ),
            Preset::TwoLevelEnt2 => (
                model.closed_form_composite(t, CompositeForm::EntSmallJ2),
                model.closed_form_composite(t, CompositeForm::EntJ2),
            ),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown preset {s:?}; expected one of two_level_single, two_level_iid2, two_level_ent2"
                ))
            })
    }
}

/// Three-level system with `M = span{|0>, |1>}`:
/// `H(g) = omega (|0><1| + h.c.) + delta |2><2| + g (|0><2| + h.c.)`.
///
/// Starting from `|0>`, the population outside `M` grows as `g^2 t^2`, so the
/// blank term of the pure-state formula tends to `4 t^2` as `t -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageModel {
    pub omega: f64,
    pub delta: f64,
}

impl LeakageModel {
    pub fn new(omega: f64, delta: f64) -> Result<Self> {
        if !omega.is_finite() || !delta.is_finite() {
            return Err(Error::NonFinite("leakage model parameters".into()));
        }
        Ok(Self { omega, delta })
    }

    pub fn hamiltonian(&self) -> HamiltonianFamily {
        let mut h0 = CMatrix::zeros(3, 3);
        h0[(0, 1)] = c64(self.omega, 0.0);
        h0[(1, 0)] = c64(self.omega, 0.0);
        h0[(2, 2)] = c64(self.delta, 0.0);
        let mut h1 = CMatrix::zeros(3, 3);
        h1[(0, 2)] = c64(1.0, 0.0);
        h1[(2, 0)] = c64(1.0, 0.0);
        HamiltonianFamily::affine(h0, h1, true).expect("Hermitian coefficients")
    }

    pub fn subspace() -> SubspaceProjector {
        SubspaceProjector::from_indices(3, &[0, 1]).expect("valid indices")
    }

    pub fn channels(&self) -> ChannelFamily {
        ChannelFamily::unitary(self.hamiltonian(), Self::subspace()).expect("consistent dims")
    }

    /// Accessible part of `e^{-iHt}|0>` and its `g`-derivative.
    pub fn accessible_state(&self, g: f64, t: f64) -> Result<(CVector, CVector)> {
        let mut psi0 = CVector::zeros(3);
        psi0[0] = c64(1.0, 0.0);
        let (psi, dpsi) = evolve_vector_with_derivative(&self.hamiltonian(), &psi0, g, t)?;
        let b = Self::subspace();
        Ok((b.basis().adjoint() * psi, b.basis().adjoint() * dpsi))
    }

    /// `lim_{t -> 0} blank_term / t^2` for `g != 0`.
    pub fn early_blank_coefficient(&self) -> f64 {
        4.0
    }
}
