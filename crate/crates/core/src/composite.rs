//! Information available from `N` subsystems that are each observed on `M`.
//!
//! Two functionals are provided:
//!
//! - `j^(N)` ([`single_blank_fisher`]): the accessible operator on `M^(x)N`
//!   extended with one global blank state;
//! - `J^(N)` ([`block_fisher`]): the sum of per-block informations of the
//!   composite local state, where block `s` holds the configurations in which
//!   exactly the subsystems in `s` have left `M`.
//!
//! Blocks ("descendants") are computed either from a full-space model
//! ([`descendants_direct`]) or, for factorised channels, by inclusion-exclusion
//! over channel-evolved partial traces ([`descendants_via_channels`]):
//!
//! ```text
//! rho_I = sum_{J subset I} (-1)^{|I|-|J|} Tr_{I\J} [ Gamma^(x)(N-|J|) [ Tr_J rho(0) ] ]
//! ```

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dynamics::{
    channel_tensor_apply, channel_tensor_apply_with_derivative, richardson_derivative_many,
    ChannelFamily, DerivativeStrategy, QuantumChannel,
};
use crate::fisher::{fisher_info, local_fisher, FisherReport};
use crate::operator::{hermitian_eig, hermitian_part, partial_trace, solve_sld, tensor_all, trace_re};
use crate::states::{
    composite_local_state, BlankExtendedState, CompositeLocalState, DensityOperator, Subsequence,
};
use crate::{c64, par, CMatrix, Error, Result};

/// Largest `N` accepted by the channel path.
pub const MAX_CHANNEL_SUBSYSTEMS: usize = 4;
/// Largest `N` accepted by the full-space path.
pub const MAX_DIRECT_SUBSYSTEMS: usize = 3;
/// Blocks with eigenvalues below this are a bug, not round-off.
pub const DESCENDANT_REJECT: f64 = 1e-6;
/// Negative eigenvalues below `-DESCENDANT_WARN` are flagged before clipping.
pub const DESCENDANT_WARN: f64 = 1e-9;
/// Blocks with trace at or below this contribute nothing to `J^(N)`.
pub const EPS_BLOCK: f64 = 1e-12;

/// `N` subsystems prepared in a joint state on `M^(x)N`, each evolving under
/// the same channel family.
#[derive(Debug, Clone)]
pub struct CompositeScenario {
    n: usize,
    initial: CMatrix,
    channels: ChannelFamily,
    pub strategy: DerivativeStrategy,
}

impl CompositeScenario {
    pub fn new(n: usize, initial: DensityOperator, channels: ChannelFamily) -> Result<Self> {
        if n == 0 || n > MAX_CHANNEL_SUBSYSTEMS {
            return Err(Error::TooLarge {
                what: "subsystem count",
                value: n,
                max: MAX_CHANNEL_SUBSYSTEMS,
            });
        }
        let want = channels.dim_m().pow(n as u32);
        if initial.dim() != want {
            return Err(Error::DimensionMismatch(format!(
                "initial state of dim {} for {n} subsystems of dim {}",
                initial.dim(),
                channels.dim_m()
            )));
        }
        Ok(Self {
            n,
            initial: initial.into_matrix(),
            channels,
            strategy: DerivativeStrategy::Analytic,
        })
    }

    /// `rho^(x)N`.
    pub fn iid(n: usize, single: &DensityOperator, channels: ChannelFamily) -> Result<Self> {
        let copies = vec![single.matrix(); n];
        let rho = tensor_all(copies);
        Self::new(n, DensityOperator::normalized(rho)?, channels)
    }

    pub fn with_strategy(mut self, strategy: DerivativeStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn n_subsystems(&self) -> usize {
        self.n
    }

    pub fn dim_m(&self) -> usize {
        self.channels.dim_m()
    }

    pub fn initial(&self) -> &CMatrix {
        &self.initial
    }

    pub fn channels(&self) -> &ChannelFamily {
        &self.channels
    }

    fn accessible_at(&self, g: f64, t: f64) -> Result<CMatrix> {
        let ch = self.channels.channel(g, t)?;
        Ok(hermitian_part(&channel_tensor_apply(&ch, self.n, &self.initial)?))
    }

    /// `Gamma^(x)N [rho(0)]` and its `g`-derivative.
    pub fn accessible_with_derivative(&self, g: f64, t: f64) -> Result<(CMatrix, CMatrix)> {
        match self.strategy {
            DerivativeStrategy::Analytic => {
                let ch = self.channels.channel(g, t)?;
                let zero = CMatrix::zeros(self.initial.nrows(), self.initial.ncols());
                let (y, dy) = channel_tensor_apply_with_derivative(&ch, self.n, &self.initial, &zero)?;
                Ok((hermitian_part(&y), hermitian_part(&dy)))
            }
            DerivativeStrategy::FiniteDifference => {
                let y = self.accessible_at(g, t)?;
                let mut d = richardson_derivative_many(|x| Ok(vec![self.accessible_at(x, t)?]), g)?;
                Ok((y, hermitian_part(&d.pop().expect("one entry"))))
            }
        }
    }
}

/// Non-fatal observations made while building descendants.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DescendantFlag {
    /// A block had an eigenvalue in `[-DESCENDANT_REJECT, -DESCENDANT_WARN)`
    /// and was clipped.
    ClippedNegative { subsequence: String, min_eigenvalue: f64 },
    /// A block's trace was at or below `EPS_BLOCK`; it contributes zero.
    NegligibleBlock { subsequence: String, trace: f64 },
}

/// All `2^N` blocks of the composite local state and their `g`-derivatives.
#[derive(Debug, Clone)]
pub struct DescendantSet {
    pub n: usize,
    pub dim_m: usize,
    pub blocks: BTreeMap<Subsequence, CMatrix>,
    pub derivatives: BTreeMap<Subsequence, CMatrix>,
    pub min_eigenvalue: f64,
    pub flags: Vec<DescendantFlag>,
}

impl DescendantSet {
    pub fn block(&self, s: Subsequence) -> &CMatrix {
        &self.blocks[&s]
    }

    pub fn derivative(&self, s: Subsequence) -> &CMatrix {
        &self.derivatives[&s]
    }

    pub fn total_trace(&self) -> f64 {
        self.blocks.values().map(trace_re).sum()
    }

    pub fn to_local_state(&self) -> Result<CompositeLocalState> {
        CompositeLocalState::new(self.n, self.dim_m, self.blocks.clone())
    }

    /// Largest entrywise difference between two sets, blocks and derivatives.
    pub fn max_difference(&self, other: &DescendantSet) -> (f64, f64) {
        let diff = |a: &BTreeMap<Subsequence, CMatrix>, b: &BTreeMap<Subsequence, CMatrix>| {
            a.iter()
                .map(|(s, m)| match b.get(s) {
                    Some(o) if o.shape() == m.shape() => crate::operator::max_abs(&(m - o)),
                    _ => f64::INFINITY,
                })
                .fold(0.0, f64::max)
        };
        (diff(&self.blocks, &other.blocks), diff(&self.derivatives, &other.derivatives))
    }
}

/// Hermitises, checks and clips raw blocks; records the smallest eigenvalue.
fn finish_descendants(
    n: usize,
    dim_m: usize,
    raw: Vec<(Subsequence, CMatrix, CMatrix)>,
) -> Result<DescendantSet> {
    let mut blocks = BTreeMap::new();
    let mut derivatives = BTreeMap::new();
    let mut flags = Vec::new();
    let mut min_all = f64::INFINITY;
    for (s, b, db) in raw {
        let b = hermitian_part(&b);
        let eig = hermitian_eig(&b)?;
        let min = eig.min_value();
        min_all = min_all.min(min);
        if min < -DESCENDANT_REJECT {
            return Err(Error::NegativeDescendant {
                subsequence: s.to_string(),
                min_eigenvalue: min,
            });
        }
        if min < -DESCENDANT_WARN {
            flags.push(DescendantFlag::ClippedNegative {
                subsequence: s.to_string(),
                min_eigenvalue: min,
            });
        }
        let b = if min < 0.0 { eig.map_values(|v| v.max(0.0)) } else { b };
        blocks.insert(s, b);
        derivatives.insert(s, hermitian_part(&db));
    }
    Ok(DescendantSet {
        n,
        dim_m,
        blocks,
        derivatives,
        min_eigenvalue: min_all,
        flags,
    })
}

/// `Gamma^(x)(N-|J|) [Tr_J rho(0)]` for every `J`, indexed by mask. Each
/// entry is evolved exactly once; entries are independent and computed in
/// parallel when the `parallel` feature is on.
fn evolved_partials(sc: &CompositeScenario, ch: &QuantumChannel, with_derivative: bool) -> Result<Vec<(CMatrix, CMatrix)>> {
    let n = sc.n;
    let dims = vec![sc.dim_m(); n];
    let masks: Vec<u32> = (0..(1u32 << n)).collect();
    let out = par::map(&masks, |&mask| -> Result<(CMatrix, CMatrix)> {
        let j = Subsequence::from_mask(mask);
        let reduced = partial_trace(&sc.initial, &dims, &j.sites())?;
        let k = n - j.len();
        if k == 0 {
            return Ok((reduced, CMatrix::zeros(1, 1)));
        }
        if with_derivative {
            let zero = CMatrix::zeros(reduced.nrows(), reduced.ncols());
            channel_tensor_apply_with_derivative(ch, k, &reduced, &zero)
        } else {
            let y = channel_tensor_apply(ch, k, &reduced)?;
            let z = CMatrix::zeros(y.nrows(), y.ncols());
            Ok((y, z))
        }
    });
    out.into_iter().collect()
}

/// Inclusion-exclusion over the memoised evolved partials.
fn combine(n: usize, dim_m: usize, evolved: &[(CMatrix, CMatrix)]) -> Result<Vec<(Subsequence, CMatrix, CMatrix)>> {
    let targets = Subsequence::all(n);
    let out = par::map(&targets, |&i| -> Result<(Subsequence, CMatrix, CMatrix)> {
        let size = dim_m.pow((n - i.len()) as u32);
        let mut acc = CMatrix::zeros(size, size);
        let mut dacc = CMatrix::zeros(size, size);
        for j in i.subsets() {
            let kept = j.complement_sites(n);
            let positions: Vec<usize> = i
                .difference(j)
                .sites()
                .iter()
                .map(|site| kept.iter().position(|k| k == site).expect("I\\J is outside J"))
                .collect();
            let dims = vec![dim_m; kept.len()];
            let (y, dy) = &evolved[j.mask() as usize];
            let (term, dterm) = if kept.is_empty() {
                (y.clone(), dy.clone())
            } else {
                (partial_trace(y, &dims, &positions)?, partial_trace(dy, &dims, &positions)?)
            };
            let sign = if (i.len() - j.len()) % 2 == 0 { 1.0 } else { -1.0 };
            acc += term * c64(sign, 0.0);
            dacc += dterm * c64(sign, 0.0);
        }
        Ok((i, acc, dacc))
    });
    out.into_iter().collect()
}

fn channel_blocks(sc: &CompositeScenario, g: f64, t: f64, with_derivative: bool) -> Result<Vec<(Subsequence, CMatrix, CMatrix)>> {
    let ch = sc.channels.channel(g, t)?;
    let evolved = evolved_partials(sc, &ch, with_derivative)?;
    combine(sc.n, sc.dim_m(), &evolved)
}

/// Descendant blocks by inclusion-exclusion over channel-evolved partial traces.
pub fn descendants_via_channels(sc: &CompositeScenario, g: f64, t: f64) -> Result<DescendantSet> {
    let raw = match sc.strategy {
        DerivativeStrategy::Analytic => channel_blocks(sc, g, t, true)?,
        DerivativeStrategy::FiniteDifference => {
            let base = channel_blocks(sc, g, t, false)?;
            let d = richardson_derivative_many(
                |x| Ok(channel_blocks(sc, x, t, false)?.into_iter().map(|(_, b, _)| b).collect()),
                g,
            )?;
            base.into_iter()
                .zip(d)
                .map(|((s, b, _), db)| (s, b, db))
                .collect()
        }
    };
    finish_descendants(sc.n, sc.dim_m(), raw)
}

fn direct_blocks(sc: &CompositeScenario, g: f64, t: f64) -> Result<Vec<(Subsequence, CMatrix)>> {
    let model = sc.channels.full_space(g, t)?;
    let v = tensor_all(vec![&model.isometry; sc.n]);
    let rho = &v * &sc.initial * v.adjoint();
    let state = composite_local_state(&DensityOperator::normalized(hermitian_part(&rho))?, &model.subspace, sc.n)?;
    Ok(state.blocks().iter().map(|(s, b)| (*s, b.clone())).collect())
}

/// Descendant blocks from the full-space evolution of all `N` subsystems,
/// split by projection. Derivatives are always finite differences.
pub fn descendants_direct(sc: &CompositeScenario, g: f64, t: f64) -> Result<DescendantSet> {
    if sc.n > MAX_DIRECT_SUBSYSTEMS {
        return Err(Error::TooLarge {
            what: "subsystem count for the full-space path",
            value: sc.n,
            max: MAX_DIRECT_SUBSYSTEMS,
        });
    }
    let base = direct_blocks(sc, g, t)?;
    let d = richardson_derivative_many(
        |x| Ok(direct_blocks(sc, x, t)?.into_iter().map(|(_, b)| b).collect()),
        g,
    )?;
    let raw = base.into_iter().zip(d).map(|((s, b), db)| (s, b, db)).collect();
    finish_descendants(sc.n, sc.dim_m(), raw)
}

/// `j^(N)`: information of `Gamma^(x)N[rho(0)]` with a single blank state.
pub fn single_blank_fisher(sc: &CompositeScenario, g: f64, t: f64) -> Result<FisherReport> {
    let (rho, drho) = sc.accessible_with_derivative(g, t)?;
    local_fisher(&rho, &drho)
}

/// Contribution of one descendant block to `J^(N)`.
#[derive(Debug, Clone, Serialize)]
pub struct BlockTerm {
    pub trace: f64,
    pub fisher: f64,
    pub support_rank: usize,
    pub kernel_leak: f64,
    #[serde(with = "crate::io::matrix_serde")]
    pub sld: CMatrix,
}

/// `J^(N)` with its per-block breakdown, keyed by the 1-based subsequence label.
#[derive(Debug, Clone, Serialize)]
pub struct BlockFisherReport {
    pub value: f64,
    pub blocks: BTreeMap<String, BlockTerm>,
    pub min_block_eigenvalue: f64,
    pub flags: Vec<DescendantFlag>,
}

impl BlockFisherReport {
    pub fn block(&self, s: Subsequence) -> Option<&BlockTerm> {
        self.blocks.get(&s.to_string())
    }
}

/// `J^(N)` from an already computed descendant set.
pub fn block_fisher_from(set: &DescendantSet) -> Result<BlockFisherReport> {
    let entries: Vec<(Subsequence, &CMatrix, &CMatrix)> = set
        .blocks
        .iter()
        .map(|(s, b)| (*s, b, &set.derivatives[s]))
        .collect();
    let terms = par::map(&entries, |&(s, b, db)| -> Result<(Subsequence, BlockTerm, bool)> {
        let tr = trace_re(b);
        if tr <= EPS_BLOCK {
            let term = BlockTerm {
                trace: tr,
                fisher: 0.0,
                support_rank: 0,
                kernel_leak: 0.0,
                sld: CMatrix::zeros(b.nrows(), b.ncols()),
            };
            return Ok((s, term, true));
        }
        if b.nrows() == 1 {
            let p = b[(0, 0)].re;
            let dp = db[(0, 0)].re;
            let term = BlockTerm {
                trace: p,
                fisher: dp * dp / p,
                support_rank: 1,
                kernel_leak: 0.0,
                sld: CMatrix::from_element(1, 1, c64(dp / p, 0.0)),
            };
            return Ok((s, term, false));
        }
        let sld = solve_sld(b, db)?;
        let fisher = trace_re(&(&sld.matrix * &sld.matrix * b)).max(0.0);
        Ok((
            s,
            BlockTerm {
                trace: tr,
                fisher,
                support_rank: sld.support_rank,
                kernel_leak: sld.kernel_leak,
                sld: sld.matrix,
            },
            false,
        ))
    });
    let mut flags = set.flags.clone();
    let mut blocks = BTreeMap::new();
    let mut value = 0.0;
    for r in terms {
        let (s, term, negligible) = r?;
        if negligible {
            flags.push(DescendantFlag::NegligibleBlock {
                subsequence: s.to_string(),
                trace: term.trace,
            });
        }
        value += term.fisher;
        blocks.insert(s.to_string(), term);
    }
    Ok(BlockFisherReport {
        value,
        blocks,
        min_block_eigenvalue: set.min_eigenvalue,
        flags,
    })
}

/// `J^(N)` via the channel path.
pub fn block_fisher(sc: &CompositeScenario, g: f64, t: f64) -> Result<BlockFisherReport> {
    block_fisher_from(&descendants_via_channels(sc, g, t)?)
}

/// Image of a descendant set under `R`, which merges every block that carries
/// a blank into one blank weight, together with the induced derivative.
#[derive(Debug, Clone)]
pub struct CollapsedState {
    pub state: BlankExtendedState,
    pub accessible_derivative: CMatrix,
}

impl CollapsedState {
    /// Unit-trace Fisher information of the collapsed family.
    pub fn fisher(&self) -> Result<FisherReport> {
        let rho = self.state.to_dense();
        let d = self.state.dim_m();
        let mut drho = CMatrix::zeros(d + 1, d + 1);
        drho.view_mut((0, 0), (d, d)).copy_from(&self.accessible_derivative);
        drho[(d, d)] = c64(-trace_re(&self.accessible_derivative), 0.0);
        fisher_info(&rho, &drho)
    }
}

pub fn collapse_blanks(set: &DescendantSet) -> CollapsedState {
    let acc = set.blocks[&Subsequence::EMPTY].clone();
    let blank = (1.0 - trace_re(&acc)).max(0.0);
    CollapsedState {
        state: BlankExtendedState {
            accessible: acc,
            blank_weight: blank,
        },
        accessible_derivative: set.derivatives[&Subsequence::EMPTY].clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::EvolvedFamily;
    use crate::fisher::family_fisher;
    use crate::random;
    use crate::scenarios::{Preset, TwoLevelDecayModel};
    use crate::states::{extend_with_blank, project_accessible};
    use approx::assert_abs_diff_eq;

    fn random_scenario(r: &mut impl rand::Rng, n: usize, d: usize) -> CompositeScenario {
        let rho = random::density(r, d.pow(n as u32), 2);
        CompositeScenario::new(
            n,
            DensityOperator::normalized(rho).unwrap(),
            ChannelFamily::effective(random::effective_family(r, d)),
        )
        .unwrap()
    }

    #[test]
    fn t_zero_only_empty_block() {
        let mut r = random::rng(1);
        let sc = random_scenario(&mut r, 2, 2);
        for set in [descendants_via_channels(&sc, 0.3, 0.0).unwrap(), descendants_direct(&sc, 0.3, 0.0).unwrap()] {
            for (s, b) in &set.blocks {
                if s.is_empty() {
                    assert_abs_diff_eq!(trace_re(b), 1.0, epsilon = 1e-12);
                } else {
                    assert!(crate::operator::max_abs(b) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn direct_and_channel_paths_agree() {
        let mut r = random::rng(2);
        for (n, d) in [(2, 2), (2, 3), (3, 2)] {
            let sc = random_scenario(&mut r, n, d);
            let a = descendants_via_channels(&sc, 0.2, 0.4).unwrap();
            let b = descendants_direct(&sc, 0.2, 0.4).unwrap();
            let (db, dd) = a.max_difference(&b);
            assert!(db < 1e-10, "blocks differ by {db}");
            assert!(dd < 1e-6, "derivatives differ by {dd}");
            assert_abs_diff_eq!(a.total_trace(), 1.0, epsilon = 1e-9);
            assert!(a.to_local_state().is_ok());
        }
    }

    #[test]
    fn channel_path_on_unitary_family_matches_direct() {
        let mut r = random::rng(3);
        let channels = random::unitary_family(&mut r, 3, 2);
        let rho = random::density(&mut r, 4, 4);
        let sc = CompositeScenario::new(2, DensityOperator::normalized(rho).unwrap(), channels).unwrap();
        let a = descendants_via_channels(&sc, -0.4, 0.9).unwrap();
        let b = descendants_direct(&sc, -0.4, 0.9).unwrap();
        assert!(a.max_difference(&b).0 < 1e-10);
    }

    #[test]
    fn analytic_and_fd_derivatives_agree() {
        let mut r = random::rng(4);
        let sc = random_scenario(&mut r, 2, 2);
        let a = descendants_via_channels(&sc, 0.1, 0.5).unwrap();
        let b = descendants_via_channels(&sc.clone().with_strategy(DerivativeStrategy::FiniteDifference), 0.1, 0.5)
            .unwrap();
        assert!(a.max_difference(&b).1 < 1e-7);
    }

    #[test]
    fn n_equals_one_reduces_to_single_system() {
        let m = TwoLevelDecayModel::new(2.0, 1.0).unwrap();
        let rho0 = DensityOperator::normalized(Preset::TwoLevelSingle.initial_state()).unwrap();
        let sc = CompositeScenario::new(1, rho0.clone(), m.channels()).unwrap();
        let (g, t) = (0.05, 0.8);
        let j = single_blank_fisher(&sc, g, t).unwrap().value;
        let big = block_fisher(&sc, g, t).unwrap().value;
        let fam = EvolvedFamily::new(rho0, m.channels(), t).unwrap();
        let single = family_fisher(&fam, g).unwrap().value;
        assert_abs_diff_eq!(j, single, epsilon = 1e-12);
        assert_abs_diff_eq!(big, single, epsilon = 1e-9 * single.max(1.0));

        // N = 1 direct blocks are the blank extension of the accessible part.
        let set = descendants_direct(&sc, g, t).unwrap();
        let full = m.channels().full_space(g, t).unwrap();
        let rho_tot = &full.isometry * sc.initial() * full.isometry.adjoint();
        let acc = project_accessible(&DensityOperator::normalized(rho_tot).unwrap(), &full.subspace).unwrap();
        let ext = extend_with_blank(&acc);
        assert!(crate::operator::max_abs(&(set.block(Subsequence::EMPTY) - &ext.accessible)) < 1e-12);
        assert_abs_diff_eq!(set.block(Subsequence::from_sites(&[0]))[(0, 0)].re, ext.blank_weight, epsilon = 1e-12);
    }

    #[test]
    fn iid_information_is_additive() {
        let mut r = random::rng(5);
        for n in [2usize, 3] {
            for _ in 0..3 {
                let single = DensityOperator::normalized(random::density(&mut r, 2, 2)).unwrap();
                let channels = ChannelFamily::effective(random::effective_family(&mut r, 2));
                let sc = CompositeScenario::iid(n, &single, channels.clone()).unwrap();
                let (g, t) = (0.2, 0.6);
                let big = block_fisher(&sc, g, t).unwrap().value;
                let one = family_fisher(&EvolvedFamily::new(single, channels, t).unwrap(), g).unwrap().value;
                assert!((big / (n as f64 * one) - 1.0).abs() < 1e-6, "{big} vs {n} x {one}");
            }
        }
    }

    #[test]
    fn monotone_and_collapse_is_consistent() {
        let mut r = random::rng(6);
        for n in [2usize, 3] {
            for _ in 0..5 {
                let sc = random_scenario(&mut r, n, 2);
                let set = descendants_via_channels(&sc, 0.3, 0.7).unwrap();
                let big = block_fisher_from(&set).unwrap().value;
                let small = single_blank_fisher(&sc, 0.3, 0.7).unwrap().value;
                assert!(big >= small - 1e-9, "{big} < {small}");
                let collapsed = collapse_blanks(&set);
                assert_abs_diff_eq!(collapsed.state.total_trace(), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(collapsed.fisher().unwrap().value, small, epsilon = 1e-9 * small.max(1.0));
            }
        }
    }

    #[test]
    fn only_empty_set_collapses_to_zero_blank() {
        let mut r = random::rng(7);
        let sc = random_scenario(&mut r, 2, 2);
        let set = descendants_via_channels(&sc, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(collapse_blanks(&set).state.blank_weight, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lindblad_has_no_direct_path() {
        let mut r = random::rng(8);
        let h = crate::dynamics::HamiltonianFamily::affine(random::hermitian(&mut r, 2), random::hermitian(&mut r, 2), true)
            .unwrap();
        let channels = ChannelFamily::lindblad(h, vec![random::matrix(&mut r, 2, 2)]).unwrap();
        let rho = random::density(&mut r, 4, 4);
        let sc = CompositeScenario::new(2, DensityOperator::normalized(rho).unwrap(), channels).unwrap();
        assert!(matches!(descendants_direct(&sc, 0.1, 0.5), Err(Error::NoFullSpaceModel)));
        // trace-preserving: nothing ever leaves M
        let set = descendants_via_channels(&sc, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(trace_re(set.block(Subsequence::EMPTY)), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_oversized_scenarios() {
        let mut r = random::rng(9);
        let channels = ChannelFamily::effective(random::effective_family(&mut r, 2));
        let rho = random::density(&mut r, 32, 1);
        assert!(matches!(
            CompositeScenario::new(5, DensityOperator::normalized(rho).unwrap(), channels.clone()),
            Err(Error::TooLarge { .. })
        ));
        let rho = random::density(&mut r, 16, 1);
        let sc = CompositeScenario::new(4, DensityOperator::normalized(rho).unwrap(), channels).unwrap();
        assert!(matches!(descendants_direct(&sc, 0.0, 0.1), Err(Error::TooLarge { .. })));
        assert!(descendants_via_channels(&sc, 0.0, 0.1).is_ok());
    }
}
