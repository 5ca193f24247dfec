//! JSON formats for matrices, composite local states, models and scenarios.
//!
//! A complex matrix is written row-major as a list of rows, each row a list
//! of `[re, im]` pairs. Floats go through `serde_json`'s shortest round-trip
//! formatting, so reading a file back reproduces every value bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::composite::CompositeScenario;
use crate::dynamics::{ChannelFamily, HamiltonianFamily};
use crate::operator::tensor_all;
use crate::scenarios::{LeakageModel, TwoLevelDecayModel};
use crate::states::{CompositeLocalState, DensityOperator, Subsequence, SubspaceProjector};
use crate::{c64, CMatrix, CVector, Error, Result};

/// Row-major `[[ [re, im], ... ], ...]` representation of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixJson(pub Vec<Vec<[f64; 2]>>);

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        MatrixJson(
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect(),
        )
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        let rows = self.0.len();
        let cols = self.0.first().map_or(0, Vec::len);
        if self.0.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        let mut m = CMatrix::zeros(rows, cols);
        for (i, row) in self.0.iter().enumerate() {
            for (j, &[re, im]) in row.iter().enumerate() {
                if !re.is_finite() || !im.is_finite() {
                    return Err(Error::NonFinite(format!("matrix entry ({i},{j})")));
                }
                m[(i, j)] = c64(re, im);
            }
        }
        Ok(m)
    }
}

/// `#[serde(with = "crate::io::matrix_serde")]` for `CMatrix` fields.
pub mod matrix_serde {
    use super::MatrixJson;
    use crate::CMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        MatrixJson::deserialize(d)?
            .to_matrix()
            .map_err(serde::de::Error::custom)
    }
}

/// Composite local state on disk: `{dims, blocks}` with one accessible
/// dimension per subsystem and blocks keyed by their 1-based label (`"[]"`,
/// `"[1]"`, `"[1,2]"`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeStateFile {
    pub dims: Vec<usize>,
    pub blocks: BTreeMap<String, MatrixJson>,
}

impl From<&CompositeLocalState> for CompositeStateFile {
    fn from(s: &CompositeLocalState) -> Self {
        Self {
            dims: vec![s.dim_m(); s.n_subsystems()],
            blocks: s
                .blocks()
                .iter()
                .map(|(k, b)| (k.to_string(), MatrixJson::from(b)))
                .collect(),
        }
    }
}

impl CompositeStateFile {
    pub fn to_state(&self) -> Result<CompositeLocalState> {
        let d = *self
            .dims
            .first()
            .ok_or_else(|| Error::InvalidArgument("dims must be non-empty".into()))?;
        if self.dims.iter().any(|&x| x != d) {
            return Err(Error::InvalidArgument("all subsystems must share one accessible dimension".into()));
        }
        let mut blocks = BTreeMap::new();
        for (k, m) in &self.blocks {
            blocks.insert(Subsequence::parse(k)?, m.to_matrix()?);
        }
        CompositeLocalState::new(self.dims.len(), d, blocks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageParams {
    pub omega: f64,
    pub delta: f64,
}

/// How a custom `H(g) = sum_k g^k C_k` acts on the accessible space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomKind {
    /// Non-Hermitian effective Hamiltonian on `M` itself.
    Effective,
    /// Hermitian Hamiltonian on the full space, observed on `accessible`.
    Unitary,
    /// Hermitian Hamiltonian on `M` plus jump operators.
    Lindblad,
}

/// Model definition file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    TwoLevelDecay {
        params: DecayParams,
    },
    Leakage {
        params: LeakageParams,
    },
    Custom {
        kind: CustomKind,
        /// `C_0, C_1, ...`.
        coefficients: Vec<MatrixJson>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        accessible: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        jumps: Vec<MatrixJson>,
    },
}

impl ModelSpec {
    pub fn two_level(gamma_plus: f64, gamma_minus: f64) -> Self {
        ModelSpec::TwoLevelDecay {
            params: DecayParams {
                gamma_plus,
                gamma_minus,
            },
        }
    }

    pub fn channels(&self) -> Result<ChannelFamily> {
        match self {
            ModelSpec::TwoLevelDecay { params } => {
                Ok(TwoLevelDecayModel::new(params.gamma_plus, params.gamma_minus)?.channels())
            }
            ModelSpec::Leakage { params } => Ok(LeakageModel::new(params.omega, params.delta)?.channels()),
            ModelSpec::Custom {
                kind,
                coefficients,
                accessible,
                jumps,
            } => {
                let coeffs = coefficients.iter().map(MatrixJson::to_matrix).collect::<Result<Vec<_>>>()?;
                let hermitian = *kind != CustomKind::Effective;
                let h = HamiltonianFamily::new(coeffs, hermitian)?;
                match kind {
                    CustomKind::Effective => Ok(ChannelFamily::effective(h)),
                    CustomKind::Unitary => {
                        let idx = accessible.as_ref().ok_or_else(|| {
                            Error::InvalidArgument("unitary custom models need `accessible` indices".into())
                        })?;
                        let p = SubspaceProjector::from_indices(h.dim(), idx)?;
                        ChannelFamily::unitary(h, p)
                    }
                    CustomKind::Lindblad => {
                        let js = jumps.iter().map(MatrixJson::to_matrix).collect::<Result<Vec<_>>>()?;
                        ChannelFamily::lindblad(h, js)
                    }
                }
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("model file: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    #[default]
    Lin,
    Log,
}

/// `points` times from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: GridScale,
}

impl TimeGrid {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one point".into()));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::NonFinite("time grid bounds".into()));
        }
        if self.start < 0.0 || self.stop < self.start {
            return Err(Error::InvalidArgument(format!(
                "time grid needs 0 <= start <= stop, got [{}, {}]",
                self.start, self.stop
            )));
        }
        if self.scale == GridScale::Log && self.start <= 0.0 {
            return Err(Error::InvalidArgument("log-spaced grid needs start > 0".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        self.validate()?;
        if self.points == 1 {
            return Ok(vec![self.start]);
        }
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|k| {
                let f = k as f64 / last;
                match self.scale {
                    GridScale::Lin => self.start + (self.stop - self.start) * f,
                    GridScale::Log => (self.start.ln() + (self.stop.ln() - self.start.ln()) * f).exp(),
                }
            })
            .collect())
    }
}

/// Initial state of a composite scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// The same single-system state on every subsystem.
    Iid { state: MatrixJson },
    /// `(|01> + |10>) / sqrt 2` for two subsystems.
    EntangledPair,
    /// Density matrix on `M^(x)N`.
    Explicit { matrix: MatrixJson },
}

impl InitialState {
    pub fn density(&self, n: usize, dim_m: usize) -> Result<DensityOperator> {
        match self {
            InitialState::Iid { state } => {
                let single = state.to_matrix()?;
                let copies = vec![&single; n];
                DensityOperator::normalized(tensor_all(copies))
            }
            InitialState::EntangledPair => {
                if n != 2 || dim_m < 2 {
                    return Err(Error::InvalidArgument(
                        "entangled_pair needs N = 2 and an accessible dimension of at least 2".into(),
                    ));
                }
                let mut psi = CVector::zeros(dim_m * dim_m);
                psi[1] = c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                psi[dim_m] = c64(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                DensityOperator::pure(&psi)
            }
            InitialState::Explicit { matrix } => DensityOperator::normalized(matrix.to_matrix()?),
        }
    }
}

/// Scenario file: `{N, model, initial_state, g, t_grid}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "N")]
    pub n: usize,
    pub model: ModelSpec,
    pub initial_state: InitialState,
    pub g: f64,
    pub t_grid: TimeGrid,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("scenario file: {e}")))
    }

    pub fn scenario(&self) -> Result<CompositeScenario> {
        if !self.g.is_finite() {
            return Err(Error::NonFinite("g".into()));
        }
        self.t_grid.validate()?;
        let channels = self.model.channels()?;
        let rho = self.initial_state.density(self.n, channels.dim_m())?;
        CompositeScenario::new(self.n, rho, channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;

    #[test]
    fn matrix_round_trip_is_exact() {
        let mut r = random::rng(1);
        let m = random::matrix(&mut r, 3, 2) * c64(1.0 / 3.0, 0.0);
        let text = serde_json::to_string(&MatrixJson::from(&m)).unwrap();
        let back: MatrixJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_matrix().unwrap(), m);
    }

    #[test]
    fn composite_state_round_trip() {
        let mut r = random::rng(2);
        let sc = CompositeScenario::new(
            2,
            DensityOperator::normalized(random::density(&mut r, 4, 2)).unwrap(),
            ChannelFamily::effective(random::effective_family(&mut r, 2)),
        )
        .unwrap();
        let state = crate::composite::descendants_via_channels(&sc, 0.1, 0.5)
            .unwrap()
            .to_local_state()
            .unwrap();
        let file = CompositeStateFile::from(&state);
        let text = serde_json::to_string(&file).unwrap();
        let back: CompositeStateFile = serde_json::from_str(&text).unwrap();
        let state2 = back.to_state().unwrap();
        assert_eq!(state.blocks(), state2.blocks());
        assert!(text.contains("\"[1,2]\""));
    }

    #[test]
    fn model_files_parse() {
        let decay = ModelSpec::from_json(r#"{"type":"two_level_decay","params":{"gamma_plus":2,"gamma_minus":1}}"#)
            .unwrap();
        assert_eq!(decay, ModelSpec::two_level(2.0, 1.0));
        assert_eq!(decay.channels().unwrap().dim_m(), 2);
        let custom = r#"{"type":"custom","kind":"unitary","accessible":[0,1],
            "coefficients":[[[[0,0],[1,0],[0,0]],[[1,0],[0,0],[0,0]],[[0,0],[0,0],[1,0]]],
                            [[[0,0],[0,0],[1,0]],[[0,0],[0,0],[0,0]],[[1,0],[0,0],[0,0]]]]}"#;
        assert_eq!(ModelSpec::from_json(custom).unwrap().channels().unwrap().dim_m(), 2);
        assert!(ModelSpec::from_json(r#"{"type":"two_level_decay","params":{"gamma_plus":1,"gamma_minus":1}}"#)
            .unwrap()
            .channels()
            .is_err());
        assert!(ModelSpec::from_json(r#"{"type":"nope"}"#).is_err());
    }

    #[test]
    fn time_grids() {
        let lin = TimeGrid { start: 0.0, stop: 1.0, points: 5, scale: GridScale::Lin };
        assert_eq!(lin.times().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let log = TimeGrid { start: 0.01, stop: 1.0, points: 3, scale: GridScale::Log };
        let t = log.times().unwrap();
        assert!((t[1] - 0.1).abs() < 1e-15 && (t[2] - 1.0).abs() < 1e-15);
        assert!(TimeGrid { points: 0, ..lin }.times().is_err());
        assert!(TimeGrid { start: 0.0, ..log }.times().is_err());
    }

    #[test]
    fn scenario_file_builds_entangled_pair() {
        let text = r#"{"N":2,"model":{"type":"two_level_decay","params":{"gamma_plus":2,"gamma_minus":1}},
            "initial_state":{"kind":"entangled_pair"},"g":1e-4,
            "t_grid":{"start":0.05,"stop":3,"points":4}}"#;
        let f = ScenarioFile::from_json(text).unwrap();
        let sc = f.scenario().unwrap();
        let want = crate::scenarios::Preset::TwoLevelEnt2.initial_state();
        assert!(crate::operator::max_abs(&(sc.initial() - want)) < 1e-15);
    }
}
