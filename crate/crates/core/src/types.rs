//! Domain types shared by the detector, the estimators and the generator.
//!
//! Everything here is a plain value object. Signals are stored agent-major:
//! `signals[i][t]` is the response of agent `i` to probe `t`.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used for box and invariant checks.
pub const TOL: f64 = 1e-9;

/// Probe (price) vector `alpha_t`. Entries are nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbeVector(Vec<f64>);

impl ProbeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probe entries must be finite and nonnegative: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        dot(&self.0, x)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbeVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Response signal `beta_t^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalVector(Vec<f64>);

impl SignalVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "signal entries must be finite: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for SignalVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `signals[i][t]`, agent-major.
pub type SignalSet = Vec<Vec<SignalVector>>;

/// Probes plus the M x T responses to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub probes: Vec<ProbeVector>,
    pub signals: SignalSet,
    #[serde(default)]
    pub noisy: bool,
}

impl Dataset {
    /// Builds a dataset, inferring T, M and N from the nested vectors.
    pub fn new(probes: Vec<Vec<f64>>, signals: Vec<Vec<Vec<f64>>>, noisy: bool) -> Result<Self> {
        let t = probes.len();
        let m = signals.len();
        let n = probes.first().map_or(0, Vec::len);
        let probes = probes
            .into_iter()
            .map(ProbeVector::new)
            .collect::<Result<Vec<_>>>()?;
        let signals = signals
            .into_iter()
            .map(|agent| agent.into_iter().map(SignalVector::new).collect())
            .collect::<Result<SignalSet>>()?;
        let d = Self { t, m, n, probes, signals, noisy };
        d.check_shape().map_err(|v| Error::InvalidInput(v.to_string()))?;
        Ok(d)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("dataset JSON: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn probe(&self, t: usize) -> &ProbeVector {
        &self.probes[t]
    }

    pub fn signal(&self, i: usize, t: usize) -> &SignalVector {
        &self.signals[i][t]
    }

    /// Same probes, different signals.
    pub fn with_signals(&self, signals: SignalSet) -> Self {
        Self { signals, ..self.clone() }
    }

    fn check_shape(&self) -> std::result::Result<(), Violation> {
        if self.t == 0 || self.m == 0 || self.n == 0 {
            return Err(Violation::DimensionMismatch(format!(
                "T, M and N must be at least 1 (got T={}, M={}, N={})",
                self.t, self.m, self.n
            )));
        }
        if self.probes.len() != self.t {
            return Err(Violation::DimensionMismatch(format!(
                "expected {} probes, found {}",
                self.t,
                self.probes.len()
            )));
        }
        if self.signals.len() != self.m {
            return Err(Violation::DimensionMismatch(format!(
                "expected signals for {} agents, found {}",
                self.m,
                self.signals.len()
            )));
        }
        for (t, p) in self.probes.iter().enumerate() {
            if p.len() != self.n {
                return Err(Violation::DimensionMismatch(format!(
                    "probe {t} has length {}, expected {}",
                    p.len(),
                    self.n
                )));
            }
        }
        for (i, agent) in self.signals.iter().enumerate() {
            if agent.len() != self.t {
                return Err(Violation::DimensionMismatch(format!(
                    "agent {i} has {} signals, expected {}",
                    agent.len(),
                    self.t
                )));
            }
            for (t, s) in agent.iter().enumerate() {
                if s.len() != self.n {
                    return Err(Violation::DimensionMismatch(format!(
                        "signal ({i},{t}) has length {}, expected {}",
                        s.len(),
                        self.n
                    )));
                }
            }
        }
        Ok(())
    }
}

/// First invariant a dataset breaks.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch(String),
    ProbeNormBelowBound { t: usize, norm: f64, bound: f64 },
    NegativeEntry { what: String },
    NonFinite { what: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Violation::ProbeNormBelowBound { t, norm, bound } => {
                write!(f, "probe norm below bound: probe {t} has norm {norm} < {bound}")
            }
            Violation::NegativeEntry { what } => write!(f, "negative entry in {what}"),
            Violation::NonFinite { what } => write!(f, "non-finite entry in {what}"),
        }
    }
}

/// Checks shape, sign and probe-magnitude invariants. Returns the first violation found.
pub fn validate_dataset(d: &Dataset, cfg: &AmbiguityConfig) -> std::result::Result<(), Violation> {
    d.check_shape()?;
    for (t, p) in d.probes.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Violation::NonFinite { what: format!("probe {t}") });
        }
        if p.iter().any(|v| *v < 0.0) {
            return Err(Violation::NegativeEntry { what: format!("probe {t}") });
        }
        let norm = p.norm();
        if norm < cfg.alpha_min {
            return Err(Violation::ProbeNormBelowBound { t, norm, bound: cfg.alpha_min });
        }
    }
    for (i, agent) in d.signals.iter().enumerate() {
        for (t, s) in agent.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Violation::NonFinite { what: format!("signal ({i},{t})") });
            }
            if s.iter().any(|v| *v < 0.0) {
                return Err(Violation::NegativeEntry { what: format!("signal ({i},{t})") });
            }
        }
    }
    Ok(())
}

/// Afriat parameters `{u_t^i, lambda_t^i}`, stored `[agent][time]`.
///
/// Construction enforces `u in [-1, 1]` and `lambda in [lambda_min, 1]`. Values
/// within [`TOL`] of the box are clamped onto it; anything further is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    u: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
}

impl ParameterVector {
    pub fn new(u: Vec<Vec<f64>>, lambda: Vec<Vec<f64>>, lambda_min: f64) -> Result<Self> {
        if u.len() != lambda.len() || u.iter().zip(&lambda).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::InvalidInput("u and lambda shapes differ".into()));
        }
        let clamp = |x: f64, lo: f64, hi: f64, name: &str| -> Result<f64> {
            if !x.is_finite() || x < lo - TOL || x > hi + TOL {
                return Err(Error::InvalidInput(format!(
                    "{name} = {x} outside [{lo}, {hi}]"
                )));
            }
            Ok(x.clamp(lo, hi))
        };
        let u = u
            .into_iter()
            .map(|row| row.into_iter().map(|x| clamp(x, -1.0, 1.0, "u")).collect())
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let lambda = lambda
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|x| clamp(x, lambda_min, 1.0, "lambda"))
                    .collect()
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self { u, lambda })
    }

    /// Every `u` equal to `u0`, every `lambda` equal to `lambda0`.
    pub fn constant(m: usize, t: usize, u0: f64, lambda0: f64, lambda_min: f64) -> Result<Self> {
        Self::new(vec![vec![u0; t]; m], vec![vec![lambda0; t]; m], lambda_min)
    }

    /// Inverse of [`ParameterVector::to_flat`].
    pub fn from_flat(flat: &[f64], m: usize, t: usize, lambda_min: f64) -> Result<Self> {
        if flat.len() != 2 * m * t {
            return Err(Error::InvalidInput(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                2 * m * t
            )));
        }
        let mut u = vec![vec![0.0; t]; m];
        let mut lambda = vec![vec![0.0; t]; m];
        for i in 0..m {
            for s in 0..t {
                let k = 2 * (i * t + s);
                u[i][s] = flat[k];
                lambda[i][s] = flat[k + 1];
            }
        }
        Self::new(u, lambda, lambda_min)
    }

    /// `[u_1^1, lambda_1^1, ..., u_T^M, lambda_T^M]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.u
            .iter()
            .zip(&self.lambda)
            .flat_map(|(u, l)| u.iter().zip(l).flat_map(|(a, b)| [*a, *b]))
            .collect()
    }

    pub fn agents(&self) -> usize {
        self.u.len()
    }

    pub fn times(&self) -> usize {
        self.u.first().map_or(0, Vec::len)
    }

    pub fn u(&self, i: usize, t: usize) -> f64 {
        self.u[i][t]
    }

    pub fn lambda(&self, i: usize, t: usize) -> f64 {
        self.lambda[i][t]
    }

    pub fn u_rows(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn lambda_rows(&self) -> &[Vec<f64>] {
        &self.lambda
    }
}

/// Wasserstein ball and support parameters of the robust estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityConfig {
    /// Wasserstein radius.
    pub epsilon: f64,
    /// Noise support radius.
    #[serde(rename = "R")]
    pub radius: f64,
    /// Stopping tolerance of the exchange loop.
    pub delta: f64,
    pub lambda_min: f64,
    pub alpha_min: f64,
    /// Per-coordinate lower bound of admissible signals.
    pub signal_floor: f64,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            radius: 3.0,
            delta: 0.1,
            lambda_min: 1e-3,
            alpha_min: 0.1,
            signal_floor: 0.01,
        }
    }
}

impl AmbiguityConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon", self.epsilon),
            ("R", self.radius),
            ("delta", self.delta),
            ("lambda_min", self.lambda_min),
            ("alpha_min", self.alpha_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive (got {v})")));
            }
        }
        if self.lambda_min > 1.0 {
            return Err(Error::InvalidInput("lambda_min must not exceed 1".into()));
        }
        if !(self.signal_floor.is_finite() && self.signal_floor >= 0.0) {
            return Err(Error::InvalidInput("signal_floor must be nonnegative".into()));
        }
        Ok(())
    }

    /// Bound on the proximity function over the parameter box and support.
    pub fn v_bound(&self) -> f64 {
        2.0 * (1.0 + self.radius) + 2.0
    }

    pub fn v1_max(&self) -> f64 {
        2.0 * self.v_bound()
    }

    pub fn v2_max(&self) -> f64 {
        self.v_bound() / self.epsilon
    }
}

/// Auxiliary dual variables `(v1, v2)` of the semi-infinite program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPair {
    pub v1: f64,
    pub v2: f64,
}

impl DualPair {
    pub fn new(v1: f64, v2: f64, cfg: &AmbiguityConfig) -> Result<Self> {
        let ok1 = (-TOL..=cfg.v1_max() + TOL).contains(&v1);
        let ok2 = (-TOL..=cfg.v2_max() + TOL).contains(&v2);
        if !(ok1 && ok2) {
            return Err(Error::InvalidInput(format!(
                "dual pair ({v1}, {v2}) outside [0,{}] x [0,{}]",
                cfg.v1_max(),
                cfg.v2_max()
            )));
        }
        Ok(Self {
            v1: v1.clamp(0.0, cfg.v1_max()),
            v2: v2.clamp(0.0, cfg.v2_max()),
        })
    }

    pub fn zero() -> Self {
        Self { v1: 0.0, v2: 0.0 }
    }

    /// `epsilon * v2 + v1`.
    pub fn objective(&self, epsilon: f64) -> f64 {
        epsilon * self.v2 + self.v1
    }
}

/// One candidate signal set inside the support, with its transport cost to the observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub signals: SignalSet,
    pub transport_cost: f64,
}

impl Scenario {
    pub fn new(signals: SignalSet, reference: &Dataset) -> Result<Self> {
        let transport_cost = crate::robust::transport_cost_signals(&signals, &reference.signals)?;
        Ok(Self { signals, transport_cost })
    }
}

/// One affine piece `u + lambda * probe'(x - anchor)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub u: f64,
    pub lambda: f64,
    pub probe: Vec<f64>,
    pub anchor: Vec<f64>,
}

impl Piece {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let shift: f64 = self
            .probe
            .iter()
            .zip(x.iter().zip(&self.anchor))
            .map(|(a, (xi, bi))| a * (xi - bi))
            .sum();
        self.u + self.lambda * shift
    }

    /// Constant term of the piece written as `c + g'x`.
    pub fn intercept(&self) -> f64 {
        self.u - self.lambda * dot(&self.probe, &self.anchor)
    }

    /// Gradient `lambda * probe`.
    pub fn slope(&self) -> Vec<f64> {
        self.probe.iter().map(|a| self.lambda * a).collect()
    }
}

/// Concave, piecewise-affine utility `f(x) = min_t piece_t(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityFunction {
    pub pieces: Vec<Piece>,
}

impl UtilityFunction {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        let Some(first) = pieces.first() else {
            return Err(Error::InvalidInput("utility needs at least one piece".into()));
        };
        let n = first.probe.len();
        for p in &pieces {
            if !(p.lambda > 0.0) {
                return Err(Error::InvalidInput(format!("piece lambda must be positive, got {}", p.lambda)));
            }
            if p.probe.len() != n || p.anchor.len() != n {
                return Err(Error::InvalidInput("piece dimensions differ".into()));
            }
        }
        Ok(Self { pieces })
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].probe.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.evaluate(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Pool, incumbent and traces of the exchange loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeState {
    pub pool: Vec<Scenario>,
    pub incumbent_psi: ParameterVector,
    pub incumbent_v: DualPair,
    pub cv_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
