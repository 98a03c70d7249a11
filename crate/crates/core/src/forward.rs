//! Synthetic coordinated systems.
//!
//! Agents maximize `sum_i mu_i f_i(beta_i)` under the shared budget
//! `alpha'(sum_i beta_i) <= 1`. Utilities are separable sums of linear and
//! power terms, so the optimum is a water-filling on the budget multiplier:
//! power terms demand `(w p / (nu alpha_k))^(1/(1-p))`, linear terms absorb the
//! leftover budget once `nu` reaches their best bang-per-buck ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{dot, norm, Dataset, ProbeVector};

pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Linear { coef: f64 },
    Power { coef: f64, exponent: f64 },
}

impl Term {
    fn coef(&self) -> f64 {
        match *self {
            Term::Linear { coef } | Term::Power { coef, .. } => coef,
        }
    }

    /// Exponent in (0, 1]; 1 for linear terms.
    fn exponent(&self) -> f64 {
        match *self {
            Term::Linear { .. } => 1.0,
            Term::Power { exponent, .. } => exponent,
        }
    }

    fn value(&self, x: f64) -> f64 {
        match *self {
            Term::Linear { coef } => coef * x,
            Term::Power { coef, exponent } => coef * x.max(0.0).powf(exponent),
        }
    }

    fn marginal(&self, x: f64) -> f64 {
        match *self {
            Term::Linear { coef } => coef,
            Term::Power { coef, exponent } => coef * exponent * x.max(f64::MIN_POSITIVE).powf(exponent - 1.0),
        }
    }
}

/// Separable concave utility, one term per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub terms: Vec<Term>,
}

impl UtilitySpec {
    pub fn linear(coefs: &[f64]) -> Self {
        Self { terms: coefs.iter().map(|&coef| Term::Linear { coef }).collect() }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.terms.len() != n {
            return Err(Error::InvalidInput(format!(
                "utility has {} terms for {n} coordinates",
                self.terms.len()
            )));
        }
        for t in &self.terms {
            let (c, p) = (t.coef(), t.exponent());
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidInput(format!("coefficient {c} must be nonnegative")));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidInput(format!("exponent {p} outside (0, 1]")));
            }
        }
        if !self.terms.iter().any(|t| t.coef() > 0.0) {
            return Err(Error::InvalidInput("utility needs a positive coefficient".into()));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().zip(x).map(|(t, v)| t.value(*v)).sum()
    }
}

/// Agent 0 is linear in every coordinate; agent `i >= 1` swaps one
/// coordinate for a fourth-root term. With `M = 3, N = 2` this is the
/// three-sensor example: `b1 + b2`, `b1 + b2^(1/4)`, `b1^(1/4) + b2`.
pub fn default_specs(m: usize, n: usize) -> Vec<UtilitySpec> {
    (0..m)
        .map(|i| {
            let curved = (i > 0).then(|| (n - i % n) % n);
            UtilitySpec {
                terms: (0..n)
                    .map(|k| {
                        if Some(k) == curved {
                            Term::Power { coef: 1.0, exponent: 0.25 }
                        } else {
                            Term::Linear { coef: 1.0 }
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSolution {
    /// `signals[i]` is agent `i`'s allocation.
    pub signals: Vec<Vec<f64>>,
    /// Budget multiplier.
    pub multiplier: f64,
    pub value: f64,
    pub kkt_residual: f64,
    /// `(agent, coordinate)` of linear terms that share the leftover budget.
    /// With more than one entry the optimum is not unique.
    pub tied: Vec<(usize, usize)>,
}

impl ForwardSolution {
    /// Vertices of the optimal face: each tied term in turn takes the whole
    /// leftover budget. A unique optimum yields itself.
    pub fn face_vertices(&self, alpha: &[f64], floor: f64) -> Vec<Vec<Vec<f64>>> {
        if self.tied.len() < 2 {
            return vec![self.signals.clone()];
        }
        let leftover: f64 = self.tied.iter().map(|&(i, k)| alpha[k] * (self.signals[i][k] - floor)).sum();
        self.tied
            .iter()
            .map(|&(i, k)| {
                let mut s = self.signals.clone();
                for &(a, c) in &self.tied {
                    s[a][c] = floor;
                }
                s[i][k] = floor + leftover / alpha[k];
                s
            })
            .collect()
    }
}

struct Var {
    agent: usize,
    coord: usize,
    term: Term,
    weight: f64,
    price: f64,
}

/// Maximizes `sum_i weights_i * specs_i(beta_i)` subject to
/// `alpha'(sum_i beta_i) <= 1` and `beta >= floor` coordinatewise.
///
/// Ties between linear terms with the same bang-per-buck split the leftover
/// budget evenly, which fixes the returned optimizer deterministically.
pub fn solve_coordination(
    specs: &[UtilitySpec],
    weights: &[f64],
    alpha: &ProbeVector,
    floor: f64,
) -> Result<ForwardSolution> {
    let n = alpha.len();
    if specs.len() != weights.len() || specs.is_empty() {
        return Err(Error::InvalidInput("need one positive weight per utility".into()));
    }
    for (s, w) in specs.iter().zip(weights) {
        s.validate(n)?;
        if !(w.is_finite() && *w > 0.0) {
            return Err(Error::InvalidInput(format!("weight {w} must be positive")));
        }
    }
    let m = specs.len();
    let vars: Vec<Var> = specs
        .iter()
        .zip(weights)
        .enumerate()
        .flat_map(|(i, (s, w))| {
            s.terms.iter().enumerate().map(move |(k, term)| Var {
                agent: i,
                coord: k,
                term: *term,
                weight: w * term.coef(),
                price: alpha[k],
            })
        })
        .collect();
    if let Some(v) = vars.iter().find(|v| v.price == 0.0 && v.weight > 0.0) {
        return Err(Error::InvalidInput(format!(
            "coordinate {} is free but valued by agent {}",
            v.coord, v.agent
        )));
    }
    let budget = 1.0 - vars.iter().map(|v| v.price * floor).sum::<f64>();
    if budget < 0.0 {
        return Err(Error::InvalidInput("floors exceed the budget".into()));
    }

    let power_demand = |v: &Var, nu: f64| -> f64 {
        match v.term {
            Term::Power { exponent, .. } if v.weight > 0.0 && exponent < 1.0 => {
                let x = (v.weight * exponent / (nu * v.price)).powf(1.0 / (1.0 - exponent));
                x.max(floor)
            }
            _ => floor,
        }
    };
    let is_linear = |v: &Var| v.weight > 0.0 && v.term.exponent() == 1.0;
    let spend = |nu: f64| -> f64 {
        vars.iter()
            .filter(|v| !is_linear(v))
            .map(|v| v.price * (power_demand(v, nu) - floor))
            .sum()
    };
    let best_ratio = vars
        .iter()
        .filter(|v| is_linear(v))
        .map(|v| v.weight / v.price)
        .fold(0.0, f64::max);

    let mut x: Vec<f64> = vec![floor; vars.len()];
    let mut tied_terms = Vec::new();
    let nu;
    if best_ratio > 0.0 && spend(best_ratio) <= budget {
        nu = best_ratio;
        let leftover = budget - spend(nu);
        let tied: Vec<usize> = (0..vars.len())
            .filter(|&j| is_linear(&vars[j]) && vars[j].weight / vars[j].price >= best_ratio * (1.0 - 1e-12))
            .collect();
        for (j, v) in vars.iter().enumerate() {
            x[j] = power_demand(v, nu);
        }
        for &j in &tied {
            x[j] = floor + leftover / (tied.len() as f64 * vars[j].price);
            tied_terms.push((vars[j].agent, vars[j].coord));
        }
    } else {
        let mut lo = best_ratio;
        let mut hi = best_ratio.max(1.0);
        while spend(hi) > budget {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::NonConvergence { residual: f64::INFINITY });
            }
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if spend(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        nu = hi;
        for (j, v) in vars.iter().enumerate() {
            x[j] = power_demand(v, nu);
        }
    }

    let mut signals = vec![vec![0.0; n]; m];
    for (v, xj) in vars.iter().zip(&x) {
        signals[v.agent][v.coord] = *xj;
    }
    let value = specs
        .iter()
        .zip(weights)
        .zip(&signals)
        .map(|((s, w), b)| w * s.value(b))
        .sum();
    let kkt_residual = kkt_residual(specs, weights, alpha, floor, &signals, nu);
    if kkt_residual > KKT_TOL {
        return Err(Error::NonConvergence { residual: kkt_residual });
    }
    Ok(ForwardSolution { signals, multiplier: nu, value, kkt_residual, tied: tied_terms })
}

/// Largest violation of stationarity, complementary slackness and feasibility.
pub fn kkt_residual(
    specs: &[UtilitySpec],
    weights: &[f64],
    alpha: &[f64],
    floor: f64,
    signals: &[Vec<f64>],
    nu: f64,
) -> f64 {
    let mut r: f64 = 0.0;
    let mut total = vec![0.0; alpha.len()];
    for ((s, w), b) in specs.iter().zip(weights).zip(signals) {
        for (k, (term, x)) in s.terms.iter().zip(b).enumerate() {
            total[k] += x;
            r = r.max(floor - x);
            let price = nu * alpha[k];
            let gap = match *term {
                // stationarity solved for x; the gradient form overflows near zero
                Term::Power { coef, exponent } if coef > 0.0 && exponent < 1.0 => {
                    let demand = if price > 0.0 {
                        (w * coef * exponent / price).powf(1.0 / (1.0 - exponent)).max(floor)
                    } else {
                        f64::INFINITY
                    };
                    (x - demand).abs() / demand.max(1.0)
                }
                _ => {
                    let gap = w * term.marginal(*x) - price;
                    (if *x > floor + 1e-12 { gap.abs() } else { gap.max(0.0) }) / price.max(1.0)
                }
            };
            r = r.max(gap);
        }
    }
    let used = dot(alpha, &total);
    r = r.max(used - 1.0);
    if nu > 0.0 {
        r = r.max((1.0 - used).abs());
    }
    r.max(-nu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub specs: Vec<UtilitySpec>,
    pub weights: Vec<f64>,
    pub probe_low: f64,
    pub probe_high: f64,
    pub sigma: f64,
    /// Coordinatewise clamp on noisy signals and lower bound on clean ones.
    pub floor: f64,
    pub seed: u64,
    /// Resample noise vectors longer than `noise_radius`.
    pub truncate: bool,
    /// Defaults to `3 sigma` when absent.
    pub noise_radius: Option<f64>,
}

impl GenConfig {
    /// Three agents, two coordinates, five probes uniform on `[0.1, 1.1]^2`,
    /// unit Gaussian noise and the 0.01 clamp.
    pub fn paper(seed: u64) -> Self {
        Self::with_defaults(5, 3, 2, seed)
    }

    pub fn with_defaults(t: usize, m: usize, n: usize, seed: u64) -> Self {
        Self {
            t,
            m,
            n,
            specs: default_specs(m, n),
            weights: vec![1.0; m],
            probe_low: 0.1,
            probe_high: 1.1,
            sigma: 1.0,
            floor: 0.01,
            seed,
            truncate: true,
            noise_radius: None,
        }
    }

    pub fn noise_radius(&self) -> f64 {
        self.noise_radius.unwrap_or(3.0 * self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::InvalidInput("T, M and N must be positive".into()));
        }
        if self.specs.len() != self.m || self.weights.len() != self.m {
            return Err(Error::InvalidInput("need one utility and weight per agent".into()));
        }
        for s in &self.specs {
            s.validate(self.n)?;
        }
        if !(self.probe_low > 0.0 && self.probe_high > self.probe_low) {
            return Err(Error::InvalidInput("probe law needs 0 < low < high".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput("sigma must be nonnegative".into()));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::InvalidInput("floor must be nonnegative".into()));
        }
        if self.truncate && self.sigma > 0.0 && !(self.noise_radius() > 0.0) {
            return Err(Error::InvalidInput("noise radius must be positive".into()));
        }
        Ok(())
    }
}

/// Independent random stream derived from a master seed.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_probe<R: Rng>(rng: &mut R, n: usize, low: f64, high: f64) -> ProbeVector {
    ProbeVector::new((0..n).map(|_| rng.random_range(low..high)).collect())
        .expect("uniform draws are nonnegative")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub clean: Dataset,
    pub noisy: Dataset,
    pub max_noise_norm: f64,
    /// Noisy coordinates raised to the floor.
    pub clamped: usize,
}

/// Draws probes, solves the coordinated problem per probe, then adds
/// Gaussian noise and clamps at the floor.
///
/// Probes come from stream 0 of the seed and the noise of `(t, i)` from
/// stream `1 + t M + i`, so outputs do not depend on evaluation order.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut probe_rng = stream(cfg.seed, 0);
    let probes: Vec<ProbeVector> = (0..cfg.t)
        .map(|_| sample_probe(&mut probe_rng, cfg.n, cfg.probe_low, cfg.probe_high))
        .collect();
    let mut clean = vec![Vec::with_capacity(cfg.t); cfg.m];
    for alpha in &probes {
        let sol = solve_coordination(&cfg.specs, &cfg.weights, alpha, cfg.floor)?;
        for (row, beta) in clean.iter_mut().zip(sol.signals) {
            row.push(beta);
        }
    }
    let radius = cfg.noise_radius();
    let mut noisy = clean.clone();
    let mut max_noise_norm: f64 = 0.0;
    let mut clamped = 0;
    for t in 0..cfg.t {
        for i in 0..cfg.m {
            let mut rng = stream(cfg.seed, 1 + (t * cfg.m + i) as u64);
            let noise = loop {
                let e: Vec<f64> = (0..cfg.n)
                    .map(|_| cfg.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if !cfg.truncate || cfg.sigma == 0.0 || norm(&e) <= radius {
                    break e;
                }
            };
            max_noise_norm = max_noise_norm.max(norm(&noise));
            for (b, e) in noisy[i][t].iter_mut().zip(&noise) {
                let raw = *b + e;
                if raw < cfg.floor {
                    clamped += 1;
                }
                *b = raw.max(cfg.floor);
            }
        }
    }
    let probe_rows: Vec<Vec<f64>> = probes.into_iter().map(ProbeVector::into_inner).collect();
    let clean = Dataset::new(probe_rows.clone(), clean, false)?;
    let noisy = Dataset::new(probe_rows, noisy, cfg.sigma > 0.0)?;
    Ok(Generated { clean, noisy, max_noise_norm, clamped })
}
