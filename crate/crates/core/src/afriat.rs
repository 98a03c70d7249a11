//! Afriat-type inequalities: coordination test, proximity statistic, naive
//! parameter recovery and the min-of-affine utility reconstruction.
//!
//! For agent `i` and an ordered pair of observations `s != t` the inequality is
//!
//! ```text
//! u_s^i - u_t^i - lambda_t^i * (alpha_t'(beta_s^i - beta_t^i) + r) <= 0
//! ```
//!
//! Agents share only the slack `r`, so every system splits into `M`
//! independent linear programs over `(u^i, lambda^i)`. Pairs with `s == t` are
//! left out; they would only add `0 <= lambda_t r` and pin the statistic at 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linfeas::{self, LinearSystem, LpOutcome};
use crate::types::{
    AmbiguityConfig, Dataset, ParameterVector, Piece, ProbeVector, SignalVector, UtilityFunction,
};

/// Width of the final bracket when bisecting the proximity statistic.
pub const BISECTION_TOL: f64 = 1e-6;

/// Default extra slack handed to [`recover_parameters`] on top of the statistic.
pub const RECOVERY_MARGIN: f64 = 1e-6;

/// `a[t][s] = alpha_t'(beta_s - beta_t)` for one agent's signal row.
pub fn pair_matrix(probes: &[ProbeVector], signals: &[SignalVector]) -> Vec<Vec<f64>> {
    let t_len = probes.len();
    let mut a = vec![vec![0.0; t_len]; t_len];
    for t in 0..t_len {
        let base = probes[t].dot(&signals[t]);
        for s in 0..t_len {
            if s != t {
                a[t][s] = probes[t].dot(&signals[s]) - base;
            }
        }
    }
    a
}

/// Pair matrices for every agent of a dataset.
pub fn pair_matrices(d: &Dataset) -> Vec<Vec<Vec<f64>>> {
    d.signals.iter().map(|row| pair_matrix(&d.probes, row)).collect()
}

/// Variables `u_0..u_{T-1}, lambda_0..lambda_{T-1}` with the parameter box,
/// and one row per ordered pair whose weight `w[t][s] + shift` is finite.
pub(crate) fn agent_system(w: &[Vec<f64>], shift: f64, lambda_min: f64) -> LinearSystem {
    let t_len = w.len();
    let mut sys = LinearSystem::new(2 * t_len);
    for k in 0..t_len {
        sys.set_bounds(k, -1.0, 1.0);
        sys.set_bounds(t_len + k, lambda_min, 1.0);
    }
    for t in 0..t_len {
        for s in 0..t_len {
            let weight = w[t][s] + shift;
            if s == t || !weight.is_finite() {
                continue;
            }
            sys.push_le(vec![(s, 1.0), (t, -1.0), (t_len + t, -weight)], 0.0);
        }
    }
    sys
}

/// Solves every agent's system at the given shift. `None` as soon as one is infeasible.
pub(crate) fn solve_agents(
    weights: &[Vec<Vec<f64>>],
    shift: f64,
    lambda_min: f64,
) -> Result<Option<ParameterVector>> {
    let mut u = Vec::with_capacity(weights.len());
    let mut lambda = Vec::with_capacity(weights.len());
    for w in weights {
        let Some(x) = agent_feasible(w, shift, lambda_min)? else {
            return Ok(None);
        };
        let t_len = w.len();
        u.push(x[..t_len].to_vec());
        lambda.push(x[t_len..].to_vec());
    }
    ParameterVector::new(u, lambda, lambda_min).map(Some)
}

pub(crate) fn agent_feasible(w: &[Vec<f64>], shift: f64, lambda_min: f64) -> Result<Option<Vec<f64>>> {
    let sys = agent_system(w, shift, lambda_min);
    Ok(linfeas::feasible(&sys)?.witness())
}

/// Closed-form proximity function: the least slack making every pair
/// inequality hold for the given parameters and signals.
///
/// Returns 0 when there is a single observation.
pub fn h_value(psi: &ParameterVector, signals: &[Vec<SignalVector>], probes: &[ProbeVector]) -> f64 {
    let t_len = probes.len();
    if t_len < 2 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for (i, row) in signals.iter().enumerate() {
        for t in 0..t_len {
            let base = probes[t].dot(&row[t]);
            let lam = psi.lambda(i, t);
            for s in 0..t_len {
                if s == t {
                    continue;
                }
                let term = (psi.u(i, s) - psi.u(i, t)) / lam - (probes[t].dot(&row[s]) - base);
                best = best.max(term);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Coordination {
    Coordinated { psi: ParameterVector },
    NotCoordinated,
}

impl Coordination {
    pub fn is_coordinated(&self) -> bool {
        matches!(self, Coordination::Coordinated { .. })
    }
}

/// Tests whether the dataset satisfies the Afriat system at zero slack.
///
/// The witness has multipliers as uniform across agents as possible; when
/// they coincide it rationalizes the summed problem and not only each
/// agent's own budget.
pub fn coordination_test(d: &Dataset, cfg: &AmbiguityConfig) -> Result<Coordination> {
    let weights = pair_matrices(d);
    Ok(match central_witness(&weights, 0.0, cfg.lambda_min)? {
        Some(psi) => Coordination::Coordinated { psi },
        None => Coordination::NotCoordinated,
    })
}

/// Feasible parameters at the given shift whose multipliers differ least
/// across agents: minimizes `sum_{t,i} |lambda_t^i - lbar_t|`. Agents that
/// share `lambda_t` rationalize the summed problem, not only their own.
/// `None` if some agent is infeasible.
pub(crate) fn central_witness(
    weights: &[Vec<Vec<f64>>],
    shift: f64,
    lambda_min: f64,
) -> Result<Option<ParameterVector>> {
    let m = weights.len();
    let t_len = weights.first().map_or(0, Vec::len);
    // agent i: u at 2iT.., lambda at 2iT+T..; then lbar_t, then deviations d_{i,t}
    let lbar = 2 * m * t_len;
    let dev = lbar + t_len;
    let mut sys = LinearSystem::new(dev + m * t_len);
    for k in 0..t_len {
        sys.set_bounds(lbar + k, lambda_min, 1.0);
    }
    for (i, w) in weights.iter().enumerate() {
        let (u0, l0) = (2 * i * t_len, 2 * i * t_len + t_len);
        for k in 0..t_len {
            sys.set_bounds(u0 + k, -1.0, 1.0);
            sys.set_bounds(l0 + k, lambda_min, 1.0);
            let d = dev + i * t_len + k;
            sys.push_le(vec![(l0 + k, 1.0), (lbar + k, -1.0), (d, -1.0)], 0.0);
            sys.push_le(vec![(lbar + k, 1.0), (l0 + k, -1.0), (d, -1.0)], 0.0);
        }
        for t in 0..t_len {
            for s in 0..t_len {
                let weight = w[t][s] + shift;
                if s != t && weight.is_finite() {
                    sys.push_le(vec![(u0 + s, 1.0), (u0 + t, -1.0), (l0 + t, -weight)], 0.0);
                }
            }
        }
    }
    let mut objective = vec![0.0; sys.n_vars()];
    objective[dev..].iter_mut().for_each(|c| *c = -1.0);
    let LpOutcome::Optimal { x, .. } = linfeas::maximize(&sys, &objective)? else {
        return Ok(None);
    };
    let u = (0..m).map(|i| x[2 * i * t_len..(2 * i + 1) * t_len].to_vec()).collect();
    let lambda = (0..m).map(|i| x[(2 * i + 1) * t_len..(2 * i + 2) * t_len].to_vec()).collect();
    ParameterVector::new(u, lambda, lambda_min).map(Some)
}

/// One evaluation of the feasibility oracle during bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub r: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityResult {
    pub phi: f64,
    /// Feasible parameters at slack `phi`.
    pub witness: ParameterVector,
    pub steps: Vec<BisectionStep>,
}

/// Smallest slack `r` for which the Afriat system is feasible on the parameter box.
///
/// Bisection over `[-V, V]`; the upper end is doubled if the data need more
/// slack than the nominal bound. Feasibility is monotone in `r` since every
/// `lambda` is positive.
pub fn proximity(d: &Dataset, cfg: &AmbiguityConfig) -> Result<ProximityResult> {
    let weights = pair_matrices(d);
    if d.t < 2 {
        let witness = solve_agents(&weights, 0.0, cfg.lambda_min)?
            .expect("a single observation imposes no constraint");
        return Ok(ProximityResult { phi: 0.0, witness, steps: Vec::new() });
    }
    let mut steps = Vec::new();
    let mut probe = |r: f64| -> Result<Option<ParameterVector>> {
        let out = solve_agents(&weights, r, cfg.lambda_min)?;
        steps.push(BisectionStep { r, feasible: out.is_some() });
        Ok(out)
    };

    let v = cfg.v_bound();
    let mut lo = -v;
    if let Some(witness) = probe(lo)? {
        return Ok(ProximityResult { phi: lo, witness, steps });
    }
    let mut hi = v;
    let mut witness = probe(hi)?;
    let mut doublings = 0;
    while witness.is_none() {
        doublings += 1;
        if doublings > 64 {
            return Err(Error::InvalidInput("proximity search failed to bracket".into()));
        }
        lo = hi;
        hi *= 2.0;
        witness = probe(hi)?;
    }
    let mut witness = witness.expect("bracketed");
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(w) => {
                hi = mid;
                witness = w;
            }
            None => lo = mid,
        }
    }
    Ok(ProximityResult { phi: hi, witness, steps })
}

/// Parameters satisfying the Afriat system at slack `r`, multipliers as
/// uniform across agents as the system allows.
pub fn recover_parameters(d: &Dataset, r: f64, cfg: &AmbiguityConfig) -> Result<ParameterVector> {
    central_witness(&pair_matrices(d), r, cfg.lambda_min)?
        .ok_or(Error::InfeasibleAtSlack { slack: r })
}

/// Naive estimate: parameters at the proximity statistic plus [`RECOVERY_MARGIN`].
pub fn naive_estimate(d: &Dataset, cfg: &AmbiguityConfig) -> Result<(ProximityResult, ParameterVector)> {
    let prox = proximity(d, cfg)?;
    let psi = recover_parameters(d, prox.phi + RECOVERY_MARGIN, cfg)?;
    Ok((prox, psi))
}

/// `f^i(x) = min_t [u_t^i + lambda_t^i alpha_t'(x - beta_t^i)]` for every agent.
pub fn reconstruct_utilities(psi: &ParameterVector, d: &Dataset) -> Result<Vec<UtilityFunction>> {
    if psi.agents() != d.m || psi.times() != d.t {
        return Err(Error::InvalidInput(format!(
            "parameters are {}x{}, dataset is {}x{}",
            psi.agents(),
            psi.times(),
            d.m,
            d.t
        )));
    }
    (0..d.m)
        .map(|i| {
            let pieces = (0..d.t)
                .map(|t| Piece {
                    u: psi.u(i, t),
                    lambda: psi.lambda(i, t),
                    probe: d.probe(t).to_vec(),
                    anchor: d.signal(i, t).to_vec(),
                })
                .collect();
            UtilityFunction::new(pieces)
        })
        .collect()
}

pub fn evaluate_utility(f: &UtilityFunction, x: &SignalVector) -> f64 {
    f.evaluate(x)
}
