//! Wasserstein distributionally robust estimation by the exchange method.
//!
//! The semi-infinite program is
//!
//! ```text
//! min  eps * v2 + v1   over psi in the parameter box, v in [0, 2V] x [0, V/eps]
//! s.t. G(psi, v, Phi) = h(psi, Phi) - v2 * sum ||beta - beta_hat|| - v1 <= 0   for all Phi
//! ```
//!
//! [`exchange_loop`] alternates [`master_solve`] (the program restricted to a
//! finite scenario pool) with [`max_constraint_violation`] (the worst scenario
//! for the current incumbent) until the violation drops below `delta`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::afriat::{self, pair_matrix};
use crate::error::{Error, Result};
use crate::types::{
    distance, dot, norm, validate_dataset, AmbiguityConfig, Dataset, DualPair, ExchangeState,
    ParameterVector, Scenario, SignalSet, SignalVector,
};

/// `Gamma_t^i = {beta : beta >= floor, ||beta - center|| <= radius}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportCell<'a> {
    pub center: &'a [f64],
    pub radius: f64,
    pub floor: f64,
}

impl<'a> SupportCell<'a> {
    pub fn new(center: &'a [f64], radius: f64, floor: f64) -> Result<Self> {
        if center.iter().any(|c| *c < floor) {
            return Err(Error::InvalidInput(format!(
                "signal {center:?} lies below the floor {floor}"
            )));
        }
        Ok(Self { center, radius, floor })
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().all(|v| *v >= self.floor - tol) && distance(x, self.center) <= self.radius + tol
    }

    /// Maximizes `g'(x - center) - price * ||x - center||` over the cell.
    ///
    /// The maximizer lies on the path `d(tau) = max(floor - center, tau * g)`,
    /// along which the objective is unimodal. Without an active floor the
    /// answer is closed-form: move the full radius along `g` when `||g|| > price`.
    pub fn best_move(&self, g: &[f64], price: f64) -> (f64, Vec<f64>) {
        let gnorm = norm(g);
        if gnorm <= price || gnorm == 0.0 {
            return (0.0, self.center.to_vec());
        }
        let free: Vec<f64> = self
            .center
            .iter()
            .zip(g)
            .map(|(c, gk)| c + self.radius * gk / gnorm)
            .collect();
        if free.iter().all(|v| *v >= self.floor) {
            return (self.radius * (gnorm - price), free);
        }

        let lower: Vec<f64> = self.center.iter().map(|c| self.floor - c).collect();
        let path = |tau: f64| -> Vec<f64> {
            g.iter().zip(&lower).map(|(gk, lk)| (tau * gk).max(*lk)).collect()
        };
        let value = |d: &[f64]| dot(g, d) - price * norm(d);

        // largest admissible tau: the ball boundary, or the point where the path stops moving
        let grows = g.iter().any(|gk| *gk > 0.0);
        let saturation = g
            .iter()
            .zip(&lower)
            .filter(|(gk, _)| **gk < 0.0)
            .map(|(gk, lk)| lk / gk)
            .fold(0.0, f64::max);
        let mut hi = self.radius / gnorm;
        while norm(&path(hi)) < self.radius {
            if !grows && hi >= saturation {
                hi = saturation;
                break;
            }
            hi *= 2.0;
        }
        if norm(&path(hi)) > self.radius {
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if norm(&path(mid)) > self.radius {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi = lo;
        }

        let (mut a, mut b) = (0.0, hi);
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - ratio * (b - a);
        let mut x2 = a + ratio * (b - a);
        let mut f1 = value(&path(x1));
        let mut f2 = value(&path(x2));
        for _ in 0..200 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + ratio * (b - a);
                f2 = value(&path(x2));
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - ratio * (b - a);
                f1 = value(&path(x1));
            }
        }
        let mut best_d = path(0.5 * (a + b));
        let mut best = value(&best_d);
        let end = path(hi);
        let v = value(&end);
        if v > best {
            best = v;
            best_d = end;
        }
        if best <= 0.0 {
            return (0.0, self.center.to_vec());
        }
        let x = self.center.iter().zip(&best_d).map(|(c, d)| c + d).collect();
        (best, x)
    }
}

/// Sum of Euclidean distances between matching signals.
pub fn transport_cost_signals(a: &[Vec<SignalVector>], b: &[Vec<SignalVector>]) -> Result<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::InvalidInput("scenario shape differs from the reference".into()));
    }
    Ok(a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y))
        .map(|(p, q)| distance(p, q))
        .sum())
}

pub fn transport_cost(phi: &Scenario, dhat: &Dataset) -> Result<f64> {
    transport_cost_signals(&phi.signals, &dhat.signals)
}

fn check_inputs(dhat: &Dataset, cfg: &AmbiguityConfig) -> Result<()> {
    cfg.validate()?;
    validate_dataset(dhat, cfg).map_err(|v| Error::InvalidInput(v.to_string()))?;
    for row in &dhat.signals {
        for s in row {
            SupportCell::new(s, cfg.radius, cfg.signal_floor)?;
        }
    }
    Ok(())
}

/// Best upward and downward moves for every `(agent, probe, signal)` triple.
struct Moves {
    /// `up[i][t]`: moving `beta_t^i` along `+alpha_t`.
    up: Vec<Vec<(f64, Vec<f64>)>>,
}

impl Moves {
    fn up(dhat: &Dataset, cfg: &AmbiguityConfig, price: f64) -> Self {
        let up = (0..dhat.m)
            .map(|i| {
                (0..dhat.t)
                    .map(|t| cell(dhat, cfg, i, t).best_move(dhat.probe(t), price))
                    .collect()
            })
            .collect();
        Self { up }
    }
}

fn cell<'a>(dhat: &'a Dataset, cfg: &AmbiguityConfig, i: usize, t: usize) -> SupportCell<'a> {
    SupportCell {
        center: dhat.signal(i, t),
        radius: cfg.radius,
        floor: cfg.signal_floor,
    }
}

fn down_move(dhat: &Dataset, cfg: &AmbiguityConfig, i: usize, s: usize, t: usize, price: f64) -> (f64, Vec<f64>) {
    let g: Vec<f64> = dhat.probe(t).iter().map(|a| -a).collect();
    cell(dhat, cfg, i, s).best_move(&g, price)
}

/// Per-pair worst case: the pair term `(u_s - u_t)/lambda_t - alpha_t'(beta_s - beta_t)`
/// at the observations plus the best transport-penalized moves of `beta_s` and `beta_t`.
struct PairWorst {
    value: f64,
    i: usize,
    s: usize,
    t: usize,
    beta_s: Vec<f64>,
    beta_t: Vec<f64>,
}

fn worst_pair(psi: &ParameterVector, v2: f64, dhat: &Dataset, cfg: &AmbiguityConfig) -> Option<PairWorst> {
    let moves = Moves::up(dhat, cfg, v2);
    let mut best: Option<PairWorst> = None;
    for i in 0..dhat.m {
        let a = pair_matrix(&dhat.probes, &dhat.signals[i]);
        for t in 0..dhat.t {
            let (gain_t, ref beta_t) = moves.up[i][t];
            for s in 0..dhat.t {
                if s == t {
                    continue;
                }
                let base = (psi.u(i, s) - psi.u(i, t)) / psi.lambda(i, t) - a[t][s];
                let (gain_s, beta_s) = down_move(dhat, cfg, i, s, t, v2);
                let value = base + gain_s + gain_t;
                if best.as_ref().is_none_or(|b| value > b.value) {
                    best = Some(PairWorst { value, i, s, t, beta_s, beta_t: beta_t.clone() });
                }
            }
        }
    }
    best
}

/// Exact maximum of `G(psi, v, ., dhat)` over the support, with a maximizer.
///
/// The proximity function is a max over pair terms and the transport penalty
/// is separable per signal, so the maximum over scenarios is the maximum over
/// pairs of a problem in which only `beta_s^i` and `beta_t^i` move.
pub fn max_constraint_violation(
    psi: &ParameterVector,
    v: &DualPair,
    dhat: &Dataset,
    cfg: &AmbiguityConfig,
) -> Result<(f64, Scenario)> {
    check_inputs(dhat, cfg)?;
    if psi.agents() != dhat.m || psi.times() != dhat.t {
        return Err(Error::InvalidInput("parameter shape does not match the dataset".into()));
    }
    let mut signals: SignalSet = dhat.signals.clone();
    let Some(w) = worst_pair(psi, v.v2, dhat, cfg) else {
        // single observation: h = 0 and any move only pays transport
        return Ok((-v.v1, Scenario { signals, transport_cost: 0.0 }));
    };
    signals[w.i][w.s] = SignalVector::new(w.beta_s)?;
    signals[w.i][w.t] = SignalVector::new(w.beta_t)?;
    let scenario = Scenario::new(signals, dhat)?;
    Ok((w.value - v.v1, scenario))
}

/// `G(psi, v, Phi, dhat)` evaluated directly.
pub fn constraint_value(
    psi: &ParameterVector,
    v: &DualPair,
    phi: &Scenario,
    dhat: &Dataset,
) -> f64 {
    afriat::h_value(psi, &phi.signals, &dhat.probes) - v.v2 * phi.transport_cost - v.v1
}

/// Robust objective of a fixed parameter vector: the smallest `eps v2 + v1`
/// over the dual box that keeps `G <= 0` for every scenario.
///
/// For fixed `psi` the worst violation is convex and nonincreasing in `v2`,
/// so a golden-section search over `v2` is exact up to its tolerance.
pub fn robust_objective_at(psi: &ParameterVector, dhat: &Dataset, cfg: &AmbiguityConfig) -> Result<(f64, DualPair)> {
    check_inputs(dhat, cfg)?;
    let required_v1 = |v2: f64| worst_pair(psi, v2, dhat, cfg).map_or(0.0, |w| w.value.max(0.0));
    let cost = |v2: f64| {
        let v1 = required_v1(v2);
        if v1 > cfg.v1_max() {
            f64::INFINITY
        } else {
            cfg.epsilon * v2 + v1
        }
    };
    let (mut a, mut b) = (0.0, cfg.v2_max());
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = cost(x1);
    let mut f2 = cost(x2);
    for _ in 0..120 {
        if f1 <= f2 && f1.is_finite() {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = cost(x2);
        }
    }
    let mut best_v2 = 0.5 * (a + b);
    let mut best = cost(best_v2);
    for cand in [0.0, cfg.v2_max()] {
        let c = cost(cand);
        if c < best {
            best = c;
            best_v2 = cand;
        }
    }
    if !best.is_finite() {
        return Err(Error::MasterInfeasible);
    }
    let v = DualPair::new(required_v1(best_v2), best_v2, cfg)?;
    Ok((best, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterOptions {
    /// Coarse `v2` grid size over `[0, V/eps]`.
    pub v2_grid: usize,
    /// Each coarse cell is halved this many times; the search is exact on the refined grid.
    pub refine_depth: u32,
    /// Resolution of the `v1` search.
    pub v1_tol: f64,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self { v2_grid: 200, refine_depth: 9, v1_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterSolution {
    pub psi: ParameterVector,
    pub v: DualPair,
    pub objective: f64,
}

/// Finite master program over the scenario pool.
///
/// For fixed `v` the constraints are linear in `psi` and decouple per agent;
/// across scenarios only the smallest weight per ordered pair binds. The
/// feasible `v` region is upward closed, so the minimal feasible `v1` is
/// nonincreasing in `v2`. The search runs branch-and-bound over a fixed grid
/// of `v2` values with `v1` restricted to a fixed dyadic grid, which makes the
/// result the exact grid minimum and keeps it monotone as the pool grows.
pub fn master_solve(
    pool: &[Scenario],
    dhat: &Dataset,
    cfg: &AmbiguityConfig,
    opts: &MasterOptions,
) -> Result<MasterSolution> {
    Master::new(pool, dhat, cfg, opts).solve()
}

struct Master<'a> {
    cfg: &'a AmbiguityConfig,
    /// `pairs[j][i]`: pair matrix of agent `i` under scenario `j`.
    pairs: Vec<Vec<Vec<Vec<f64>>>>,
    costs: Vec<f64>,
    t: usize,
    m: usize,
    grid: usize,
    v2_step: f64,
    levels: usize,
    v1_step: f64,
    memo: HashMap<usize, Option<usize>>,
}

impl<'a> Master<'a> {
    fn new(pool: &[Scenario], dhat: &Dataset, cfg: &'a AmbiguityConfig, opts: &MasterOptions) -> Self {
        let pairs = pool
            .iter()
            .map(|sc| sc.signals.iter().map(|row| pair_matrix(&dhat.probes, row)).collect())
            .collect();
        let grid = opts.v2_grid.max(1) << opts.refine_depth;
        let levels_log = (cfg.v1_max() / opts.v1_tol).log2().ceil().max(0.0) as u32;
        let levels = 1usize << levels_log;
        Self {
            cfg,
            pairs,
            costs: pool.iter().map(|sc| sc.transport_cost).collect(),
            t: dhat.t,
            m: dhat.m,
            grid,
            v2_step: cfg.v2_max() / grid as f64,
            levels,
            v1_step: cfg.v1_max() / levels as f64,
            memo: HashMap::new(),
        }
    }

    fn v2(&self, k: usize) -> f64 {
        k as f64 * self.v2_step
    }

    fn v1(&self, level: usize) -> f64 {
        level as f64 * self.v1_step
    }

    /// Per-agent weights `min_j (a_ts^{ij} + v2 D_j)`.
    fn weights(&self, v2: f64) -> Vec<Vec<Vec<f64>>> {
        let mut w = vec![vec![vec![f64::INFINITY; self.t]; self.t]; self.m];
        for (pj, dj) in self.pairs.iter().zip(&self.costs) {
            for (wi, ai) in w.iter_mut().zip(pj) {
                for (wr, ar) in wi.iter_mut().zip(ai) {
                    for (x, a) in wr.iter_mut().zip(ar) {
                        *x = x.min(a + v2 * dj);
                    }
                }
            }
        }
        w
    }

    fn agent_ok(&self, w: &[Vec<f64>], level: usize) -> Result<bool> {
        Ok(afriat::agent_feasible(w, self.v1(level), self.cfg.lambda_min)?.is_some())
    }

    /// Smallest feasible `v1` level at grid point `k`, searched in `[lo, hi]`.
    fn level_at(&mut self, k: usize, lo: usize, hi: usize) -> Result<Option<usize>> {
        if let Some(v) = self.memo.get(&k) {
            return Ok(*v);
        }
        let w = self.weights(self.v2(k));
        let mut level = lo;
        let mut out = Some(lo);
        for wi in &w {
            if self.agent_ok(wi, level)? {
                continue;
            }
            if level >= hi || !self.agent_ok(wi, hi)? {
                out = None;
                break;
            }
            let (mut a, mut b) = (level, hi);
            while b - a > 1 {
                let mid = a + (b - a) / 2;
                if self.agent_ok(wi, mid)? {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            level = b;
            out = Some(level);
        }
        self.memo.insert(k, out);
        Ok(out)
    }

    fn cost(&self, k: usize, level: Option<usize>) -> f64 {
        level.map_or(f64::INFINITY, |l| self.cfg.epsilon * self.v2(k) + self.v1(l))
    }

    fn solve(mut self) -> Result<MasterSolution> {
        let top = self.levels;
        let g0 = self.level_at(0, 0, top)?;
        let g_end = self.level_at(self.grid, 0, g0.unwrap_or(top))?;
        let mut best = (self.cost(0, g0), 0usize);
        let end_cost = self.cost(self.grid, g_end);
        if end_cost < best.0 {
            best = (end_cost, self.grid);
        }
        let mut stack = vec![(0usize, self.grid)];
        while let Some((a, b)) = stack.pop() {
            if b - a <= 1 {
                continue;
            }
            let ga = self.memo[&a];
            let gb = self.memo[&b];
            // interior points are no more feasible than b
            let Some(lb_level) = gb else { continue };
            let bound = self.cfg.epsilon * self.v2(a + 1) + self.v1(lb_level);
            if bound >= best.0 {
                continue;
            }
            let mid = a + (b - a) / 2;
            let gm = self.level_at(mid, lb_level, ga.unwrap_or(top))?;
            let c = self.cost(mid, gm);
            if c < best.0 || (c == best.0 && mid < best.1) {
                best = (c, mid);
            }
            stack.push((mid, b));
            stack.push((a, mid));
        }
        let (objective, k) = best;
        let level = self.memo[&k].ok_or(Error::MasterInfeasible)?;
        let v = DualPair::new(self.v1(level), self.v2(k), self.cfg)?;
        let psi = afriat::central_witness(&self.weights(v.v2), v.v1, self.cfg.lambda_min)?
            .ok_or(Error::MasterInfeasible)?;
        Ok(MasterSolution { psi, v, objective })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustOptions {
    pub master: MasterOptions,
    pub max_iterations: usize,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self { master: MasterOptions::default(), max_iterations: 200 }
    }
}

/// Exchange method for the semi-infinite program.
///
/// Each round solves the master over the current pool, then the violation
/// oracle at its solution. The loop stops as soon as the violation is below
/// `delta`; the returned incumbent is the one that violation certifies.
/// Otherwise the maximizing scenario joins the pool.
pub fn exchange_loop(
    dhat: &Dataset,
    cfg: &AmbiguityConfig,
    opts: &RobustOptions,
) -> Result<(ParameterVector, ExchangeState)> {
    check_inputs(dhat, cfg)?;
    let mut pool: Vec<Scenario> = Vec::new();
    let mut cv_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut iterations = 0;
    loop {
        let master = master_solve(&pool, dhat, cfg, &opts.master)?;
        let (cv, scenario) = max_constraint_violation(&master.psi, &master.v, dhat, cfg)?;
        iterations += 1;
        cv_trace.push(cv);
        objective_trace.push(master.objective);
        log::debug!(
            "exchange iteration {iterations}: objective {:.6}, cv {cv:.6}, v = ({:.5}, {:.5})",
            master.objective,
            master.v.v1,
            master.v.v2
        );
        let done = cv < cfg.delta;
        if done || iterations >= opts.max_iterations {
            let state = ExchangeState {
                pool,
                incumbent_psi: master.psi.clone(),
                incumbent_v: master.v,
                cv_trace,
                objective_trace,
                iterations,
            };
            if done {
                return Ok((master.psi, state));
            }
            return Err(Error::IterationCapExceeded {
                cap: opts.max_iterations,
                last_cv: cv,
                state: Box::new(state),
            });
        }
        if cv > 0.0 {
            pool.push(scenario);
        }
    }
}
