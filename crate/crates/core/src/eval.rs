//! Estimator quality: Pareto surfaces, Hausdorff distance, Monte-Carlo harness.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afriat::{naive_estimate, reconstruct_utilities};
use crate::error::{Error, Result};
use crate::forward::{generate_dataset, sample_probe, solve_coordination, stream, GenConfig, UtilitySpec};
use crate::linfeas::{self, LinearSystem, LpOutcome, SimplexOptions};
use crate::robust::{exchange_loop, RobustOptions};
use crate::types::{distance, AmbiguityConfig, ProbeVector, UtilityFunction};

pub const DEFAULT_GRID: usize = 15;
pub const FRESH_PROBES: usize = 5;

/// Utilities whose Pareto surface can be sampled.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    /// Smooth separable utilities with fixed agent weights `mu`.
    Smooth { specs: &'a [UtilitySpec], mu: &'a [f64] },
    /// Min-of-affine reconstructions.
    Reconstructed(&'a [UtilityFunction]),
}

impl Model<'_> {
    pub fn agents(&self) -> usize {
        match self {
            Model::Smooth { specs, .. } => specs.len(),
            Model::Reconstructed(f) => f.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    /// Stacked allocations `(beta^1, ..., beta^M)`, one per weight vector.
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub probe: ProbeVector,
}

/// Weight vectors `k / grid` with every `k_i >= 1`, plus the equal-weight point.
pub fn simplex_weights(m: usize, grid: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            acc.push(left);
            out.push(acc.clone());
            acc.pop();
            return;
        }
        for k in 1..=left.saturating_sub(slots - 1) {
            acc.push(k);
            rec(left - k, slots - 1, acc, out);
            acc.pop();
        }
    }
    let mut counts = Vec::new();
    if m > 0 && grid >= m {
        rec(grid, m, &mut Vec::new(), &mut counts);
    }
    let mut out: Vec<Vec<f64>> = counts
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / grid as f64).collect())
        .collect();
    if m > 0 && !(grid.is_multiple_of(m) && grid >= m) {
        out.push(vec![1.0 / m as f64; m]);
    }
    out
}

/// Common affine rescaling `(f - shift) / scale` applied to every utility
/// before the LP. Multipliers near `lambda_min` otherwise leave slopes three
/// orders of magnitude below the intercepts. Weighted argmaxes are unchanged.
struct Scaling {
    shift: f64,
    scale: f64,
}

impl Scaling {
    fn of(utilities: &[UtilityFunction]) -> Self {
        let pieces = || utilities.iter().flat_map(|f| &f.pieces);
        let shift = pieces().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max);
        let scale = pieces().map(|p| p.lambda).fold(0.0, f64::max);
        Self { shift, scale }
    }

    fn value(&self, scaled: f64, weights: &[f64]) -> f64 {
        scaled * self.scale + self.shift * weights.iter().sum::<f64>()
    }
}

/// Epigraph LP of `max sum_i w_i f^i(gamma^i)` under the budget: `gamma^i_k`
/// at `i*n + k`, then `z_i` at `m*n + i`, with `f` rescaled by [`Scaling`].
fn reconstructed_lp(
    utilities: &[UtilityFunction],
    weights: &[f64],
    alpha: &[f64],
) -> Result<(LinearSystem, Vec<f64>, Scaling)> {
    let m = utilities.len();
    let n = alpha.len();
    if m == 0 || weights.len() != m || utilities.iter().any(|f| f.dim() != n) {
        return Err(Error::InvalidInput("utilities, weights and probe disagree".into()));
    }
    let sc = Scaling::of(utilities);
    let mut sys = LinearSystem::new(m * n + m);
    for (i, f) in utilities.iter().enumerate() {
        let z = m * n + i;
        let intercept = |p: &crate::types::Piece| (p.intercept() - sc.shift) / sc.scale;
        let at_zero = f.pieces.iter().map(intercept).fold(f64::INFINITY, f64::min);
        sys.set_bounds(z, at_zero - 1.0, f64::INFINITY);
        for p in &f.pieces {
            let mut row = vec![(z, 1.0)];
            row.extend(p.slope().into_iter().enumerate().map(|(k, g)| (i * n + k, -g / sc.scale)));
            sys.push_le(row, intercept(p));
        }
    }
    let budget = (0..m).flat_map(|i| (0..n).map(move |k| (i * n + k, alpha[k]))).collect();
    sys.push_le(budget, 1.0);
    let mut objective = vec![0.0; m * n + m];
    objective[m * n..].copy_from_slice(weights);
    Ok((sys, objective, sc))
}

/// Witness tolerance for the surface LPs; the face walk adds a row nearly
/// parallel to the objective and 1e-6 is far below the surface resolution.
const SURFACE_LP_TOL: f64 = 1e-6;

fn solve_lp(sys: &LinearSystem, objective: &[f64]) -> Result<(f64, Vec<f64>)> {
    let opts = SimplexOptions { feasibility_tol: SURFACE_LP_TOL, ..SimplexOptions::default() };
    match linfeas::maximize_with(sys, objective, &opts)? {
        LpOutcome::Optimal { x, value } => Ok((value, x)),
        LpOutcome::Infeasible => Err(Error::NonConvergence { residual: f64::INFINITY }),
    }
}

/// Maximizes `sum_i w_i f^i(gamma^i)` for min-of-affine `f^i` under
/// `alpha'(sum_i gamma^i) <= 1`, `gamma >= 0`. Returns the value and a
/// stacked maximizer.
pub fn maximize_reconstructed(
    utilities: &[UtilityFunction],
    weights: &[f64],
    alpha: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (sys, objective, sc) = reconstructed_lp(utilities, weights, alpha)?;
    let mn = utilities.len() * alpha.len();
    let (value, x) = solve_lp(&sys, &objective)?;
    Ok((sc.value(value, weights), x[..mn].to_vec()))
}

/// Relative slack on the optimal value when walking the optimal face.
const FACE_TOL: f64 = 1e-9;

/// Central maximizer: the mean of the optimal face's extreme points in every
/// `+-gamma_j` direction (points within [`FACE_TOL`] of the optimum). Ties in
/// the smooth solver are split evenly, which is the same rule.
pub fn central_maximizer(
    utilities: &[UtilityFunction],
    weights: &[f64],
    alpha: &[f64],
) -> Result<Vec<f64>> {
    let face = reconstructed_face(utilities, weights, alpha)?;
    let mut c = vec![0.0; face[0].len()];
    for p in &face {
        for (a, b) in c.iter_mut().zip(p) {
            *a += b / face.len() as f64;
        }
    }
    Ok(c)
}

/// Extreme points of the optimal face: the maximizer, then the maximizer of
/// each `+-gamma_j` among points within [`FACE_TOL`] of the optimum.
pub fn reconstructed_face(
    utilities: &[UtilityFunction],
    weights: &[f64],
    alpha: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let (mut sys, objective, _) = reconstructed_lp(utilities, weights, alpha)?;
    let mn = utilities.len() * alpha.len();
    let (value, x) = solve_lp(&sys, &objective)?;
    let floor = value - FACE_TOL * value.abs().max(1.0);
    sys.push_ge(objective.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect(), floor);
    let mut points = vec![x[..mn].to_vec()];
    for j in 0..mn {
        for sign in [1.0, -1.0] {
            let mut dir = vec![0.0; objective.len()];
            dir[j] = sign;
            let (_, y) = solve_lp(&sys, &dir)?;
            push_distinct(&mut points, y[..mn].to_vec());
        }
    }
    Ok(points)
}

fn push_distinct(points: &mut Vec<Vec<f64>>, p: Vec<f64>) {
    if points.iter().all(|q| distance(q, &p) > 1e-9) {
        points.push(p);
    }
}

pub fn pareto_surface(model: Model<'_>, alpha: &ProbeVector, grid: usize) -> Result<SurfaceSample> {
    if grid == 0 {
        return Err(Error::InvalidInput("grid must be at least 1".into()));
    }
    let weights = simplex_weights(model.agents(), grid);
    let mut points = Vec::with_capacity(weights.len());
    for w in &weights {
        let point = match model {
            Model::Smooth { specs, mu } => {
                let scaled: Vec<f64> = w.iter().zip(mu).map(|(a, b)| a * b).collect();
                solve_coordination(specs, &scaled, alpha, 0.0)?.signals.concat()
            }
            Model::Reconstructed(f) => central_maximizer(f, w, alpha)?,
        };
        points.push(point);
    }
    Ok(SurfaceSample { points, weights, probe: alpha.clone() })
}

/// Symmetric Hausdorff distance between finite point sets.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|x| to.iter().map(|y| distance(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// Mean over probes of the Hausdorff distance between the two surfaces.
pub fn reconstruction_error(
    truth: Model<'_>,
    estimate: Model<'_>,
    probes: &[ProbeVector],
    grid: usize,
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::InvalidInput("need at least one probe".into()));
    }
    let mut total = 0.0;
    for alpha in probes {
        let a = pareto_surface(truth, alpha, grid)?;
        let b = pareto_surface(estimate, alpha, grid)?;
        total += hausdorff(&a.points, &b.points)?;
    }
    Ok(total / probes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    /// Data law; the seed is replaced per run.
    pub generator: GenConfig,
    pub ambiguity: AmbiguityConfig,
    pub robust: RobustOptions,
    pub grid: usize,
    pub fresh_probes: usize,
}

impl MonteCarloConfig {
    pub fn paper() -> Self {
        Self {
            generator: GenConfig::paper(0),
            ambiguity: AmbiguityConfig::default(),
            robust: RobustOptions::default(),
            grid: DEFAULT_GRID,
            fresh_probes: FRESH_PROBES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub phi: f64,
    pub iterations: usize,
    pub error_naive: f64,
    pub error_robust: f64,
    pub robust_objective: f64,
    pub cv_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    /// Successful runs; equals `records.len()`.
    pub runs: usize,
    pub requested: usize,
    pub excluded: usize,
    pub avg_error_naive: f64,
    pub worst_error_naive: f64,
    pub avg_error_robust: f64,
    pub worst_error_robust: f64,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

/// Seeds of the individual runs.
pub fn run_seeds(master_seed: u64, runs: usize) -> Vec<u64> {
    let mut rng = stream(master_seed, u64::MAX);
    (0..runs).map(|_| rng.random()).collect()
}

/// One run: generate, estimate both ways, score both on observed and fresh probes.
pub fn single_run(run: usize, seed: u64, cfg: &MonteCarloConfig) -> Result<RunRecord> {
    let gen = GenConfig { seed, ..cfg.generator.clone() };
    let data = generate_dataset(&gen)?.noisy;
    let (prox, psi_naive) = naive_estimate(&data, &cfg.ambiguity)?;
    let (psi_robust, state) = exchange_loop(&data, &cfg.ambiguity, &cfg.robust)?;

    let mut probes = data.probes.clone();
    let mut rng = stream(seed, u64::MAX - 1);
    for _ in 0..cfg.fresh_probes {
        probes.push(sample_probe(&mut rng, gen.n, gen.probe_low, gen.probe_high));
    }
    let truth = Model::Smooth { specs: &gen.specs, mu: &gen.weights };
    let naive = reconstruct_utilities(&psi_naive, &data)?;
    let robust = reconstruct_utilities(&psi_robust, &data)?;
    let error_naive = reconstruction_error(truth, Model::Reconstructed(&naive), &probes, cfg.grid)?;
    let error_robust = reconstruction_error(truth, Model::Reconstructed(&robust), &probes, cfg.grid)?;
    Ok(RunRecord {
        run,
        seed,
        phi: prox.phi,
        iterations: state.iterations,
        error_naive,
        error_robust,
        robust_objective: *state.objective_trace.last().unwrap_or(&0.0),
        cv_trace: state.cv_trace,
        objective_trace: state.objective_trace,
    })
}

/// Thread count from `REVPREF_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("REVPREF_THREADS").ok()?.parse().ok().filter(|n| *n > 0)
}

/// Runs the comparison `runs` times. Failed runs are excluded and listed.
/// The report depends only on `master_seed` and `cfg`.
pub fn monte_carlo(runs: usize, master_seed: u64, cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::InvalidInput("runs must be at least 1".into()));
    }
    cfg.generator.validate()?;
    cfg.ambiguity.validate()?;
    let seeds = run_seeds(master_seed, runs);
    let work = || -> Vec<Result<RunRecord>> {
        seeds
            .par_iter()
            .enumerate()
            .map(|(run, &seed)| single_run(run, seed, cfg))
            .collect()
    };
    let outcomes = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (run, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("run {run} excluded: {e}");
                failures.push(RunFailure { run, seed: seeds[run], error: e.to_string() });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::NonConvergence { residual: f64::INFINITY });
    }
    let stats = |f: fn(&RunRecord) -> f64| {
        let avg = records.iter().map(f).sum::<f64>() / records.len() as f64;
        let worst = records.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (avg, worst)
    };
    let (avg_error_naive, worst_error_naive) = stats(|r| r.error_naive);
    let (avg_error_robust, worst_error_robust) = stats(|r| r.error_robust);
    Ok(MonteCarloReport {
        runs: records.len(),
        requested: runs,
        excluded: failures.len(),
        avg_error_naive,
        worst_error_naive,
        avg_error_robust,
        worst_error_robust,
        records,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::default_specs;
    use crate::types::Piece;

    fn probe(v: &[f64]) -> ProbeVector {
        ProbeVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hausdorff_examples() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 0.0]];
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&b, &[vec![3.0, 4.0]]).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &b).unwrap(), 1.0);
        assert_eq!(hausdorff(&b, &a).unwrap(), 1.0);
        assert!(matches!(hausdorff(&a, &[]), Err(Error::EmptySet)));
    }

    #[test]
    fn weights_are_on_the_simplex() {
        let w = simplex_weights(3, 15);
        assert_eq!(w.len(), 91);
        assert!(w.iter().all(|v| (v.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(w.iter().any(|v| v.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12)));
        assert_eq!(simplex_weights(1, 7), vec![vec![1.0]]);
        assert_eq!(simplex_weights(2, 1), vec![vec![0.5, 0.5]]);
        assert_eq!(simplex_weights(2, 3).len(), 3);
    }

    #[test]
    fn single_agent_surface_is_one_point() {
        let specs = [UtilitySpec::linear(&[1.0, 2.0])];
        let s = pareto_surface(Model::Smooth { specs: &specs, mu: &[1.0] }, &probe(&[1.0, 1.0]), 9).unwrap();
        assert_eq!(s.points, vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn symmetric_surface_exhausts_the_budget() {
        let specs = default_specs(2, 2);
        let alpha = probe(&[0.5, 0.5]);
        let s = pareto_surface(Model::Smooth { specs: &specs, mu: &[1.0, 1.0] }, &alpha, 10).unwrap();
        for p in &s.points {
            let spent = 0.5 * (p[0] + p[2]) + 0.5 * (p[1] + p[3]);
            assert!((spent - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstructed_affine_utility_spends_on_best_ratio() {
        let f = UtilityFunction::new(vec![Piece {
            u: 0.0,
            lambda: 1.0,
            probe: vec![1.0, 2.0],
            anchor: vec![0.0, 0.0],
        }])
        .unwrap();
        // slope (1, 2) at prices (1, 4): coordinate 0 wins
        let (value, x) = maximize_reconstructed(&[f], &[1.0], &[1.0, 4.0]).unwrap();
        assert!((value - 1.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9 && x[1].abs() < 1e-12);
    }

    #[test]
    fn identical_models_have_zero_error() {
        let specs = default_specs(3, 2);
        let truth = Model::Smooth { specs: &specs, mu: &[1.0; 3] };
        let probes = [probe(&[0.3, 0.8]), probe(&[1.0, 0.2])];
        assert!(reconstruction_error(truth, truth, &probes, 6).unwrap() < 1e-6);
    }
}
