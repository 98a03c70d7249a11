//! Small dense linear feasibility kernel.
//!
//! Finds a point of `{x : A x <= b, l <= x <= u}` with a bounded-variable
//! primal simplex on the phase-one objective (sum of artificial variables).
//! Pivoting uses Bland's smallest-index rule for both the entering and the
//! leaving variable, so results are deterministic and the method cannot cycle.
//!
//! [`maximize`] continues from the phase-one basis with a linear objective.
//! It exists for the piecewise-affine surface solver in `eval`.

use crate::error::{Error, Result};

/// Row coefficients are accepted as `(column, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    n_vars: usize,
    rows: Vec<Row>,
    bounds: Vec<(f64, f64)>,
}

impl LinearSystem {
    /// Every variable starts with bounds `[0, +inf)`.
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            rows: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.bounds[var] = (lower, upper);
        self
    }

    /// Adds `sum coeffs * x <= rhs`.
    pub fn push_le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.rows.push(Row { coeffs, rhs });
        self
    }

    /// Adds `sum coeffs * x >= rhs`.
    pub fn push_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        let coeffs = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.push_le(coeffs, -rhs)
    }

    fn check(&self) -> Result<()> {
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !lo.is_finite() {
                return Err(Error::MalformedSystem(format!(
                    "variable {j} needs a finite lower bound"
                )));
            }
            if hi.is_nan() || lo > hi {
                return Err(Error::MalformedSystem(format!(
                    "variable {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::MalformedSystem(format!("row {r} has rhs {}", row.rhs)));
            }
            for &(j, a) in &row.coeffs {
                if j >= self.n_vars || !a.is_finite() {
                    return Err(Error::MalformedSystem(format!(
                        "row {r} has bad coefficient ({j}, {a})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest row or bound violation at `x`, each row scaled by its magnitude.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let mut lhs = 0.0;
            let mut scale = row.rhs.abs().max(1.0);
            for &(j, a) in &row.coeffs {
                lhs += a * x[j];
                scale = scale.max((a * x[j]).abs());
            }
            worst = worst.max((lhs - row.rhs) / scale);
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            worst = worst.max(lo - x[j]).max(x[j] - hi);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(Vec<f64>),
    Infeasible,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    pub fn witness(self) -> Option<Vec<f64>> {
        match self {
            Feasibility::Feasible(x) => Some(x),
            Feasibility::Infeasible => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_pivots: usize,
    /// Phase-one objective above this means infeasible.
    pub infeasibility_tol: f64,
    /// Allowed scaled row violation of a returned witness.
    pub feasibility_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_pivots: 1_000_000,
            infeasibility_tol: 1e-9,
            feasibility_tol: 1e-9,
        }
    }
}

pub fn feasible(sys: &LinearSystem) -> Result<Feasibility> {
    feasible_with(sys, &SimplexOptions::default())
}

pub fn feasible_with(sys: &LinearSystem, opts: &SimplexOptions) -> Result<Feasibility> {
    sys.check()?;
    let mut tab = Tableau::build(sys);
    tab.phase_one(opts)?;
    if tab.objective() > opts.infeasibility_tol {
        return Ok(Feasibility::Infeasible);
    }
    let x = tab.extract(sys);
    verify(sys, &x, opts)?;
    Ok(Feasibility::Feasible(x))
}

/// Maximizes `objective' x` over the system.
pub fn maximize(sys: &LinearSystem, objective: &[f64]) -> Result<LpOutcome> {
    maximize_with(sys, objective, &SimplexOptions::default())
}

pub fn maximize_with(
    sys: &LinearSystem,
    objective: &[f64],
    opts: &SimplexOptions,
) -> Result<LpOutcome> {
    sys.check()?;
    if objective.len() != sys.n_vars || objective.iter().any(|c| !c.is_finite()) {
        return Err(Error::MalformedSystem("objective length or value".into()));
    }
    let mut tab = Tableau::build(sys);
    tab.phase_one(opts)?;
    if tab.objective() > opts.infeasibility_tol {
        return Ok(LpOutcome::Infeasible);
    }
    tab.phase_two(objective, opts)?;
    let x = tab.extract(sys);
    verify(sys, &x, opts)?;
    let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}

fn verify(sys: &LinearSystem, x: &[f64], opts: &SimplexOptions) -> Result<()> {
    let v = sys.max_violation(x);
    if v > opts.feasibility_tol {
        return Err(Error::WitnessCheck(v));
    }
    Ok(())
}

const PIVOT_TOL: f64 = 1e-11;
/// Pivot candidates smaller than this fraction of the column's largest entry are skipped.
const PIVOT_REL: f64 = 1e-9;
const REFINE_STEPS: usize = 3;
const COST_TOL: f64 = 1e-11;

/// Dense tableau over shifted variables `y = x - l`, one slack per row and
/// one artificial per row whose shifted right-hand side is negative.
struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m x ncols` matrix `B^-1 A`.
    a: Vec<f64>,
    /// Values of the basic variables.
    xb: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    at_upper: Vec<bool>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    /// Artificials that left the basis never come back.
    blocked: Vec<bool>,
    first_artificial: usize,
    /// Original signed rows over all columns and their right-hand sides.
    rows0: Vec<Vec<(usize, f64)>>,
    rhs0: Vec<f64>,
    /// `+-1`: the sign each row was multiplied by.
    row_sign: Vec<f64>,
}

impl Tableau {
    fn build(sys: &LinearSystem) -> Self {
        let n = sys.n_vars;
        let m = sys.rows.len();
        let ncols = n + 2 * m;
        let mut a = vec![0.0; m * ncols];
        let mut xb = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut upper = vec![f64::INFINITY; ncols];
        let mut cost = vec![0.0; ncols];
        let mut blocked = vec![false; ncols];
        let mut rows0 = Vec::with_capacity(m);
        let mut row_sign = Vec::with_capacity(m);
        for (j, &(lo, hi)) in sys.bounds.iter().enumerate() {
            upper[j] = hi - lo;
        }
        for (r, row) in sys.rows.iter().enumerate() {
            let shifted = row.rhs
                - row
                    .coeffs
                    .iter()
                    .map(|&(j, c)| c * sys.bounds[j].0)
                    .sum::<f64>();
            let line = &mut a[r * ncols..(r + 1) * ncols];
            let sign = if shifted >= 0.0 { 1.0 } else { -1.0 };
            for &(j, c) in &row.coeffs {
                line[j] += sign * c;
            }
            line[n + r] = sign;
            let art = n + m + r;
            if shifted >= 0.0 {
                basis[r] = n + r;
                blocked[art] = true;
                upper[art] = 0.0;
            } else {
                line[art] = 1.0;
                basis[r] = art;
                cost[art] = 1.0;
            }
            xb[r] = shifted.abs();
            let mut signed: Vec<(usize, f64)> = row.coeffs.iter().map(|&(j, c)| (j, sign * c)).collect();
            signed.push((n + r, sign));
            if shifted < 0.0 {
                signed.push((art, 1.0));
            }
            rows0.push(signed);
            row_sign.push(sign);
        }
        let rhs0 = xb.clone();
        let mut is_basic = vec![false; ncols];
        for &b in &basis {
            is_basic[b] = true;
        }
        Self {
            m,
            ncols,
            a,
            xb,
            basis,
            is_basic,
            at_upper: vec![false; ncols],
            upper,
            cost,
            blocked,
            first_artificial: n + m,
            rows0,
            rhs0,
            row_sign,
        }
    }

    fn objective(&self) -> f64 {
        let basic: f64 = (0..self.m).map(|r| self.cost[self.basis[r]] * self.xb[r]).sum();
        let nonbasic: f64 = (0..self.ncols)
            .filter(|&j| !self.is_basic[j] && self.at_upper[j])
            .map(|j| self.cost[j] * self.upper[j])
            .sum();
        basic + nonbasic
    }

    fn phase_one(&mut self, opts: &SimplexOptions) -> Result<()> {
        self.iterate(opts)
    }

    fn phase_two(&mut self, objective: &[f64], opts: &SimplexOptions) -> Result<()> {
        for j in self.first_artificial..self.ncols {
            self.upper[j] = 0.0;
            self.blocked[j] = true;
        }
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        // minimize -objective
        for (j, c) in objective.iter().enumerate() {
            self.cost[j] = -c;
        }
        self.iterate(opts)
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let mut d = self.cost[j];
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                d -= cb * self.a[r * self.ncols + j];
            }
        }
        d
    }

    fn iterate(&mut self, opts: &SimplexOptions) -> Result<()> {
        for _ in 0..opts.max_pivots {
            let entering = (0..self.ncols).find_map(|j| {
                if self.is_basic[j] || self.blocked[j] {
                    return None;
                }
                let d = self.reduced_cost(j);
                if !self.at_upper[j] && d < -COST_TOL && self.upper[j] > 0.0 {
                    Some((j, 1.0))
                } else if self.at_upper[j] && d > COST_TOL {
                    Some((j, -1.0))
                } else {
                    None
                }
            });
            let Some((j, dir)) = entering else {
                return Ok(());
            };
            self.step(j, dir)?;
        }
        Err(Error::CycleLimit(opts.max_pivots))
    }

    /// Moves nonbasic `j` in direction `dir` until a bound blocks it.
    fn step(&mut self, j: usize, dir: f64) -> Result<()> {
        let nc = self.ncols;
        let mut theta = self.upper[j];
        let mut leave: Option<(usize, bool)> = None;
        let col_max = (0..self.m).map(|r| self.a[r * nc + j].abs()).fold(0.0, f64::max);
        let tol = PIVOT_TOL.max(PIVOT_REL * col_max);
        for r in 0..self.m {
            let g = dir * self.a[r * nc + j];
            let b = self.basis[r];
            let (lim, to_upper) = if g > tol {
                (self.xb[r].max(0.0) / g, false)
            } else if g < -tol && self.upper[b].is_finite() {
                ((self.upper[b] - self.xb[r]).max(0.0) / -g, true)
            } else {
                continue;
            };
            // ties go to the smallest basic index; a row tying with the bound flip wins
            let better = if lim < theta - 1e-12 {
                true
            } else if lim <= theta + 1e-12 {
                leave.is_none_or(|(rl, _)| b < self.basis[rl])
            } else {
                false
            };
            if better {
                theta = theta.min(lim);
                leave = Some((r, to_upper));
            }
        }
        if !theta.is_finite() {
            return Err(Error::Unbounded);
        }
        for r in 0..self.m {
            self.xb[r] -= theta * dir * self.a[r * nc + j];
        }
        match leave {
            None => {
                self.at_upper[j] = !self.at_upper[j];
            }
            Some((rl, to_upper)) => {
                let entering_value = if dir > 0.0 { theta } else { self.upper[j] - theta };
                let old = self.basis[rl];
                self.pivot(rl, j);
                self.xb[rl] = entering_value;
                self.is_basic[old] = false;
                self.is_basic[j] = true;
                self.at_upper[j] = false;
                self.at_upper[old] = to_upper;
                if old >= self.first_artificial {
                    self.blocked[old] = true;
                    self.at_upper[old] = false;
                }
            }
        }
        Ok(())
    }

    fn pivot(&mut self, rl: usize, j: usize) {
        let nc = self.ncols;
        let p = self.a[rl * nc + j];
        for k in 0..nc {
            self.a[rl * nc + k] /= p;
        }
        let (before, rest) = self.a.split_at_mut(rl * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for line in before.chunks_mut(nc).chain(after.chunks_mut(nc)) {
            let f = line[j];
            if f != 0.0 {
                for k in 0..nc {
                    line[k] -= f * prow[k];
                }
                line[j] = 0.0;
            }
        }
        self.basis[rl] = j;
    }

    /// Current value of every column.
    fn column_values(&self) -> Vec<f64> {
        let mut y: Vec<f64> = (0..self.ncols)
            .map(|j| if !self.is_basic[j] && self.at_upper[j] { self.upper[j] } else { 0.0 })
            .collect();
        for r in 0..self.m {
            y[self.basis[r]] = self.xb[r];
        }
        y
    }

    /// Iterative refinement of the basic values against the original rows.
    /// The slack columns of the tableau hold `B^-1` up to the row signs.
    fn refine(&mut self) {
        let n = self.first_artificial - self.m;
        let nc = self.ncols;
        for _ in 0..REFINE_STEPS {
            let y = self.column_values();
            let res: Vec<f64> = self
                .rows0
                .iter()
                .zip(&self.rhs0)
                .map(|(row, b)| b - row.iter().map(|&(j, c)| c * y[j]).sum::<f64>())
                .collect();
            if res.iter().all(|v| v.abs() < 1e-15) {
                return;
            }
            for r in 0..self.m {
                let corr: f64 = (0..self.m)
                    .map(|k| self.a[r * nc + n + k] * self.row_sign[k] * res[k])
                    .sum();
                self.xb[r] += corr;
            }
        }
    }

    fn extract(&mut self, sys: &LinearSystem) -> Vec<f64> {
        self.refine();
        let n = sys.n_vars;
        let mut y = vec![0.0; n];
        for j in 0..n {
            if self.at_upper[j] {
                y[j] = self.upper[j];
            }
        }
        for r in 0..self.m {
            let b = self.basis[r];
            if b < n {
                y[b] = self.xb[r];
            }
        }
        y.iter()
            .zip(&sys.bounds)
            .map(|(v, &(lo, hi))| (lo + v).clamp(lo, hi))
            .collect()
    }
}
