#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revpref::{AmbiguityConfig, Dataset, DualPair, ParameterVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two observations whose signals are each other's cheaper alternative.
pub fn cycle_dataset() -> Dataset {
    Dataset::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
        true,
    )
    .unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sample of `{b >= floor, |b - c| <= radius}` in one or two dimensions:
/// lattice at `step`, the sphere at arc length `step`, the floor faces at
/// `step` and their intersections with the sphere.
pub fn cell_points(c: &[f64], radius: f64, floor: f64, step: f64) -> Vec<Vec<f64>> {
    let inside = |b: &[f64]| dist(b, c) <= radius + 1e-12 && b.iter().all(|x| *x >= floor - 1e-12);
    let mut pts = vec![c.to_vec()];
    match c.len() {
        1 => {
            let lo = (c[0] - radius).max(floor);
            let hi = c[0] + radius;
            let n = ((hi - lo) / step).ceil() as usize;
            for k in 0..=n {
                pts.push(vec![(lo + k as f64 * step).min(hi)]);
            }
        }
        2 => {
            let n = (radius / step).ceil() as i64;
            for a in -n..=n {
                for b in -n..=n {
                    let p = vec![c[0] + a as f64 * step, c[1] + b as f64 * step];
                    if inside(&p) {
                        pts.push(p);
                    }
                }
            }
            let arcs = ((2.0 * std::f64::consts::PI * radius) / step).ceil() as usize;
            for k in 0..arcs {
                let th = 2.0 * std::f64::consts::PI * k as f64 / arcs as f64;
                let p = vec![c[0] + radius * th.cos(), c[1] + radius * th.sin()];
                if inside(&p) {
                    pts.push(p);
                }
            }
            for axis in 0..2 {
                let other = 1 - axis;
                let gap = c[axis] - floor;
                if gap > radius {
                    continue;
                }
                let half = (radius * radius - gap * gap).max(0.0).sqrt();
                let m = (half / step).ceil() as i64;
                for k in -m..=m {
                    let mut p = vec![0.0; 2];
                    p[axis] = floor;
                    p[other] = c[other] + (k as f64 * step).clamp(-half, half);
                    if inside(&p) {
                        pts.push(p);
                    }
                }
            }
        }
        n => panic!("cell sampling supports one or two dimensions, got {n}"),
    }
    pts
}

/// Grid estimate of the maximum constraint violation. Only the two signals of
/// a pair enter its term and the transport cost is additive, so each pair
/// is maximized over the product of its two cells, one cell at a time.
pub fn grid_cv(psi: &ParameterVector, v: &DualPair, d: &Dataset, cfg: &AmbiguityConfig, step: f64) -> f64 {
    if d.t < 2 {
        return -v.v1;
    }
    let cells: Vec<Vec<Vec<Vec<f64>>>> = (0..d.m)
        .map(|i| {
            (0..d.t)
                .map(|t| cell_points(d.signal(i, t), cfg.radius, cfg.signal_floor, step))
                .collect()
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    for i in 0..d.m {
        for t in 0..d.t {
            let a = d.probe(t);
            let bt = d.signal(i, t);
            let up = cells[i][t]
                .iter()
                .map(|b| dot(a, b) - v.v2 * dist(b, bt))
                .fold(f64::NEG_INFINITY, f64::max);
            for s in 0..d.t {
                if s == t {
                    continue;
                }
                let bs = d.signal(i, s);
                let down = cells[i][s]
                    .iter()
                    .map(|b| -dot(a, b) - v.v2 * dist(b, bs))
                    .fold(f64::NEG_INFINITY, f64::max);
                let base = (psi.u(i, s) - psi.u(i, t)) / psi.lambda(i, t);
                best = best.max(base + down + up);
            }
        }
    }
    best - v.v1
}

/// Random small instance: dataset, parameters, dual pair and config.
pub fn random_cv_instance(
    r: &mut impl Rng,
    max_t: usize,
    max_m: usize,
    max_n: usize,
) -> (Dataset, ParameterVector, DualPair, AmbiguityConfig) {
    let t = r.random_range(1..=max_t);
    let m = r.random_range(1..=max_m);
    let n = r.random_range(1..=max_n);
    let cfg = AmbiguityConfig { radius: r.random_range(0.1..0.6), ..AmbiguityConfig::default() };
    let probes = (0..t).map(|_| (0..n).map(|_| r.random_range(0.2..1.2)).collect()).collect();
    let signals = (0..m)
        .map(|_| (0..t).map(|_| (0..n).map(|_| r.random_range(0.02..1.5)).collect()).collect())
        .collect();
    let d = Dataset::new(probes, signals, true).unwrap();
    let u = (0..m).map(|_| (0..t).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let lambda = (0..m).map(|_| (0..t).map(|_| r.random_range(0.1..1.0)).collect()).collect();
    let psi = ParameterVector::new(u, lambda, cfg.lambda_min).unwrap();
    let v = DualPair::new(r.random_range(0.0..1.0), r.random_range(0.0..2.0), &cfg).unwrap();
    (d, psi, v, cfg)
}

/// Minimum over a `step` grid of the box of the proximity function on the
/// cycle dataset. Only `u2 - u1` enters, so the scan runs over differences.
pub fn cycle_grid_phi(step: f64, lambda_min: f64) -> f64 {
    let nu = (2.0 / step).round() as i64;
    let nl = ((1.0 - lambda_min) / step).ceil() as i64;
    let lambdas: Vec<f64> = (0..=nl).map(|k| (lambda_min + k as f64 * step).min(1.0)).collect();
    let mut best = f64::INFINITY;
    for k in -nu..=nu {
        let diff = k as f64 * step;
        for &l1 in &lambdas {
            for &l2 in &lambdas {
                // a_12 = a_21 = -1 on the cycle
                best = best.min((diff / l1 + 1.0).max(-diff / l2 + 1.0));
            }
        }
    }
    best
}

/// Random separable concave problem: specs, weights, probe and floor.
pub fn random_forward_instance(
    r: &mut impl Rng,
) -> (Vec<revpref::forward::UtilitySpec>, Vec<f64>, revpref::ProbeVector, f64) {
    use revpref::forward::{Term, UtilitySpec};
    let m = r.random_range(1..=4);
    let n = r.random_range(1..=3);
    let specs = (0..m)
        .map(|_| UtilitySpec {
            terms: (0..n)
                .map(|_| {
                    let coef = r.random_range(0.2..2.0);
                    if r.random_bool(0.4) {
                        Term::Linear { coef }
                    } else {
                        Term::Power { coef, exponent: r.random_range(0.1..0.95) }
                    }
                })
                .collect(),
        })
        .collect();
    let weights = (0..m).map(|_| r.random_range(0.2..2.0)).collect();
    let alpha = revpref::ProbeVector::new((0..n).map(|_| r.random_range(0.1..1.1)).collect()).unwrap();
    let floor = if r.random_bool(0.5) { 0.0 } else { 0.01 };
    (specs, weights, alpha, floor)
}

/// Random point with every coordinate at least `floor` that spends the whole
/// budget `alpha' sum_i x_i = 1`. Half of the draws put the leftover on a
/// single coordinate.
pub fn budget_point(r: &mut impl Rng, m: usize, alpha: &[f64], floor: f64) -> Vec<Vec<f64>> {
    let n = alpha.len();
    let base: f64 = floor * m as f64 * alpha.iter().sum::<f64>();
    let left = 1.0 - base;
    assert!(left > 0.0, "floor exhausts the budget");
    let mut raw: Vec<Vec<f64>> = if r.random_bool(0.5) {
        let (i, k) = (r.random_range(0..m), r.random_range(0..n));
        (0..m).map(|a| (0..n).map(|b| if (a, b) == (i, k) { 1.0 } else { 0.0 }).collect()).collect()
    } else {
        (0..m).map(|_| (0..n).map(|_| -r.random_range(1e-12f64..1.0).ln()).collect()).collect()
    };
    let spend: f64 = raw.iter().map(|x| dot(x, alpha)).sum();
    for x in raw.iter_mut() {
        for (v, _) in x.iter_mut().zip(alpha) {
            *v = floor + *v * left / spend;
        }
    }
    raw
}
