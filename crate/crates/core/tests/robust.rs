mod common;

use rand::Rng;
use revpref::afriat::{h_value, naive_estimate};
use revpref::forward::{generate_dataset, GenConfig};
use revpref::robust::{
    constraint_value, exchange_loop, master_solve, max_constraint_violation, robust_objective_at,
    transport_cost, MasterOptions, RobustOptions, SupportCell,
};
use revpref::{AmbiguityConfig, Dataset, DualPair, ParameterVector, Scenario, SignalVector};

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn inside_support(sc: &Scenario, d: &Dataset, cfg: &AmbiguityConfig) -> bool {
    (0..d.m).all(|i| {
        (0..d.t).all(|t| {
            let b = &sc.signals[i][t];
            norm_diff(b, d.signal(i, t)) <= cfg.radius + 1e-9 && b.iter().all(|x| *x >= cfg.signal_floor - 1e-12)
        })
    })
}

#[test]
fn transport_cost_is_the_sum_of_displacements() {
    let mut r = common::rng(21);
    for _ in 0..50 {
        let (d, ..) = common::random_cv_instance(&mut r, 3, 2, 2);
        let mut expected = 0.0;
        let signals: Vec<Vec<SignalVector>> = (0..d.m)
            .map(|i| {
                (0..d.t)
                    .map(|t| {
                        let b: Vec<f64> = d.signal(i, t).iter().map(|x| x + r.random_range(-0.3..0.3)).collect();
                        expected += norm_diff(&b, d.signal(i, t));
                        SignalVector::new(b).unwrap()
                    })
                    .collect()
            })
            .collect();
        let sc = Scenario::new(signals, &d).unwrap();
        let got = transport_cost(&sc, &d).unwrap();
        assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
        assert!((sc.transport_cost - expected).abs() <= 1e-12);
    }
}

#[test]
fn violation_oracle_matches_grid_search() {
    let mut r = common::rng(22);
    for k in 0..20 {
        let (d, psi, v, cfg) = common::random_cv_instance(&mut r, 3, 2, 2);
        let (cv, sc) = max_constraint_violation(&psi, &v, &d, &cfg).unwrap();
        let grid = common::grid_cv(&psi, &v, &d, &cfg, 1e-2);
        assert!(grid <= cv + 1e-9, "instance {k}: grid {grid} above oracle {cv}");
        assert!(cv - grid <= 2e-2, "instance {k}: oracle {cv}, grid {grid}");
        assert!(inside_support(&sc, &d, &cfg));
        let direct = constraint_value(&psi, &v, &sc, &d);
        assert!((direct - cv).abs() <= 1e-9, "instance {k}: scenario value {direct} vs {cv}");
    }
}

/// One agent, two observations, one good: the full scenario grid is two dimensional.
#[test]
fn violation_oracle_matches_joint_grid() {
    let mut r = common::rng(23);
    for _ in 0..10 {
        let cfg = AmbiguityConfig { radius: r.random_range(0.1..0.8), ..AmbiguityConfig::default() };
        let d = Dataset::new(
            vec![vec![r.random_range(0.2..1.2)], vec![r.random_range(0.2..1.2)]],
            vec![vec![vec![r.random_range(0.02..1.0)], vec![r.random_range(0.02..1.0)]]],
            true,
        )
        .unwrap();
        let psi = ParameterVector::new(
            vec![vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]],
            vec![vec![r.random_range(0.1..1.0), r.random_range(0.1..1.0)]],
            cfg.lambda_min,
        )
        .unwrap();
        let v = DualPair::new(r.random_range(0.0..1.0), r.random_range(0.0..2.0), &cfg).unwrap();
        let (cv, _) = max_constraint_violation(&psi, &v, &d, &cfg).unwrap();
        let c0 = common::cell_points(d.signal(0, 0), cfg.radius, cfg.signal_floor, 1e-3);
        let c1 = common::cell_points(d.signal(0, 1), cfg.radius, cfg.signal_floor, 1e-3);
        let mut best = f64::NEG_INFINITY;
        for b0 in &c0 {
            for b1 in &c1 {
                let signals = vec![vec![SignalVector::new(b0.clone()).unwrap(), SignalVector::new(b1.clone()).unwrap()]];
                let cost = (b0[0] - d.signal(0, 0)[0]).abs() + (b1[0] - d.signal(0, 1)[0]).abs();
                best = best.max(h_value(&psi, &signals, &d.probes) - v.v2 * cost - v.v1);
            }
        }
        assert!(best <= cv + 1e-9 && cv - best <= 5e-3, "oracle {cv}, joint grid {best}");
    }
}

#[test]
fn expensive_transport_keeps_the_observations() {
    let mut r = common::rng(24);
    for _ in 0..20 {
        let (d, psi, _, cfg) = common::random_cv_instance(&mut r, 3, 2, 2);
        let max_norm = d.probes.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let v = DualPair::new(0.3, max_norm + 0.01, &cfg).unwrap();
        let (cv, sc) = max_constraint_violation(&psi, &v, &d, &cfg).unwrap();
        let at_obs = h_value(&psi, &d.signals, &d.probes) - v.v1;
        assert!((cv - at_obs).abs() <= 1e-9, "{cv} vs {at_obs}");
        assert!(sc.transport_cost <= 1e-9);
    }
}

#[test]
fn support_cell_moves_stay_inside() {
    let mut r = common::rng(25);
    for _ in 0..200 {
        let n = r.random_range(1..=3);
        let c: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        let cell = SupportCell::new(&c, r.random_range(0.05..1.0), 0.01).unwrap();
        let g: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let price = r.random_range(0.0..2.0);
        let (gain, x) = cell.best_move(&g, price);
        assert!(cell.contains(&x, 1e-9));
        let direct: f64 = g.iter().zip(x.iter().zip(&c)).map(|(a, (b, z))| a * (b - z)).sum::<f64>()
            - price * norm_diff(&x, &c);
        assert!((gain - direct).abs() <= 1e-9);
        assert!(gain >= -1e-12, "staying put is always available");
    }
}

fn noisy(seed: u64) -> Dataset {
    generate_dataset(&GenConfig::paper(seed)).unwrap().noisy
}

#[test]
fn master_objective_grows_with_the_pool_and_bounds_every_psi() {
    let cfg = AmbiguityConfig::default();
    let d = noisy(3);
    let opts = MasterOptions::default();
    let (psi, state) = exchange_loop(&d, &cfg, &RobustOptions::default()).unwrap();
    let mut last = f64::NEG_INFINITY;
    for k in 0..=state.pool.len() {
        let m = master_solve(&state.pool[..k], &d, &cfg, &opts).unwrap();
        assert!(m.objective >= last - 1e-12, "pool {k}: {} < {last}", m.objective);
        last = m.objective;
    }
    let (naive_obj, _) = robust_objective_at(&naive_estimate(&d, &cfg).unwrap().1, &d, &cfg).unwrap();
    assert!(naive_obj >= last - 1e-4, "naive {naive_obj} below relaxation {last}");
    let (own, _) = robust_objective_at(&psi, &d, &cfg).unwrap();
    assert!(own <= last + cfg.delta + 1e-6, "incumbent {own} vs master {last}");
}

#[test]
fn exchange_loop_certificate_survives_independent_checks() {
    let cfg = AmbiguityConfig::default();
    for seed in 0..4 {
        let d = noisy(seed);
        let (psi, state) = exchange_loop(&d, &cfg, &RobustOptions::default()).unwrap();
        let v = state.incumbent_v;
        let cv = *state.cv_trace.last().unwrap();
        assert!(cv < cfg.delta);
        let (again, sc) = max_constraint_violation(&psi, &v, &d, &cfg).unwrap();
        assert!((again - cv).abs() <= 1e-12);
        let direct = h_value(&psi, &sc.signals, &d.probes) - v.v2 * transport_cost(&sc, &d).unwrap() - v.v1;
        assert!((direct - cv).abs() <= 1e-9);
        assert!(common::grid_cv(&psi, &v, &d, &cfg, 0.05) <= cfg.delta + 1e-6);
        for sc in &state.pool {
            assert!(inside_support(sc, &d, &cfg));
        }
        assert!(state.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-6));
    }
}
