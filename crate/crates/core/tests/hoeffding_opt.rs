mod common;

use common::{mean, rng};
use hetstore::bounds::{hoeffding_bound, spreading_bound};
use hetstore::hoeffding::{
    cone_coefficient, feasibility_margin, in_hoeffding_region, project_scaled_simplex, solve_h1,
    solve_h1_default, spreading_min_nodes, DEFAULT_EPS_HI, DEFAULT_EPS_LO,
};
use hetstore::{Allocation, SystemProfile};
use proptest::prelude::*;
use rand::Rng;

fn margin(p: &[f64], x: &[f64], c: f64) -> f64 {
    common::dot(p, x) - 1.0 - c * x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn margin_matches_grid_on_three_nodes() {
    let mut r = rng(1);
    for _ in 0..30 {
        let p = common::probs(&mut r, 3, 0.3, 0.99);
        let budget = r.gen_range(0.5..3.0);
        let c = r.gen_range(0.0..2.0);
        let profile = SystemProfile::new(p.clone(), budget).unwrap();
        let m = feasibility_margin(&profile, c).unwrap();
        assert!(m.converged);
        assert!((m.allocation.total() - budget).abs() <= 1e-9);

        let steps = 50;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let a = budget * i as f64 / steps as f64;
                let b = budget * j as f64 / steps as f64;
                best = best.max(margin(&p, &[a, b, budget - a - b], c));
            }
        }
        assert!(m.margin >= best - 1e-12, "{} < {best}", m.margin);
        // the grid resolution is budget/50; the concave objective is
        // Lipschitz with constant at most 1 + c
        assert!(m.margin - best <= (1.0 + c) * budget * 2.0 / steps as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_nearest_point(v in prop::collection::vec(-3.0f64..3.0, 1..12), total in 0.1f64..5.0) {
        let x = project_scaled_simplex(&v, total);
        prop_assert!(x.iter().all(|&a| a >= 0.0));
        prop_assert!((x.iter().sum::<f64>() - total).abs() <= 1e-9 * total.max(1.0));
        // variational inequality: (v - x)^T (y - x) <= 0 for vertices y
        let n = v.len();
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                let y = if i == k { total } else { 0.0 };
                s += (v[i] - x[i]) * (y - x[i]);
            }
            prop_assert!(s <= 1e-9);
        }
    }

    #[test]
    fn margin_is_concave_along_segments(p in prop::collection::vec(0.1f64..0.99, 2..8), c in 0.0f64..2.0, lam in 0.0f64..1.0) {
        let n = p.len();
        let total = 1.5;
        let a: Vec<f64> = (0..n).map(|i| if i == 0 { total } else { 0.0 }).collect();
        let b = vec![total / n as f64; n];
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
        let lhs = margin(&p, &mix, c);
        let rhs = lam * margin(&p, &a, c) + (1.0 - lam) * margin(&p, &b, c);
        prop_assert!(lhs >= rhs - 1e-12);
    }
}

#[test]
fn spreading_membership_matches_node_threshold() {
    let mut r = rng(2);
    let mut hits = 0;
    for _ in 0..500 {
        let n = r.gen_range(1..400);
        let p = common::probs(&mut r, n, 0.3, 0.99);
        let budget = r.gen_range(1.0..4.0f64).min(n as f64);
        let eps = (10f64).powf(r.gen_range(-12.0..-0.1));
        let profile = SystemProfile::new(p.clone(), budget).unwrap();
        let spread = Allocation::spread(&profile);
        let inside = in_hoeffding_region(&profile, &spread, eps).unwrap();
        let needed = spreading_min_nodes(mean(&p), budget, eps);
        let predicted = matches!(needed, Some(m) if n as f64 >= m);
        // skip draws sitting on the boundary to rounding precision
        if let Some(m) = needed {
            if ((n as f64) - m).abs() <= 1e-9 * m {
                continue;
            }
        }
        assert_eq!(inside, predicted, "n={n} needed={needed:?}");
        hits += inside as usize;
    }
    assert!(hits > 20);
}

#[test]
fn h1_beats_spreading_and_is_certified() {
    let mut r = rng(4);
    for _ in 0..20 {
        let p = common::probs(&mut r, 100, 0.5, 1.0);
        let profile = SystemProfile::new(p, 2.0).unwrap();
        let sol = solve_h1_default(&profile).unwrap();
        assert!(sol.certified && sol.converged && sol.monotone);
        assert!(sol.oracle_calls <= 1024);
        let eps_s = spreading_bound(&profile).unwrap();
        assert!(
            sol.epsilon_star <= eps_s * (1.0 + 1e-8),
            "{} > {eps_s}",
            sol.epsilon_star
        );
        // the returned allocation certifies eps*
        assert!(sol.margin > 0.0);
        assert!(sol.allocation.total() <= 2.0 * (1.0 + 1e-10));
        let h = hoeffding_bound(&profile, &sol.allocation).unwrap().unwrap();
        assert!(h <= sol.epsilon_star * (1.0 + 1e-8));
    }
}

#[test]
fn h1_non_increasing_in_budget() {
    let mut r = rng(5);
    for _ in 0..5 {
        let p = common::probs(&mut r, 50, 0.5, 1.0);
        let mut last = f64::INFINITY;
        for budget in [1.6, 1.8, 2.0, 2.2] {
            let profile = SystemProfile::new(p.clone(), budget).unwrap();
            let sol = solve_h1_default(&profile).unwrap();
            assert!(sol.log_epsilon_star <= last + 1e-8);
            last = sol.log_epsilon_star;
        }
    }
}

#[test]
fn h1_homogeneous_matches_spreading() {
    let profile = SystemProfile::new(vec![0.8; 40], 2.0).unwrap();
    let sol = solve_h1_default(&profile).unwrap();
    let eps_s = spreading_bound(&profile).unwrap();
    assert!((sol.log_epsilon_star - eps_s.ln()).abs() <= 1e-6);
}

#[test]
fn h1_uncertifiable_reports_one() {
    // T p_max < 1: no allocation is even reliable
    let profile = SystemProfile::new(vec![0.3, 0.4], 2.0).unwrap();
    let sol = solve_h1(&profile, DEFAULT_EPS_LO, DEFAULT_EPS_HI, 1e-9).unwrap();
    assert!(!sol.certified);
    assert_eq!(sol.epsilon_star, 1.0);
    assert_eq!(cone_coefficient(0.0), 0.0);
}
