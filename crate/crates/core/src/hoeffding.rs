//! Hoeffding epsilon-optimal allocations.
//!
//! An allocation certifies `P_e <= eps` through Hoeffding's inequality when
//!
//! ```text
//! c(eps) |x|_2 <= p^T x - 1,   c(eps) = sqrt(ln(1/eps) / 2),   p^T x > 1.
//! ```
//!
//! The set of such allocations within the budget is convex. Whether it is
//! empty is decided by maximizing the concave margin
//! `f(x) = p^T x - 1 - c |x|_2` over the face `{x >= 0, sum x = T}`; the
//! smallest certifiable `eps` is then found by bisection on `log eps`.

use crate::error::{Error, Result};
use crate::model::{dot, Allocation, Strategy, SystemProfile};

pub const DEFAULT_EPS_LO: f64 = 1e-300;
pub const DEFAULT_EPS_HI: f64 = 1.0 - 1e-9;
pub const DEFAULT_TOL_EPS: f64 = 1e-9;
/// Slack on the cone constraint accepted for a returned allocation.
pub const TOL_MARGIN: f64 = 1e-8;

const PGA_MAX_ITER: usize = 10_000;
const PGA_GRAD_TOL: f64 = 1e-9;
const CERT_TOL: f64 = 1e-12;
/// Iterations without a meaningful gain after which ascent has stalled at
/// working precision.
const PGA_STALL_WINDOW: usize = 50;

/// `c(eps) = sqrt(ln(1/eps) / 2)` from `ln eps`.
pub fn cone_coefficient(log_eps: f64) -> f64 {
    (-log_eps / 2.0).max(0.0).sqrt()
}

/// Membership in the Hoeffding region for a given `eps`.
pub fn in_hoeffding_region(
    profile: &SystemProfile,
    allocation: &Allocation,
    eps: f64,
) -> Result<bool> {
    let mass = allocation.expected_mass(profile)?;
    let c = cone_coefficient(eps.ln());
    Ok(mass > 1.0
        && allocation.within_budget(profile.budget())
        && c * allocation.norm() <= mass - 1.0)
}

/// Smallest `n` for which maximal spreading certifies `eps`, given the mean
/// access probability. `None` unless `T > 1/p_bar`.
pub fn spreading_min_nodes(mean_prob: f64, budget: f64, eps: f64) -> Option<f64> {
    let gap = mean_prob - 1.0 / budget;
    (gap > 0.0).then(|| (1.0 / eps).ln() / (2.0 * gap * gap))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginResult {
    pub margin: f64,
    pub allocation: Allocation,
    pub iterations: usize,
    /// Either the projected gradient vanished or the iterate matched the
    /// KKT candidate.
    pub converged: bool,
    /// `f(kkt candidate) - f(projected gradient iterate)`.
    pub kkt_gap: f64,
}

fn margin_of(probs: &[f64], x: &[f64], c: f64) -> f64 {
    dot(probs, x) - 1.0 - c * x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
pub fn project_scaled_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let cand = (cumsum - total) / (k + 1) as f64;
        if uk - cand > 0.0 {
            theta = cand;
        }
    }
    v.iter().map(|&vi| (vi - theta).max(0.0)).collect()
}

/// Maximizer from the stationarity structure `x_i ∝ max(p_i - mu, 0)` with
/// `|(p - mu)_+|_2 = c`.
fn kkt_candidate(probs: &[f64], total: f64, c: f64) -> Vec<f64> {
    let mut sorted = probs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut mu = sorted[sorted.len() - 1] - c;
    let (mut s, mut q) = (0.0, 0.0);
    for k in 1..=sorted.len() {
        s += sorted[k - 1];
        q += sorted[k - 1] * sorted[k - 1];
        let kf = k as f64;
        // k mu^2 - 2 s mu + q - c^2 = 0, smaller root
        let disc = (s * s - kf * (q - c * c)).max(0.0);
        let root = (s - disc.sqrt()) / kf;
        if k == sorted.len() || root >= sorted[k] {
            mu = root;
            break;
        }
    }
    let w: Vec<f64> = probs.iter().map(|&p| (p - mu).max(0.0)).collect();
    let sw: f64 = w.iter().sum();
    w.iter().map(|&wi| total * wi / sw).collect()
}

/// Best of the uniform allocation and the `k` most reliable nodes sharing
/// the budget equally, `k = 1..n`.
fn best_initializer(profile: &SystemProfile, c: f64) -> Vec<f64> {
    let n = profile.n();
    let total = profile.budget();
    let order = profile.order_by_reliability();
    let mut best_k = n;
    let mut best = f64::NEG_INFINITY;
    let mut psum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        psum += profile.probs()[i];
        let kf = (k + 1) as f64;
        let value = total * psum / kf - 1.0 - c * total / kf.sqrt();
        if value > best {
            best = value;
            best_k = k + 1;
        }
    }
    let mut x = vec![0.0; n];
    for &i in &order[..best_k] {
        x[i] = total / best_k as f64;
    }
    x
}

struct Ascent {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Projected gradient ascent with backtracking on the margin. Stops when the
/// gradient mapping vanishes, when `target` (if any) is reached, or when the
/// value has not moved beyond rounding for a while.
fn ascend(probs: &[f64], total: f64, c: f64, mut x: Vec<f64>, target: Option<f64>) -> Ascent {
    let reached = |v: f64| target.is_some_and(|t| v >= t - CERT_TOL);
    let mut value = margin_of(probs, &x, c);
    let pnorm = probs.iter().map(|p| p * p).sum::<f64>().sqrt();
    let mut step = 1.0 / pnorm;
    let mut iterations = 0;
    let mut converged = reached(value);
    let mut anchor = value;
    let mut since_gain = 0;
    while !converged && iterations < PGA_MAX_ITER {
        iterations += 1;
        since_gain += 1;
        if value > anchor + 1e-14 * anchor.abs().max(1.0) {
            anchor = value;
            since_gain = 0;
        } else if since_gain >= PGA_STALL_WINDOW {
            converged = true;
            break;
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let grad: Vec<f64> = probs
            .iter()
            .zip(&x)
            .map(|(&p, &xi)| p - c * xi / norm)
            .collect();
        loop {
            let moved: Vec<f64> = x.iter().zip(&grad).map(|(xi, g)| xi + step * g).collect();
            let cand = project_scaled_simplex(&moved, total);
            let diff: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dist_sq: f64 = diff.iter().map(|d| d * d).sum();
            let cand_value = margin_of(probs, &cand, c);
            if cand_value >= value + dot(&grad, &diff) - dist_sq / (2.0 * step) - 1e-15 {
                let mapping_norm = dist_sq.sqrt() / step;
                x = cand;
                value = cand_value;
                step *= 2.0;
                converged = mapping_norm <= PGA_GRAD_TOL || reached(value);
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no ascent direction left at working precision
                converged = true;
                break;
            }
        }
    }
    Ascent {
        x,
        value,
        iterations,
        converged,
    }
}

/// Maximizes `p^T x - 1 - c |x|_2` over `{x >= 0, sum x = T}`.
///
/// Projected gradient ascent with backtracking runs from the best simple
/// initializer and stops once the projected gradient vanishes or the
/// iterate matches the closed-form KKT point. The better of the two is
/// returned.
pub fn feasibility_margin(profile: &SystemProfile, c: f64) -> Result<MarginResult> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("must be finite and non-negative, got {c}"),
        });
    }
    let probs = profile.probs();
    let total = profile.budget();
    if c == 0.0 {
        let mut x = vec![0.0; profile.n()];
        x[profile.argmax_prob()] = total;
        return Ok(MarginResult {
            margin: total * profile.max_prob() - 1.0,
            allocation: Allocation::from_raw(x, Strategy::Hoeffding),
            iterations: 0,
            converged: true,
            kkt_gap: 0.0,
        });
    }

    let kkt = kkt_candidate(probs, total, c);
    let kkt_value = margin_of(probs, &kkt, c);
    let ascent = ascend(
        probs,
        total,
        c,
        best_initializer(profile, c),
        Some(kkt_value),
    );
    let (x, value, iterations, converged) =
        (ascent.x, ascent.value, ascent.iterations, ascent.converged);

    let kkt_gap = kkt_value - value;
    let (allocation, margin) = if kkt_value > value {
        (kkt, kkt_value)
    } else {
        (x, value)
    };
    Ok(MarginResult {
        margin,
        allocation: Allocation::from_raw(allocation, Strategy::Hoeffding),
        iterations,
        converged,
        kkt_gap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoeffdingSolution {
    pub epsilon_star: f64,
    pub log_epsilon_star: f64,
    pub allocation: Allocation,
    /// `p^T x - 1 - c(eps*) |x|_2` at the returned allocation.
    pub margin: f64,
    pub bisection_steps: usize,
    pub oracle_calls: usize,
    pub inner_iterations: usize,
    /// False when not even `eps_hi` could be certified; `epsilon_star` is
    /// then one.
    pub certified: bool,
    /// Every oracle call converged.
    pub converged: bool,
    /// Feasibility was monotone in `eps` across all probed values.
    pub monotone: bool,
}

/// Smallest `eps` in `[eps_lo, eps_hi]` (to `tol_eps` in `ln eps`) for which
/// some allocation within budget has a strictly positive margin.
pub fn solve_h1(
    profile: &SystemProfile,
    eps_lo: f64,
    eps_hi: f64,
    tol_eps: f64,
) -> Result<HoeffdingSolution> {
    if !(eps_lo > 0.0 && eps_lo < eps_hi && eps_hi < 1.0) {
        return Err(Error::InvalidBracket {
            lo: eps_lo,
            hi: eps_hi,
        });
    }
    if !(tol_eps > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol_eps",
            reason: format!("must be positive, got {tol_eps}"),
        });
    }

    let mut calls = 0;
    let mut inner = 0;
    let mut all_converged = true;
    let mut probes: Vec<(f64, bool)> = Vec::new();
    let mut probe = |log_eps: f64| -> Result<MarginResult> {
        let r = feasibility_margin(profile, cone_coefficient(log_eps))?;
        calls += 1;
        inner += r.iterations;
        all_converged &= r.converged;
        probes.push((log_eps, r.margin > 0.0));
        Ok(r)
    };

    let mut hi = eps_hi.ln();
    let mut lo = eps_lo.ln();
    let top = probe(hi)?;
    if top.margin <= 0.0 {
        return Ok(HoeffdingSolution {
            epsilon_star: 1.0,
            log_epsilon_star: 0.0,
            allocation: top.allocation,
            margin: top.margin,
            bisection_steps: 0,
            oracle_calls: calls,
            inner_iterations: inner,
            certified: false,
            converged: all_converged,
            monotone: true,
        });
    }
    let bottom = probe(lo)?;
    let mut best = if bottom.margin > 0.0 {
        hi = lo;
        bottom
    } else {
        top
    };

    let mut steps = 0;
    while hi - lo > tol_eps {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = probe(mid)?;
        steps += 1;
        if r.margin > 0.0 {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }

    let lowest_feasible = probes
        .iter()
        .filter(|p| p.1)
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min);
    let monotone = probes.iter().all(|&(e, ok)| ok || e < lowest_feasible);
    debug_assert!(monotone, "feasibility not monotone in eps: {probes:?}");

    Ok(HoeffdingSolution {
        epsilon_star: hi.exp(),
        log_epsilon_star: hi,
        allocation: best.allocation,
        margin: best.margin,
        bisection_steps: steps,
        oracle_calls: calls,
        inner_iterations: inner,
        certified: true,
        converged: all_converged,
        monotone,
    })
}

/// [`solve_h1`] with the default bracket and tolerance.
pub fn solve_h1_default(profile: &SystemProfile) -> Result<HoeffdingSolution> {
    solve_h1(profile, DEFAULT_EPS_LO, DEFAULT_EPS_HI, DEFAULT_TOL_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(p: &[f64], t: f64) -> SystemProfile {
        SystemProfile::new(p.to_vec(), t).unwrap()
    }

    #[test]
    fn zero_coefficient_is_linear() {
        let p = profile(&[0.6, 0.9, 0.9, 0.3], 2.0);
        let r = feasibility_margin(&p, 0.0).unwrap();
        assert!((r.margin - (2.0 * 0.9 - 1.0)).abs() < 1e-15);
        assert_eq!(r.allocation.amounts(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn homogeneous_is_uniform() {
        let p = profile(&[0.8; 9], 2.0);
        for c in [0.1, 0.5, 1.0, 3.0] {
            let r = feasibility_margin(&p, c).unwrap();
            let want = 0.8 * 2.0 - 1.0 - c * 2.0 / 3.0;
            assert!((r.margin - want).abs() < 1e-6, "c={c}");
            for &x in r.allocation.amounts() {
                assert!((x - 2.0 / 9.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_properties() {
        let v = [0.3, -1.0, 2.0, 0.7];
        let x = project_scaled_simplex(&v, 1.5);
        assert!((x.iter().sum::<f64>() - 1.5).abs() < 1e-12);
        assert!(x.iter().all(|&xi| xi >= 0.0));
        // already on the face
        let y = project_scaled_simplex(&[0.5, 0.5, 0.5], 1.5);
        for yi in y {
            assert!((yi - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_ascent_agrees_with_kkt_point() {
        let p = profile(&[0.55, 0.6, 0.7, 0.8, 0.95, 0.9, 0.65], 2.5);
        let kkt = kkt_candidate(p.probs(), 2.5, 0.4);
        let r = feasibility_margin(&p, 0.4).unwrap();
        assert!(r.converged);
        assert!(r.kkt_gap.abs() < 1e-9, "gap {}", r.kkt_gap);
        assert!((margin_of(p.probs(), &kkt, 0.4) - r.margin).abs() < 1e-9);
    }

    #[test]
    fn gradient_ascent_alone_reaches_kkt_value() {
        let p = profile(&[0.55, 0.6, 0.7, 0.8, 0.95, 0.9, 0.65], 2.5);
        for c in [0.2, 0.4, 1.0] {
            let kkt = kkt_candidate(p.probs(), 2.5, c);
            let x0 = vec![2.5 / 7.0; 7];
            let a = ascend(p.probs(), 2.5, c, x0, None);
            assert!(a.converged, "c={c}");
            assert!(a.iterations < PGA_MAX_ITER);
            assert!(
                (a.value - margin_of(p.probs(), &kkt, c)).abs() < 1e-9,
                "c={c}"
            );
            for (xi, ki) in a.x.iter().zip(&kkt) {
                assert!((xi - ki).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn invalid_bracket() {
        let p = profile(&[0.9], 2.0);
        assert!(matches!(
            solve_h1(&p, 0.5, 0.1, 1e-9),
            Err(Error::InvalidBracket { .. })
        ));
        assert!(matches!(
            solve_h1(&p, 0.0, 0.5, 1e-9),
            Err(Error::InvalidBracket { .. })
        ));
        assert!(matches!(
            solve_h1(&p, 0.1, 1.0, 1e-9),
            Err(Error::InvalidBracket { .. })
        ));
    }

    #[test]
    fn outside_markov_region_not_certified() {
        let p = profile(&[0.6, 0.7, 0.5], 1.4);
        let s = solve_h1_default(&p).unwrap();
        assert!(!s.certified);
        assert_eq!(s.epsilon_star, 1.0);
    }

    #[test]
    fn certificate_consistency() {
        let p = profile(&[0.6, 0.95, 0.8, 0.7, 0.85], 2.0);
        let s = solve_h1_default(&p).unwrap();
        assert!(s.certified && s.monotone && s.converged);
        let h = crate::bounds::hoeffding_bound(&p, &s.allocation)
            .unwrap()
            .unwrap();
        assert!(h.ln() <= s.log_epsilon_star + 1e-10);
        let c = cone_coefficient(s.log_epsilon_star);
        let mass = s.allocation.expected_mass(&p).unwrap();
        assert!(c * s.allocation.norm() <= mass - 1.0 + TOL_MARGIN);
    }

    #[test]
    fn spreading_node_count() {
        let n_eps = spreading_min_nodes(0.75, 2.0, 1e-6).unwrap();
        assert!((n_eps - (1e6f64).ln() / (2.0 * 0.0625)).abs() < 1e-12);
        assert_eq!(spreading_min_nodes(0.5, 2.0, 1e-6), None);
    }
}
