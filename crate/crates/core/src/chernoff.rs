//! Chernoff relaxation of the allocation problem.
//!
//! For a fixed `t > 0` the relaxed problem
//!
//! ```text
//! minimize   t + sum_i log(1 + r_i e^{-t x_i})
//! subject to sum_i x_i = T,  0 <= x_i <= 1
//! ```
//!
//! with odds `r_i = p_i / (1 - p_i)` is convex and separable. Its KKT
//! conditions give every coordinate as a clamped function of one multiplier
//! `lambda`:
//!
//! ```text
//! x_i(lambda) = clamp( (1/t) log(r_i t / lambda - r_i), 0, 1 )
//! ```
//!
//! which is continuous and non-increasing in `lambda`, so `lambda*` is found
//! by bisection. The search runs over `log lambda` because for large `t` the
//! multiplier is far below the smallest normal double.

use crate::bounds::{log1p_exp, log_bound_unchecked, log_odds, minimize_bound_over_t, sigmoid};
use crate::bounds::{TMinimum, DEFAULT_T_HI, DEFAULT_T_TOL};
use crate::error::{Error, Result};
use crate::model::{reduce_to_unit_box, Allocation, Strategy, SystemProfile};

/// Budget residual accepted from the multiplier search, relative to `T`.
const LAMBDA_SUM_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 400;
const MAX_NEWTON: usize = 8;
const MAX_T_PERTURBATIONS: usize = 4;

pub const DEFAULT_MAX_ROUNDS: usize = 50;
pub const DEFAULT_ROUND_TOL: f64 = 1e-8;

/// Odds ratios of a profile and the sample averages built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct OddsProfile {
    probs: Vec<f64>,
    odds: Vec<f64>,
    log_odds: Vec<f64>,
}

impl OddsProfile {
    pub fn new(profile: &SystemProfile) -> Self {
        let probs = profile.probs().to_vec();
        let odds = probs.iter().map(|&p| p / (1.0 - p)).collect();
        let log_odds = probs.iter().map(|&p| log_odds(p)).collect();
        Self {
            probs,
            odds,
            log_odds,
        }
    }

    pub fn odds(&self) -> &[f64] {
        &self.odds
    }

    pub fn log_odds(&self) -> &[f64] {
        &self.log_odds
    }

    pub fn max_odds(&self) -> f64 {
        self.odds.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_log_odds(&self) -> f64 {
        self.log_odds
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum_log(&self) -> f64 {
        self.log_odds.iter().sum()
    }

    /// `E[log r]`
    pub fn mean_log(&self) -> f64 {
        self.sum_log() / self.log_odds.len() as f64
    }

    /// `E[p log r]`
    pub fn mean_p_log(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_odds)
            .map(|(p, l)| p * l)
            .sum::<f64>()
            / self.log_odds.len() as f64
    }

    /// `E[log^2 r]`
    pub fn mean_log_sq(&self) -> f64 {
        self.log_odds.iter().map(|l| l * l).sum::<f64>() / self.log_odds.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2Solution {
    pub allocation: Allocation,
    /// May underflow to zero for large `t`; see `log_lambda_star`.
    pub lambda_star: f64,
    pub log_lambda_star: f64,
    pub t: f64,
    /// `t + sum_i log(1 + r_i e^{-t x_i})`
    pub objective: f64,
    /// `log g_t(x)`, the objective shifted by `sum_i log(1 - p_i)`.
    pub log_bound: f64,
    /// Largest violation of stationarity or multiplier sign.
    pub kkt_residual: f64,
    pub budget_residual: f64,
    /// Multipliers of `x_i >= 0`.
    pub lower_multipliers: Vec<f64>,
    /// Multipliers of `x_i <= 1`.
    pub upper_multipliers: Vec<f64>,
    pub iterations: usize,
    /// The requested `t` had to be nudged to reach the budget.
    pub t_perturbed: bool,
}

/// Solves the relaxed problem at fixed `t`. Probabilities below one half
/// are fine here; the branch formulas hold for any positive odds.
pub fn solve_r2_fixed_t(profile: &SystemProfile, t: f64) -> Result<R2Solution> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidT {
            value: t,
            requirement: "positive and finite",
        });
    }
    let budget = profile.budget();
    let n = profile.n();
    if budget > n as f64 {
        return Err(Error::BudgetExceedsNodes { budget, n });
    }
    let log_r: Vec<f64> = profile.probs().iter().map(|&p| log_odds(p)).collect();

    let mut t_run = t;
    let mut perturbed = false;
    for _ in 0..=MAX_T_PERTURBATIONS {
        if let Some(sol) = search_lambda(profile, &log_r, t_run) {
            return Ok(R2Solution {
                t_perturbed: perturbed,
                ..sol
            });
        }
        t_run *= 1.0 + 1e-6;
        perturbed = true;
    }
    // Unreachable in practice: the coordinate sum is continuous in lambda.
    Err(Error::InvalidParameter {
        name: "t",
        reason: format!("budget {budget} not attainable at t = {t}"),
    })
}

/// `x_i` as a function of `log lambda`.
fn coordinate(log_r: f64, t: f64, log_t: f64, log_lambda: f64) -> f64 {
    // log(t/lambda - 1) = log t - log lambda + log(1 - lambda/t)
    let ratio = (log_lambda - log_t).exp();
    if ratio >= 1.0 {
        return 0.0;
    }
    let inner = log_t - log_lambda + (-ratio).ln_1p();
    ((log_r + inner) / t).clamp(0.0, 1.0)
}

fn fill(log_r: &[f64], t: f64, log_t: f64, log_lambda: f64, x: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for (xi, &lr) in x.iter_mut().zip(log_r) {
        *xi = coordinate(lr, t, log_t, log_lambda);
        sum += *xi;
    }
    sum
}

fn search_lambda(profile: &SystemProfile, log_r: &[f64], t: f64) -> Option<R2Solution> {
    let budget = profile.budget();
    let n = log_r.len();
    let log_t = t.ln();
    let tol = LAMBDA_SUM_TOL * budget;

    // Above `hi` every coordinate is 0; below `lo` every coordinate is 1.
    // x_i = 0 once lambda >= t p_i, x_i = 1 once lambda <= r_i t / (e^t + r_i).
    let mut hi = log_r
        .iter()
        .map(|&lr| log_t - log1p_exp(-lr))
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = log_r
        .iter()
        .map(|&lr| lr + log_t - t - log1p_exp(lr - t))
        .fold(f64::INFINITY, f64::min);
    // Widen slightly so the endpoints are strictly saturated.
    lo -= 1e-9 * lo.abs().max(1.0);
    hi += 1e-9 * hi.abs().max(1.0);

    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut log_lambda = 0.5 * (lo + hi);
    let mut sum = fill(log_r, t, log_t, log_lambda, &mut x);
    while (sum - budget).abs() > tol && iterations < MAX_BISECTIONS {
        if sum > budget {
            lo = log_lambda;
        } else {
            hi = log_lambda;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        log_lambda = mid;
        sum = fill(log_r, t, log_t, log_lambda, &mut x);
        iterations += 1;
    }

    // Newton polish on log lambda over the interior coordinates.
    for _ in 0..MAX_NEWTON {
        let resid = sum - budget;
        if resid.abs() <= 1e-14 * budget.max(1.0) {
            break;
        }
        let ratio = (log_lambda - log_t).exp();
        let interior = x.iter().filter(|&&v| v > 0.0 && v < 1.0).count();
        if interior == 0 {
            break;
        }
        // d x_i / d log lambda = -(1/t) / (1 - lambda/t) on interior coordinates
        let slope = -(interior as f64) / (t * (1.0 - ratio));
        let step = log_lambda - resid / slope;
        let mut trial = vec![0.0; n];
        let trial_sum = fill(log_r, t, log_t, step, &mut trial);
        if (trial_sum - budget).abs() < resid.abs() {
            log_lambda = step;
            x = trial;
            sum = trial_sum;
            iterations += 1;
        } else {
            break;
        }
    }

    if (sum - budget).abs() > tol {
        return None;
    }

    let lambda = log_lambda.exp();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut kkt = 0.0f64;
    for i in 0..n {
        let lr = log_r[i];
        if x[i] <= 0.0 {
            // lambda - r t / (1 + r) = lambda - t p
            lower[i] = lambda - t * sigmoid(lr);
            kkt = kkt.max(-lower[i]);
        } else if x[i] >= 1.0 {
            upper[i] = t * sigmoid(lr - t) - lambda;
            kkt = kkt.max(-upper[i]);
        } else {
            let grad = t * sigmoid(lr - t * x[i]);
            kkt = kkt.max((grad - lambda).abs());
        }
    }
    let lower = lower.into_iter().map(|u| u.max(0.0)).collect();
    let upper = upper.into_iter().map(|v| v.max(0.0)).collect();

    let objective = t + x
        .iter()
        .zip(log_r)
        .map(|(&xi, &lr)| log1p_exp(lr - t * xi))
        .sum::<f64>();
    let log_bound = log_bound_unchecked(profile.probs(), &x, t);
    Some(R2Solution {
        allocation: Allocation::from_raw(x, Strategy::ChernoffIterative),
        lambda_star: lambda,
        log_lambda_star: log_lambda,
        t,
        objective,
        log_bound,
        kkt_residual: kkt,
        budget_residual: (sum - budget).abs(),
        lower_multipliers: lower,
        upper_multipliers: upper,
        iterations,
        t_perturbed: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormAllocation {
    pub allocation: Allocation,
    /// `T < n E[log r] / log r_max`, under which the allocation solves the
    /// relaxation at `t = n E[log r] / T` and needs no clipping.
    pub optimality_condition: bool,
    /// Some entry exceeded one and the allocation went through
    /// [`reduce_to_unit_box`].
    pub clipped: bool,
}

/// `x_i = T log r_i / sum_j log r_j`, defined when every `p_i > 1/2`.
pub fn closed_form_allocation(profile: &SystemProfile) -> Result<ClosedFormAllocation> {
    if let Some((index, &value)) = profile.probs().iter().enumerate().find(|(_, &p)| p <= 0.5) {
        return Err(Error::ClosedFormUndefined { index, value });
    }
    let odds = OddsProfile::new(profile);
    let sum_log = odds.sum_log();
    let budget = profile.budget();
    let x: Vec<f64> = odds
        .log_odds()
        .iter()
        .map(|&l| budget * l / sum_log)
        .collect();
    let optimality_condition = budget < sum_log / odds.max_log_odds();
    let allocation = Allocation::from_raw(x, Strategy::ChernoffClosedForm);
    if allocation.amounts().iter().any(|&v| v > 1.0) {
        return Ok(ClosedFormAllocation {
            allocation: reduce_to_unit_box(profile, &allocation)?,
            optimality_condition,
            clipped: true,
        });
    }
    Ok(ClosedFormAllocation {
        allocation,
        optimality_condition,
        clipped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultT {
    pub t: f64,
    /// `sum log r_i <= 0`; `t = 1` was used instead.
    pub fallback: bool,
}

/// `t0 = (1/T) sum_i log r_i`, or `1` when that is not positive.
pub fn default_t(profile: &SystemProfile) -> DefaultT {
    let sum_log = OddsProfile::new(profile).sum_log();
    if sum_log > 0.0 {
        DefaultT {
            t: sum_log / profile.budget(),
            fallback: false,
        }
    } else {
        DefaultT {
            t: 1.0,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeSolution {
    /// Last x-step; its allocation is optimal for `solution.t`.
    pub solution: R2Solution,
    /// `t` minimizing the bound for the final allocation.
    pub best_t: TMinimum,
    pub start_t: DefaultT,
    pub rounds: usize,
    /// `log g_t(x)` after every half-step, starting with the first x-step.
    pub history: Vec<f64>,
    pub monotone: bool,
    pub converged: bool,
}

impl IterativeSolution {
    pub fn bound(&self) -> Option<f64> {
        self.best_t.bound()
    }
}

/// Alternates an exact x-step at fixed `t` with an exact t-step at fixed x,
/// starting from the x-step at [`default_t`]. Both steps minimize the same
/// bound, so the objective never increases; the fixed point may be local.
pub fn iterative_chernoff(
    profile: &SystemProfile,
    max_rounds: usize,
    tol: f64,
) -> Result<IterativeSolution> {
    let start_t = default_t(profile);
    let mut sol = solve_r2_fixed_t(profile, start_t.t)?;
    let mut history = vec![sol.log_bound];
    let mut rounds = 0;
    let mut converged = false;

    while rounds < max_rounds {
        let tm = minimize_bound_over_t(profile, &sol.allocation, DEFAULT_T_HI, DEFAULT_T_TOL)?;
        if tm.vacuous {
            // Not reliable at any t; nothing left to tune.
            converged = true;
            break;
        }
        history.push(tm.log_bound);
        let next = solve_r2_fixed_t(profile, tm.t)?;
        history.push(next.log_bound);
        rounds += 1;
        let decrease = sol.log_bound - next.log_bound;
        let scale = sol.log_bound.abs().max(1.0);
        sol = next;
        if decrease <= tol * scale {
            converged = true;
            break;
        }
    }

    let monotone = history
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
    debug_assert!(monotone, "bound increased during alternation: {history:?}");
    let best_t = minimize_bound_over_t(profile, &sol.allocation, DEFAULT_T_HI, DEFAULT_T_TOL)?;
    Ok(IterativeSolution {
        solution: sol,
        best_t,
        start_t,
        rounds,
        history,
        monotone,
        converged,
    })
}
