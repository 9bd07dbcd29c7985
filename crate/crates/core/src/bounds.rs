//! Analytic upper bounds on the failure probability.
//!
//! All bounds are evaluated in log space. A bound whose precondition fails,
//! or whose value would be at least one, is reported as `None` rather than
//! clamped to one.

use crate::chernoff::OddsProfile;
use crate::error::{Error, Result};
use crate::model::{dot, Allocation, SystemProfile};

pub const DEFAULT_T_HI: f64 = 1e3;
pub const DEFAULT_T_TOL: f64 = 1e-10;
const T_CAP: f64 = 1e9;
const T_GROWTH: f64 = 4.0;

/// `log(1 + e^z)` without overflow or loss of precision for large `|z|`.
pub(crate) fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn defined(value: f64) -> Option<f64> {
    (value < 1.0).then_some(value)
}

/// Hoeffding bound `exp(-2 (p^T x - 1)^2 / |x|^2)`, defined only for
/// strictly reliable allocations (`p^T x > 1`).
pub fn hoeffding_bound(profile: &SystemProfile, allocation: &Allocation) -> Result<Option<f64>> {
    let margin = allocation.expected_mass(profile)? - 1.0;
    if margin <= 0.0 {
        return Ok(None);
    }
    let sq = allocation.amounts().iter().map(|x| x * x).sum::<f64>();
    Ok(defined((-2.0 * margin * margin / sq).exp()))
}

/// `log g_t(x) = t + sum_i log(1 - p_i + p_i e^{-t x_i})`.
///
/// Each term is split as `log(1 - p_i) + log(1 + r_i e^{-t x_i})` with
/// `r_i = p_i / (1 - p_i)` and evaluated through a stable softplus, so the
/// result stays finite for very large `t`.
pub fn chernoff_log_bound(profile: &SystemProfile, allocation: &Allocation, t: f64) -> Result<f64> {
    profile.check_len(allocation.len())?;
    check_t_nonneg(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(log_bound_unchecked(
        profile.probs(),
        allocation.amounts(),
        t,
    ))
}

pub(crate) fn log_bound_unchecked(probs: &[f64], x: &[f64], t: f64) -> f64 {
    t + probs
        .iter()
        .zip(x)
        .map(|(&p, &xi)| (-p).ln_1p() + log1p_exp(log_odds(p) - t * xi))
        .sum::<f64>()
}

/// `d/dt log g_t(x) = 1 - sum_i x_i * sigmoid(log r_i - t x_i)`; equals
/// `1 - p^T x` at `t = 0` and increases towards one.
pub fn chernoff_log_bound_slope(
    profile: &SystemProfile,
    allocation: &Allocation,
    t: f64,
) -> Result<f64> {
    profile.check_len(allocation.len())?;
    check_t_nonneg(t)?;
    Ok(slope_unchecked(profile.probs(), allocation.amounts(), t))
}

fn slope_unchecked(probs: &[f64], x: &[f64], t: f64) -> f64 {
    1.0 - probs
        .iter()
        .zip(x)
        .map(|(&p, &xi)| xi * sigmoid(log_odds(p) - t * xi))
        .sum::<f64>()
}

pub(crate) fn log_odds(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn check_t_nonneg(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidT {
            value: t,
            requirement: "finite and non-negative",
        });
    }
    Ok(())
}

/// Hoeffding bound for maximal spreading, `exp(-2 n (p_bar - 1/T)^2)`,
/// defined when `T > 1/p_bar`.
pub fn spreading_bound(profile: &SystemProfile) -> Option<f64> {
    let gap = profile.mean_prob() - 1.0 / profile.budget();
    if gap <= 0.0 {
        return None;
    }
    defined((-2.0 * profile.n() as f64 * gap * gap).exp())
}

/// Hoeffding bound for the log-odds-proportional allocation,
/// `exp(-2 n (E[p log r] - E[log r]/T)^2 / E[log^2 r])`.
///
/// Requires every `p_i > 1/2` and `T > E[log r] / E[p log r]`.
pub fn closed_form_bound(profile: &SystemProfile) -> Option<f64> {
    if profile.probs().iter().any(|&p| p <= 0.5) {
        return None;
    }
    let odds = OddsProfile::new(profile);
    let (e_log, e_plog, e_log2) = (odds.mean_log(), odds.mean_p_log(), odds.mean_log_sq());
    if profile.budget() <= e_log / e_plog {
        return None;
    }
    let gap = e_plog - e_log / profile.budget();
    defined((-2.0 * profile.n() as f64 * gap * gap / e_log2).exp())
}

/// Result of minimizing `log g_t(x)` over `t >= 0` for a fixed allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TMinimum {
    pub t: f64,
    pub log_bound: f64,
    /// The allocation is not strictly reliable; the minimum sits at `t = 0`
    /// where the bound is the trivial one.
    pub vacuous: bool,
    pub iterations: usize,
}

impl TMinimum {
    pub fn bound(&self) -> Option<f64> {
        if self.vacuous {
            None
        } else {
            defined(self.log_bound.exp())
        }
    }
}

/// Minimizes the convex map `t -> log g_t(x)` by bisection on its slope.
///
/// The search starts on `[0, t_hi]` and grows the upper end by a factor of
/// four (up to `1e9`) while the slope there is still negative.
pub fn minimize_bound_over_t(
    profile: &SystemProfile,
    allocation: &Allocation,
    t_hi: f64,
    tol: f64,
) -> Result<TMinimum> {
    profile.check_len(allocation.len())?;
    if !(t_hi > 0.0 && t_hi.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "t_hi",
            reason: format!("must be positive and finite, got {t_hi}"),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must be positive, got {tol}"),
        });
    }
    let probs = profile.probs();
    let x = allocation.amounts();
    if 1.0 - dot(probs, x) >= 0.0 {
        return Ok(TMinimum {
            t: 0.0,
            log_bound: 0.0,
            vacuous: true,
            iterations: 0,
        });
    }

    let mut lo = 0.0;
    let mut hi = t_hi;
    let mut iterations = 0;
    while slope_unchecked(probs, x, hi) < 0.0 && hi < T_CAP {
        lo = hi;
        hi = (hi * T_GROWTH).min(T_CAP);
        iterations += 1;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope_unchecked(probs, x, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let t = 0.5 * (lo + hi);
    Ok(TMinimum {
        t,
        log_bound: log_bound_unchecked(probs, x, t),
        vacuous: false,
        iterations,
    })
}

/// All analytic bounds for one allocation. The spreading and closed-form
/// entries depend only on the profile.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub hoeffding: Option<f64>,
    pub chernoff_log: f64,
    pub chernoff_t: f64,
    pub spreading: Option<f64>,
    pub closed_form: Option<f64>,
}

impl BoundReport {
    pub fn chernoff(&self) -> Option<f64> {
        if self.chernoff_t == 0.0 {
            None
        } else {
            defined(self.chernoff_log.exp())
        }
    }
}

pub fn bound_report(profile: &SystemProfile, allocation: &Allocation) -> Result<BoundReport> {
    let tmin = minimize_bound_over_t(profile, allocation, DEFAULT_T_HI, DEFAULT_T_TOL)?;
    Ok(BoundReport {
        hoeffding: hoeffding_bound(profile, allocation)?,
        chernoff_log: tmin.log_bound,
        chernoff_t: tmin.t,
        spreading: spreading_bound(profile),
        closed_form: closed_form_bound(profile),
    })
}
