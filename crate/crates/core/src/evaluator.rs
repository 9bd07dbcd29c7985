//! Failure probability `P[Z < 1]` with `Z = sum_i x_i Y_i`, `Y_i ~ Bernoulli(p_i)`.
//!
//! Three evaluators are provided:
//!
//! * exhaustive enumeration of survivor sets, exact for up to
//!   [`DEFAULT_ENUM_LIMIT`] nodes;
//! * a survivor-count dynamic program, exact for uniform allocations of
//!   any size;
//! * a seeded Monte Carlo estimator whose output depends only on
//!   `(seed, trials, profile, allocation)`, never on the thread count.
//!
//! Success is declared when the surviving mass reaches `1 - tie_eps`, so
//! allocations built to hit the threshold exactly are not undone by
//! rounding in the running sum.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Allocation, SystemProfile};

pub const DEFAULT_ENUM_LIMIT: usize = 25;
pub const DEFAULT_TIE_EPS: f64 = 1e-12;

/// Identifies the Monte Carlo stream layout. Changing either the generator
/// or the block size changes results, so both are part of the identifier.
pub const MC_RNG_ID: &str = "chacha8-seed_from_u64-stream_per_block-65536";
const MC_BLOCK: u64 = 1 << 16;
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub enum_limit: usize,
    pub tie_eps: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            enum_limit: DEFAULT_ENUM_LIMIT,
            tie_eps: DEFAULT_TIE_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    ExactEnum,
    ExactDp,
    MonteCarlo,
}

impl Method {
    pub fn is_exact(self) -> bool {
        !matches!(self, Method::MonteCarlo)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::ExactEnum => "exact-enum",
            Method::ExactDp => "exact-dp",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityEstimate {
    /// Failure probability.
    pub value: f64,
    pub method: Method,
    /// 95% normal-approximation half-width; zero for exact methods.
    pub half_width: f64,
    /// Number of Monte Carlo trials; zero for exact methods.
    pub trials: u64,
}

impl ReliabilityEstimate {
    fn exact(value: f64, method: Method) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            method,
            half_width: 0.0,
            trials: 0,
        }
    }

    pub fn success_prob(&self) -> f64 {
        1.0 - self.value
    }
}

/// Exact failure probability with default options.
pub fn exact_failure_prob(
    profile: &SystemProfile,
    allocation: &Allocation,
) -> Result<ReliabilityEstimate> {
    exact_failure_prob_with(profile, allocation, &EvalOptions::default())
}

/// Uniform allocations go through the count DP at any size; everything else
/// is enumerated, subject to `enum_limit`.
pub fn exact_failure_prob_with(
    profile: &SystemProfile,
    allocation: &Allocation,
    opts: &EvalOptions,
) -> Result<ReliabilityEstimate> {
    profile.check_len(allocation.len())?;
    if allocation.is_uniform() {
        return uniform_failure_prob(profile, allocation.amounts()[0], opts.tie_eps);
    }
    enumerate_failure_prob(profile, allocation, opts)
}

/// Enumerates survivor sets. Branches are cut as soon as their outcome is
/// decided: once the surviving mass reaches the threshold, or once even
/// every remaining node cannot lift it there.
pub fn enumerate_failure_prob(
    profile: &SystemProfile,
    allocation: &Allocation,
    opts: &EvalOptions,
) -> Result<ReliabilityEstimate> {
    profile.check_len(allocation.len())?;
    let n = profile.n();
    if n > opts.enum_limit {
        return Err(Error::EnumerationLimit {
            n,
            limit: opts.enum_limit,
        });
    }

    // Large amounts first so the sum crosses the threshold early.
    let x = allocation.amounts();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]));
    let amounts: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let probs: Vec<f64> = order.iter().map(|&i| profile.probs()[i]).collect();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + amounts[i];
    }

    let mut walk = Enumeration {
        amounts: &amounts,
        probs: &probs,
        suffix: &suffix,
        threshold: 1.0 - opts.tie_eps,
        fail: 0.0,
        success: 0.0,
    };
    walk.visit(0, 0.0, 1.0);
    debug_assert!(
        (walk.fail + walk.success - 1.0).abs() <= 1e-12,
        "survivor-set weights sum to {}",
        walk.fail + walk.success
    );
    Ok(ReliabilityEstimate::exact(walk.fail, Method::ExactEnum))
}

struct Enumeration<'a> {
    amounts: &'a [f64],
    probs: &'a [f64],
    suffix: &'a [f64],
    threshold: f64,
    fail: f64,
    success: f64,
}

impl Enumeration<'_> {
    fn visit(&mut self, i: usize, mass: f64, weight: f64) {
        if mass >= self.threshold {
            self.success += weight;
        } else if mass + self.suffix[i] < self.threshold {
            self.fail += weight;
        } else {
            let p = self.probs[i];
            self.visit(i + 1, mass + self.amounts[i], weight * p);
            self.visit(i + 1, mass, weight * (1.0 - p));
        }
    }
}

/// Every node holds `share`; the file is recovered when at least
/// `ceil((1 - tie_eps) / share)` nodes survive.
pub fn uniform_failure_prob(
    profile: &SystemProfile,
    share: f64,
    tie_eps: f64,
) -> Result<ReliabilityEstimate> {
    let n = profile.n();
    if !(share >= 0.0 && share.is_finite()) {
        return Err(Error::InvalidAmount {
            index: 0,
            value: share,
        });
    }
    let needed = if share > 0.0 {
        ((1.0 - tie_eps) / share).ceil()
    } else {
        f64::INFINITY
    };
    if needed <= 0.0 {
        return Ok(ReliabilityEstimate::exact(0.0, Method::ExactDp));
    }
    if needed > n as f64 {
        return Ok(ReliabilityEstimate::exact(1.0, Method::ExactDp));
    }
    let needed = needed as usize;
    let dist = survivor_count_distribution(profile.probs());
    let fail: f64 = dist[..needed].iter().sum();
    Ok(ReliabilityEstimate::exact(fail, Method::ExactDp))
}

/// Distribution of the number of successes among independent Bernoulli
/// trials with heterogeneous probabilities. `O(n^2)`.
pub fn survivor_count_distribution(probs: &[f64]) -> Vec<f64> {
    let mut dist = vec![0.0; probs.len() + 1];
    dist[0] = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        for j in (1..=k + 1).rev() {
            dist[j] = dist[j] * (1.0 - p) + dist[j - 1] * p;
        }
        dist[0] *= 1.0 - p;
    }
    dist
}

/// Seeded Monte Carlo estimate of the failure probability.
///
/// Trials are cut into fixed blocks of 65536; block `b` draws from ChaCha8
/// seeded with `seed` on stream `b`, and node `i` survives a trial when the
/// next 64-bit word falls below `p_i * 2^64`. Block counts are integers, so
/// the total does not depend on how blocks are scheduled across threads.
pub fn monte_carlo_failure_prob(
    profile: &SystemProfile,
    allocation: &Allocation,
    trials: u64,
    seed: u64,
) -> Result<ReliabilityEstimate> {
    monte_carlo_failure_prob_with(profile, allocation, trials, seed, DEFAULT_TIE_EPS)
}

pub fn monte_carlo_failure_prob_with(
    profile: &SystemProfile,
    allocation: &Allocation,
    trials: u64,
    seed: u64,
    tie_eps: f64,
) -> Result<ReliabilityEstimate> {
    profile.check_len(allocation.len())?;
    if trials == 0 {
        return Err(Error::ZeroTrials);
    }
    let cutoffs: Vec<u64> = profile
        .probs()
        .iter()
        .map(|&p| (p * 18_446_744_073_709_551_616.0) as u64)
        .collect();
    let amounts = allocation.amounts();
    let threshold = 1.0 - tie_eps;
    let blocks = trials.div_ceil(MC_BLOCK);

    let failures: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = MC_BLOCK.min(trials - b * MC_BLOCK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let mut failed = 0u64;
            for _ in 0..len {
                let mut mass = 0.0;
                for (&cut, &x) in cutoffs.iter().zip(amounts) {
                    if rng.next_u64() < cut {
                        mass += x;
                    }
                }
                if mass < threshold {
                    failed += 1;
                }
            }
            failed
        })
        .sum();

    let value = failures as f64 / trials as f64;
    let half_width = Z_95 * (value * (1.0 - value) / trials as f64).sqrt();
    Ok(ReliabilityEstimate {
        value,
        method: Method::MonteCarlo,
        half_width,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(p: &[f64], t: f64) -> SystemProfile {
        SystemProfile::new(p.to_vec(), t).unwrap()
    }

    fn alloc(x: &[f64]) -> Allocation {
        Allocation::custom(x.to_vec()).unwrap()
    }

    #[test]
    fn single_node() {
        let e = exact_failure_prob(&profile(&[0.9], 1.0), &alloc(&[1.0])).unwrap();
        assert!((e.value - 0.1).abs() < 1e-15);
        assert_eq!(e.half_width, 0.0);
        assert!(e.method.is_exact());
    }

    #[test]
    fn both_nodes_must_fail() {
        let p = profile(&[0.5, 0.5], 2.0);
        let e = exact_failure_prob(&p, &alloc(&[1.0, 1.0])).unwrap();
        assert!((e.value - 0.25).abs() < 1e-15);
        assert_eq!(e.method, Method::ExactDp);
        let e = enumerate_failure_prob(&p, &alloc(&[1.0, 1.0]), &EvalOptions::default()).unwrap();
        assert!((e.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn three_nodes_half_each() {
        // Needs two survivors out of three. Hand enumeration:
        // none survive: .1*.4*.3 = .012
        // one survives: .9*.4*.3 + .1*.6*.3 + .1*.4*.7 = .108 + .018 + .028 = .154
        let p = profile(&[0.9, 0.6, 0.7], 1.5);
        let x = alloc(&[0.5, 0.5, 0.5]);
        let dp = exact_failure_prob(&p, &x).unwrap();
        let en = enumerate_failure_prob(&p, &x, &EvalOptions::default()).unwrap();
        assert!((dp.value - 0.166).abs() < 1e-14);
        assert!((en.value - 0.166).abs() < 1e-14);
    }

    #[test]
    fn enumeration_limit_applies_to_non_uniform() {
        let p = profile(&[0.7; 30], 3.0);
        let mut x = vec![0.1; 30];
        x[0] = 0.2;
        assert_eq!(
            exact_failure_prob(&p, &alloc(&x)),
            Err(Error::EnumerationLimit { n: 30, limit: 25 })
        );
        // uniform goes through the DP regardless of size
        assert!(exact_failure_prob(&p, &alloc(&[0.1; 30])).is_ok());
    }

    #[test]
    fn uniform_edge_cases() {
        let p = profile(&[0.7; 4], 1.0);
        assert_eq!(
            exact_failure_prob(&p, &alloc(&[0.0; 4])).unwrap().value,
            1.0
        );
        // 4 * 0.2 < 1: can never recover
        assert_eq!(
            exact_failure_prob(&p, &alloc(&[0.2; 4])).unwrap().value,
            1.0
        );
        // one node suffices
        let e = exact_failure_prob(&p, &alloc(&[1.0; 4])).unwrap();
        assert!((e.value - 0.3f64.powi(4)).abs() < 1e-15);
    }

    #[test]
    fn count_distribution_sums_to_one() {
        let d = survivor_count_distribution(&[0.1, 0.5, 0.9, 0.3]);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((d[4] - 0.1 * 0.5 * 0.9 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_single_node() {
        let p = profile(&[0.9], 1.0);
        let e = monte_carlo_failure_prob(&p, &alloc(&[1.0]), 1_000_000, 7).unwrap();
        assert!((e.value - 0.1).abs() <= 3.0 * (0.09f64 / 1e6).sqrt());
        assert_eq!(e.trials, 1_000_000);
        assert_eq!(e.method, Method::MonteCarlo);
    }

    #[test]
    fn monte_carlo_two_nodes() {
        let p = profile(&[0.5, 0.5], 2.0);
        let e = monte_carlo_failure_prob(&p, &alloc(&[1.0, 1.0]), 1_000_000, 99).unwrap();
        assert!((e.value - 0.25).abs() <= 3.0 * (0.1875f64 / 1e6).sqrt());
        let hw = 1.96 * (e.value * (1.0 - e.value) / 1e6).sqrt();
        assert!((e.half_width - hw).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_rejects_zero_trials() {
        let p = profile(&[0.5], 1.0);
        assert_eq!(
            monte_carlo_failure_prob(&p, &alloc(&[1.0]), 0, 1),
            Err(Error::ZeroTrials)
        );
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let p = profile(&[0.6, 0.7, 0.8], 1.5);
        let x = alloc(&[0.4, 0.5, 0.6]);
        let a = monte_carlo_failure_prob(&p, &x, 200_001, 42).unwrap();
        let b = monte_carlo_failure_prob(&p, &x, 200_001, 42).unwrap();
        let c = monte_carlo_failure_prob(&p, &x, 200_001, 43).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }
}
