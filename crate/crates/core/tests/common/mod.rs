//! Independent oracles shared by the integration tests. Nothing here calls
//! into the evaluator or the solvers.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TIE: f64 = 1e-12;

/// Plain walk over all `2^n` survivor sets.
pub struct BruteForce {
    /// `P[Z < 1 - TIE]`
    pub fail_strict: f64,
    /// `P[Z <= 1 + TIE]`
    pub fail_inclusive: f64,
    pub total_weight: f64,
}

pub fn brute_force(p: &[f64], x: &[f64]) -> BruteForce {
    let n = p.len();
    let mut out = BruteForce {
        fail_strict: 0.0,
        fail_inclusive: 0.0,
        total_weight: 0.0,
    };
    for mask in 0u64..(1 << n) {
        let mut weight = 1.0;
        let mut mass = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 1 {
                weight *= p[i];
                mass += x[i];
            } else {
                weight *= 1.0 - p[i];
            }
        }
        out.total_weight += weight;
        if mass < 1.0 - TIE {
            out.fail_strict += weight;
        }
        if mass <= 1.0 + TIE {
            out.fail_inclusive += weight;
        }
    }
    out
}

/// `sum_r P(r) exp(-t (sum_{i in r} x_i - 1))`
pub fn chernoff_subset_sum(p: &[f64], x: &[f64], t: f64) -> f64 {
    let n = p.len();
    let mut g = 0.0;
    for mask in 0u64..(1 << n) {
        let mut weight = 1.0;
        let mut mass = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 1 {
                weight *= p[i];
                mass += x[i];
            } else {
                weight *= 1.0 - p[i];
            }
        }
        g += weight * (-t * (mass - 1.0)).exp();
    }
    g
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn probs(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sum_i log(1 + r_i e^{-t x_i})` by direct evaluation.
pub fn r2_objective(p: &[f64], x: &[f64], t: f64) -> f64 {
    p.iter()
        .zip(x)
        .map(|(&pi, &xi)| (1.0 + pi / (1.0 - pi) * (-t * xi).exp()).ln())
        .sum::<f64>()
        + t
}
