//! Budget sweeps over seeded ensembles of random profiles.
//!
//! Every `(ensemble member, budget)` cell is independent. Cells run in
//! parallel, each drawing its randomness from streams keyed by the base
//! seed and the cell coordinates, and results are written back in a fixed
//! order, so the CSV is identical for any thread count.

mod config;

pub use config::{parse_budgets, parse_strategies, ExperimentConfig, ProbDist};

use std::fmt::Write as _;
use std::time::Instant;

use rand::distributions::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::{closed_form_bound, spreading_bound};
use crate::chernoff::{
    closed_form_allocation, iterative_chernoff, DEFAULT_MAX_ROUNDS, DEFAULT_ROUND_TOL,
};
use crate::error::{Error, Result};
use crate::evaluator::{
    exact_failure_prob_with, monte_carlo_failure_prob, EvalOptions, ReliabilityEstimate,
};
use crate::hoeffding::solve_h1_default;
use crate::model::{Allocation, Strategy, SystemProfile};

pub const CSV_HEADER: &str = "ensemble,strategy,T,pe,pe_hw,bound,diag,ms";

const DRAW_TAG: u64 = 0x6472_6177; // "draw"
const EVAL_TAG: u64 = 0x6576_616c; // "eval"

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of coordinates into a base seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Draws one probability vector per ensemble member. Member `k` only
/// depends on `(seed, k)`, so growing the ensemble keeps earlier members.
pub fn draw_ensemble(n: usize, dist: &ProbDist, ensemble_size: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..ensemble_size)
        .map(|k| match dist {
            ProbDist::Fixed(p) => p.clone(),
            ProbDist::Uniform { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[DRAW_TAG]));
                rng.set_stream(k as u64);
                (0..n)
                    .map(|_| loop {
                        let u: f64 = Open01.sample(&mut rng);
                        let p = lo + (hi - lo) * u;
                        // rounding can land on a closed end
                        if p > 0.0 && p < 1.0 && p > *lo && p < *hi {
                            break p;
                        }
                        if lo == hi {
                            break *lo;
                        }
                    })
                    .collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub ensemble: usize,
    pub strategy: Strategy,
    pub budget: f64,
    pub pe: ReliabilityEstimate,
    pub bound: Option<f64>,
    pub diag: String,
    pub converged: bool,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub strategy: Strategy,
    pub budget: f64,
    pub members: usize,
    pub mean_pe: f64,
    /// `sqrt(sum hw_k^2) / members`, the half-width of the ensemble mean.
    pub half_width: f64,
    /// Mean bound; `None` if any member's bound was vacuous.
    pub mean_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentOutput {
    pub fn nonconverged(&self) -> usize {
        self.rows.iter().filter(|r| !r.converged).count()
    }

    pub fn aggregate(&self, strategy: Strategy, budget: f64) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.strategy == strategy && a.budget == budget)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.ensemble,
                r.strategy,
                num(r.budget),
                num(r.pe.value),
                num(r.pe.half_width),
                opt(r.bound),
                r.diag,
                opt(r.wall_ms),
            );
        }
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "mean,{},{},{},{},{},members={},",
                a.strategy,
                num(a.budget),
                num(a.mean_pe),
                num(a.half_width),
                opt(a.mean_bound),
                a.members,
            );
        }
        out
    }
}

/// Shortest round-trip decimal, exponent form outside `[1e-4, 1e16)`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Cell {
    ensemble: usize,
    budget_index: usize,
}

fn evaluate(
    cfg: &ExperimentConfig,
    profile: &SystemProfile,
    allocation: &Allocation,
    seed: u64,
) -> Result<ReliabilityEstimate> {
    let opts = EvalOptions {
        enum_limit: cfg.enum_limit,
        ..EvalOptions::default()
    };
    if cfg.exact && (allocation.is_uniform() || profile.n() <= cfg.enum_limit) {
        return exact_failure_prob_with(profile, allocation, &opts);
    }
    monte_carlo_failure_prob(profile, allocation, cfg.trials, seed)
}

fn run_strategy(
    profile: &SystemProfile,
    strategy: Strategy,
) -> Result<(Allocation, Option<f64>, String, bool)> {
    Ok(match strategy {
        Strategy::Spread => (
            Allocation::spread(profile),
            spreading_bound(profile),
            String::new(),
            true,
        ),
        Strategy::ChernoffClosedForm => {
            let c = closed_form_allocation(profile)?;
            let diag = format!(
                "opt_cond={};clipped={}",
                u8::from(c.optimality_condition),
                u8::from(c.clipped)
            );
            (c.allocation, closed_form_bound(profile), diag, true)
        }
        Strategy::Hoeffding => {
            let h = solve_h1_default(profile)?;
            let bound = (h.certified && h.epsilon_star < 1.0).then_some(h.epsilon_star);
            let diag = format!(
                "eps={};calls={};certified={}",
                num(h.epsilon_star),
                h.oracle_calls,
                u8::from(h.certified)
            );
            (h.allocation, bound, diag, h.converged && h.monotone)
        }
        Strategy::ChernoffIterative => {
            let it = iterative_chernoff(profile, DEFAULT_MAX_ROUNDS, DEFAULT_ROUND_TOL)?;
            let diag = format!(
                "t={};rounds={};kkt={}",
                num(it.best_t.t),
                it.rounds,
                num(it.solution.kkt_residual)
            );
            let ok = it.converged && it.monotone;
            (it.solution.allocation.clone(), it.bound(), diag, ok)
        }
        Strategy::Custom => {
            return Err(Error::Config {
                key: "strategies".into(),
                reason: "custom allocations cannot be swept".into(),
            });
        }
    })
}

fn run_cell(cfg: &ExperimentConfig, probs: &[f64], cell: &Cell) -> Result<Vec<ResultRow>> {
    let budget = cfg.budgets[cell.budget_index];
    let profile = SystemProfile::new(probs.to_vec(), budget)?;
    let mut rows = Vec::new();
    for &strategy in Strategy::SWEEP
        .iter()
        .filter(|s| cfg.strategies.contains(s))
    {
        let started = Instant::now();
        let seed = derive_seed(
            cfg.seed,
            &[
                EVAL_TAG,
                cell.ensemble as u64,
                cell.budget_index as u64,
                strategy as u64,
            ],
        );
        let (allocation, bound, diag, converged) = run_strategy(&profile, strategy)?;
        let pe = evaluate(cfg, &profile, &allocation, seed)?;
        let wall_ms = cfg.timing.then(|| started.elapsed().as_secs_f64() * 1e3);
        let mut diag = diag;
        if !converged {
            if !diag.is_empty() {
                diag.push(';');
            }
            diag.push_str("nonconverged");
        }
        rows.push(ResultRow {
            ensemble: cell.ensemble,
            strategy,
            budget,
            pe,
            bound,
            diag,
            converged,
            wall_ms,
        });
    }
    Ok(rows)
}

fn aggregate(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &budget in &cfg.budgets {
        for &strategy in Strategy::SWEEP
            .iter()
            .filter(|s| cfg.strategies.contains(s))
        {
            let members: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.strategy == strategy && r.budget == budget)
                .collect();
            let m = members.len() as f64;
            let mean_pe = members.iter().map(|r| r.pe.value).sum::<f64>() / m;
            let half_width = members
                .iter()
                .map(|r| r.pe.half_width * r.pe.half_width)
                .sum::<f64>()
                .sqrt()
                / m;
            let mean_bound = members
                .iter()
                .map(|r| r.bound)
                .collect::<Option<Vec<f64>>>()
                .map(|b| b.iter().sum::<f64>() / m);
            out.push(AggregateRow {
                strategy,
                budget,
                members: members.len(),
                mean_pe,
                half_width,
                mean_bound,
            });
        }
    }
    out
}

/// Runs the sweep described by `cfg`. Rows come back ordered by ensemble
/// member, then budget, then strategy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let ensemble = draw_ensemble(cfg.n, &cfg.p_dist, cfg.ensemble_size, cfg.seed);
    let cells: Vec<Cell> = (0..cfg.ensemble_size)
        .flat_map(|ensemble| {
            (0..cfg.budgets.len()).map(move |budget_index| Cell {
                ensemble,
                budget_index,
            })
        })
        .collect();

    let work = || -> Result<Vec<ResultRow>> {
        let per_cell: Vec<Vec<ResultRow>> = cells
            .par_iter()
            .map(|cell| run_cell(cfg, &ensemble[cell.ensemble], cell))
            .collect::<Result<_>>()?;
        Ok(per_cell.into_iter().flatten().collect())
    };
    let rows = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "threads",
                reason: e.to_string(),
            })?
            .install(work)?
    } else {
        work()?
    };
    let aggregates = aggregate(cfg, &rows);
    Ok(ExperimentOutput { rows, aggregates })
}

/// Human-readable table of the aggregate block.
pub fn summary(output: &ExperimentOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>10} {:>8} {:>14} {:>12} {:>14}",
        "strategy", "T", "mean P_e", "+/-", "mean bound"
    );
    for a in &output.aggregates {
        let _ = writeln!(
            s,
            "{:>10} {:>8} {:>14.6e} {:>12.3e} {:>14}",
            a.strategy.name(),
            a.budget,
            a.mean_pe,
            a.half_width,
            a.mean_bound
                .map(|b| format!("{b:.6e}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_is_stratified() {
        let dist = ProbDist::Uniform { lo: 0.5, hi: 1.0 };
        let two = draw_ensemble(20, &dist, 2, 11);
        let three = draw_ensemble(20, &dist, 3, 11);
        assert_eq!(two[..], three[..2]);
        assert_ne!(three[1], three[2]);
        assert!(three.iter().flatten().all(|&p| p > 0.5 && p < 1.0));
    }

    #[test]
    fn ensemble_mean_concentrates() {
        let dist = ProbDist::Uniform { lo: 0.5, hi: 1.0 };
        let draw = &draw_ensemble(10_000, &dist, 1, 3)[0];
        let mean = draw.iter().sum::<f64>() / draw.len() as f64;
        assert!(mean > 0.745 && mean < 0.755, "{mean}");
    }

    #[test]
    fn near_degenerate_interval() {
        let dist = ProbDist::Uniform {
            lo: 0.7,
            hi: 0.7 + 1e-9,
        };
        let draw = &draw_ensemble(100, &dist, 1, 5)[0];
        assert!(draw.iter().all(|&p| p > 0.7 && p < 0.7 + 1e-9));
    }

    #[test]
    fn seeds_differ_by_coordinate() {
        let a = derive_seed(1, &[EVAL_TAG, 0, 0, 0]);
        let b = derive_seed(1, &[EVAL_TAG, 0, 1, 0]);
        let c = derive_seed(1, &[EVAL_TAG, 1, 0, 0]);
        assert!(a != b && b != c && a != c);
        assert_eq!(a, derive_seed(1, &[EVAL_TAG, 0, 0, 0]));
    }

    #[test]
    fn number_format() {
        assert_eq!(num(2.0), "2.0");
        assert_eq!(num(1.4), "1.4");
        assert_eq!(num(3.727e-6), "3.727e-6");
        assert_eq!(num(0.0), "0.0");
    }
}
