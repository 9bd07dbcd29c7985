//! Problem instances and allocations.
//!
//! A [`SystemProfile`] describes `n` nodes, node `i` being reachable by the
//! data collector with probability `p[i]`, together with a total storage
//! budget `T` measured in units of the file size. An [`Allocation`] says how
//! much coded data each node holds. Recovery succeeds when the surviving
//! nodes hold at least one unit in total.

use std::fmt;

use crate::error::{Error, Result};

/// Relative slack allowed when checking `sum(x) <= T`.
pub const BUDGET_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemProfile {
    probs: Vec<f64>,
    budget: f64,
}

impl SystemProfile {
    pub fn new(probs: Vec<f64>, budget: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyProfile);
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > 0.0 && p < 1.0))
        {
            return Err(Error::InvalidProbability { index, value });
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidBudget(budget));
        }
        Ok(Self { probs, budget })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    /// Same nodes, different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        Self::new(self.probs.clone(), budget)
    }

    /// Average access probability.
    pub fn mean_prob(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.n() as f64
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax_prob()]
    }

    /// Index of the most reliable node, lowest index on ties.
    pub fn argmax_prob(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Node indices sorted by descending probability, stable on ties.
    pub fn order_by_reliability(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]));
        idx
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: len,
            });
        }
        Ok(())
    }
}

/// Which procedure produced an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Spread,
    ChernoffClosedForm,
    Hoeffding,
    ChernoffIterative,
    Custom,
}

impl Strategy {
    /// The four strategies compared in the budget sweep, in output order.
    pub const SWEEP: [Strategy; 4] = [
        Strategy::Spread,
        Strategy::ChernoffClosedForm,
        Strategy::Hoeffding,
        Strategy::ChernoffIterative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Spread => "spread",
            Strategy::ChernoffClosedForm => "closed",
            Strategy::Hoeffding => "hoeffding",
            Strategy::ChernoffIterative => "chernoff",
            Strategy::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "spread" => Some(Strategy::Spread),
            "closed" => Some(Strategy::ChernoffClosedForm),
            "hoeffding" => Some(Strategy::Hoeffding),
            "chernoff" => Some(Strategy::ChernoffIterative),
            "custom" => Some(Strategy::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    amounts: Vec<f64>,
    strategy: Strategy,
}

impl Allocation {
    pub fn new(amounts: Vec<f64>, strategy: Strategy) -> Result<Self> {
        if let Some((index, &value)) = amounts
            .iter()
            .enumerate()
            .find(|(_, &x)| !(x >= 0.0 && x.is_finite()))
        {
            return Err(Error::InvalidAmount { index, value });
        }
        Ok(Self { amounts, strategy })
    }

    pub fn custom(amounts: Vec<f64>) -> Result<Self> {
        Self::new(amounts, Strategy::Custom)
    }

    /// Maximal spreading: `T/n` on every node.
    pub fn spread(profile: &SystemProfile) -> Self {
        let share = profile.budget() / profile.n() as f64;
        Self {
            amounts: vec![share; profile.n()],
            strategy: Strategy::Spread,
        }
    }

    pub(crate) fn from_raw(amounts: Vec<f64>, strategy: Strategy) -> Self {
        debug_assert!(amounts.iter().all(|x| *x >= 0.0 && x.is_finite()));
        Self { amounts, strategy }
    }

    pub fn amounts(&self) -> &[f64] {
        &self.amounts
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.amounts.iter().sum()
    }

    /// Expected accessed mass `p^T x`.
    pub fn expected_mass(&self, profile: &SystemProfile) -> Result<f64> {
        profile.check_len(self.len())?;
        Ok(dot(profile.probs(), &self.amounts))
    }

    pub fn norm(&self) -> f64 {
        self.amounts.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// True when every node holds the same amount.
    pub fn is_uniform(&self) -> bool {
        self.amounts.windows(2).all(|w| w[0] == w[1])
    }

    pub fn within_budget(&self, budget: f64) -> bool {
        self.total() <= budget * (1.0 + BUDGET_TOL)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `p^T x >= 1`: the expected accessed mass covers the file.
pub fn is_reliable(profile: &SystemProfile, allocation: &Allocation) -> Result<bool> {
    Ok(allocation.expected_mass(profile)? >= 1.0)
}

/// Outcome of the high-reliability region test.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCheck {
    pub inside: bool,
    /// All `1/p_max` placed on the most reliable node; present when inside.
    pub witness: Option<Allocation>,
}

/// Whether any reliable allocation fits the budget, i.e. `T * p_max >= 1`.
pub fn in_region_hp(profile: &SystemProfile) -> RegionCheck {
    let p_max = profile.max_prob();
    if profile.budget() * p_max >= 1.0 {
        let mut amounts = vec![0.0; profile.n()];
        amounts[profile.argmax_prob()] = 1.0 / p_max;
        RegionCheck {
            inside: true,
            witness: Some(Allocation::from_raw(amounts, Strategy::Custom)),
        }
    } else {
        RegionCheck {
            inside: false,
            witness: None,
        }
    }
}

/// Maps an allocation onto `{x in [0,1]^n : sum(x) = T}` without increasing
/// its failure probability.
///
/// Amounts above one unit are capped (a surviving node never needs more than
/// the whole file), and the freed or unused budget is poured into nodes in
/// descending reliability order, filling each to one unit before moving on.
pub fn reduce_to_unit_box(profile: &SystemProfile, allocation: &Allocation) -> Result<Allocation> {
    profile.check_len(allocation.len())?;
    let budget = profile.budget();
    let n = profile.n();
    if budget > n as f64 {
        return Err(Error::BudgetExceedsNodes { budget, n });
    }
    let used = allocation.total();
    if !allocation.within_budget(budget) {
        return Err(Error::OverBudget { used, budget });
    }

    let mut x: Vec<f64> = allocation.amounts().iter().map(|&v| v.min(1.0)).collect();
    let mut leftover = budget - x.iter().sum::<f64>();
    for i in profile.order_by_reliability() {
        if leftover <= 0.0 {
            break;
        }
        let room = 1.0 - x[i];
        if room > 0.0 {
            let add = room.min(leftover);
            x[i] += add;
            leftover -= add;
        }
    }
    // Rounding dust: shave any excess off the last partially filled node.
    let excess = x.iter().sum::<f64>() - budget;
    if excess > 0.0 {
        if let Some(i) = (0..n).rev().find(|&i| x[i] >= excess) {
            x[i] -= excess;
        }
    }
    Ok(Allocation::from_raw(x, allocation.strategy()))
}
