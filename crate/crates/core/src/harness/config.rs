//! Flat `key = value` experiment configuration.
//!
//! One key per line, `#` starts a comment, lists are comma separated.
//! Budgets may also be given as an inclusive range `start:stop:step`.
//!
//! ```text
//! n = 100
//! p_lo = 0.5
//! p_hi = 1.0
//! budgets = 1.4:2.6:0.2
//! strategies = spread,closed,hoeffding,chernoff
//! trials = 100000
//! ensemble_size = 10
//! seed = 42
//! output = fig1.csv
//! ```

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::evaluator::DEFAULT_ENUM_LIMIT;
use crate::model::Strategy;

#[derive(Debug, Clone, PartialEq)]
pub enum ProbDist {
    /// Independent draws from the open interval `(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Every ensemble member uses these probabilities.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p_dist: ProbDist,
    pub budgets: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub trials: u64,
    pub ensemble_size: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub enum_limit: usize,
    /// Use exact evaluation whenever the allocation admits it.
    pub exact: bool,
    /// Worker threads; zero lets the pool decide.
    pub threads: usize,
    /// Record per-row wall time. Off by default since it breaks
    /// byte-for-byte reproducibility of the CSV.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p_dist: ProbDist::Uniform { lo: 0.5, hi: 1.0 },
            budgets: (0..7).map(|k| round12(1.4 + 0.2 * k as f64)).collect(),
            strategies: Strategy::SWEEP.to_vec(),
            trials: 100_000,
            ensemble_size: 10,
            seed: 42,
            output: None,
            enum_limit: DEFAULT_ENUM_LIMIT,
            exact: true,
            threads: 0,
            timing: false,
        }
    }
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{}`", raw.trim())))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(config_err(
            key,
            format!("expected a boolean, got `{other}`"),
        )),
    }
}

/// Parses `a,b,c` or the inclusive range `start:stop:step`.
pub fn parse_budgets(raw: &str) -> Result<Vec<f64>> {
    let key = "budgets";
    if raw.contains(':') {
        let parts: Vec<f64> = raw
            .split(':')
            .map(|s| parse_num(key, s))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(config_err(key, "range must be start:stop:step"));
        };
        if !(step > 0.0) || stop < start {
            return Err(config_err(key, "range needs step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count)
            .map(|k| round12(start + step * k as f64))
            .collect());
    }
    parse_list(key, raw)
}

pub fn parse_strategies(raw: &str) -> Result<Vec<Strategy>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| match Strategy::parse(s) {
            Some(Strategy::Custom) | None => Err(config_err(
                "strategies",
                format!("unknown strategy `{}`", s.trim()),
            )),
            Some(st) => Ok(st),
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut n_given = false;
        let (mut lo, mut hi) = (0.5, 1.0);
        let mut fixed: Option<Vec<f64>> = None;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(
                    &format!("line {}", lineno + 1),
                    "expected `key = value`",
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "n" => {
                    cfg.n = parse_num(key, value)?;
                    n_given = true;
                }
                "p_lo" => lo = parse_num(key, value)?,
                "p_hi" => hi = parse_num(key, value)?,
                "probs" => fixed = Some(parse_list(key, value)?),
                "budgets" => cfg.budgets = parse_budgets(value)?,
                "strategies" => cfg.strategies = parse_strategies(value)?,
                "trials" => cfg.trials = parse_num(key, value)?,
                "ensemble_size" => cfg.ensemble_size = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "output" => cfg.output = Some(PathBuf::from(value)),
                "enum_limit" => cfg.enum_limit = parse_num(key, value)?,
                "exact" => cfg.exact = parse_bool(key, value)?,
                "threads" => cfg.threads = parse_num(key, value)?,
                "timing" => cfg.timing = parse_bool(key, value)?,
                other => return Err(config_err(other, "unknown key")),
            }
        }

        cfg.p_dist = match fixed {
            Some(probs) => {
                if !n_given {
                    cfg.n = probs.len();
                }
                ProbDist::Fixed(probs)
            }
            None => ProbDist::Uniform { lo, hi },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_err("n", "must be at least 1"));
        }
        match &self.p_dist {
            ProbDist::Uniform { lo, hi } => {
                // The interval is open, so hi = 1 is allowed: draws never hit it.
                if !(*lo >= 0.0 && lo < hi && *hi <= 1.0) {
                    return Err(config_err(
                        "p_lo",
                        format!("need 0 <= p_lo < p_hi <= 1, got ({lo}, {hi})"),
                    ));
                }
                if *lo < 0.5 && self.strategies.contains(&Strategy::ChernoffClosedForm) {
                    return Err(config_err(
                        "p_lo",
                        "closed-form strategy needs every probability above 1/2",
                    ));
                }
            }
            ProbDist::Fixed(probs) => {
                if probs.len() != self.n {
                    return Err(config_err(
                        "probs",
                        format!("has {} entries but n = {}", probs.len(), self.n),
                    ));
                }
                if let Some(p) = probs.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
                    return Err(config_err("probs", format!("{p} is outside (0, 1)")));
                }
                if self.strategies.contains(&Strategy::ChernoffClosedForm)
                    && probs.iter().any(|&p| p <= 0.5)
                {
                    return Err(config_err(
                        "probs",
                        "closed-form strategy needs every probability above 1/2",
                    ));
                }
            }
        }
        if self.budgets.is_empty() {
            return Err(config_err("budgets", "must not be empty"));
        }
        if self.budgets.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(config_err("budgets", "must be positive and finite"));
        }
        if self.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("budgets", "must be strictly ascending"));
        }
        if let Some(&t) = self.budgets.iter().find(|&&t| t > self.n as f64) {
            return Err(config_err("budgets", format!("{t} exceeds n = {}", self.n)));
        }
        if self.strategies.is_empty() {
            return Err(config_err("strategies", "must not be empty"));
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return Err(config_err("strategies", "duplicate entry"));
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        if self.ensemble_size == 0 {
            return Err(config_err("ensemble_size", "must be at least 1"));
        }
        Ok(())
    }
}
