use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hetstore::bounds::bound_report;
use hetstore::chernoff::{
    closed_form_allocation, iterative_chernoff, DEFAULT_MAX_ROUNDS, DEFAULT_ROUND_TOL,
};
use hetstore::evaluator::{
    exact_failure_prob_with, monte_carlo_failure_prob, EvalOptions, ReliabilityEstimate,
};
use hetstore::harness::{num, run_experiment, summary, ExperimentConfig};
use hetstore::hoeffding::solve_h1_default;
use hetstore::{Allocation, Error, Strategy, SystemProfile};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NONCONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hetstore",
    version,
    about = "Coded storage allocation over unreliable nodes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a budget sweep and write the results as CSV.
    Run {
        /// Experiment file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; overrides `output` in the config. `-` for stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        ensemble_size: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Failure probability and bounds for a given allocation.
    Eval {
        #[arg(long, value_delimiter = ',', required = true)]
        probs: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        alloc: Vec<f64>,
        /// Defaults to the allocation total.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Compute an allocation with one of the strategies.
    Solve {
        #[arg(long, value_delimiter = ',', required = true)]
        probs: Vec<f64>,
        #[arg(long)]
        budget: f64,
        /// spread, closed, hoeffding or chernoff
        #[arg(long, default_value = "chernoff")]
        method: String,
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trials,
            ensemble_size,
            threads,
        } => run(config, out, seed, trials, ensemble_size, threads),
        Command::Eval {
            probs,
            alloc,
            budget,
            trials,
            seed,
        } => eval(probs, alloc, budget, trials, seed),
        Command::Solve {
            probs,
            budget,
            method,
            trials,
            seed,
        } => solve(probs, budget, &method, trials, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    trials: Option<u64>,
    ensemble_size: Option<usize>,
    threads: Option<usize>,
) -> Result<u8, Failure> {
    let mut cfg = match &config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(m) = ensemble_size {
        cfg.ensemble_size = m;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if out.is_some() {
        cfg.output = out;
    }
    cfg.validate()?;

    let output = run_experiment(&cfg)?;
    let csv = output.to_csv();
    match cfg.output.as_deref() {
        Some(path) if path.as_os_str() != "-" => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
            }
            fs::write(path, &csv).map_err(|e| Failure::io(path, e))?;
            print!("{}", summary(&output));
            println!("wrote {} rows to {}", output.rows.len(), path.display());
        }
        _ => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(csv.as_bytes())
                .map_err(|e| Failure::io(std::path::Path::new("<stdout>"), e))?;
            eprint!("{}", summary(&output));
        }
    }

    let bad = output.nonconverged();
    if bad > 0 {
        eprintln!("{bad} rows did not converge; see the diag column");
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(0)
}

fn estimate(
    profile: &SystemProfile,
    alloc: &Allocation,
    trials: u64,
    seed: u64,
) -> Result<ReliabilityEstimate, Error> {
    match exact_failure_prob_with(profile, alloc, &EvalOptions::default()) {
        Err(Error::EnumerationLimit { .. }) => {
            monte_carlo_failure_prob(profile, alloc, trials, seed)
        }
        other => other,
    }
}

fn print_estimate(pe: &ReliabilityEstimate) {
    if pe.method.is_exact() {
        println!("P_e        {} ({})", num(pe.value), pe.method.name());
    } else {
        println!(
            "P_e        {} +/- {} ({}, {} trials)",
            num(pe.value),
            num(pe.half_width),
            pe.method.name(),
            pe.trials
        );
    }
}

fn show(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "vacuous".into())
}

fn eval(
    probs: Vec<f64>,
    alloc: Vec<f64>,
    budget: Option<f64>,
    trials: u64,
    seed: u64,
) -> Result<u8, Failure> {
    let alloc = Allocation::custom(alloc)?;
    let budget = budget.unwrap_or_else(|| alloc.total());
    let profile = SystemProfile::new(probs, budget)?;
    if !alloc.within_budget(budget) {
        return Err(Error::OverBudget {
            used: alloc.total(),
            budget,
        }
        .into());
    }
    let pe = estimate(&profile, &alloc, trials, seed)?;
    let report = bound_report(&profile, &alloc)?;
    print_estimate(&pe);
    println!("p^T x      {}", num(alloc.expected_mass(&profile)?));
    println!("hoeffding  {}", show(report.hoeffding));
    println!(
        "chernoff   {} (t = {})",
        show(report.chernoff()),
        num(report.chernoff_t)
    );
    println!("spreading  {}", show(report.spreading));
    println!("closed     {}", show(report.closed_form));
    Ok(0)
}

fn solve(
    probs: Vec<f64>,
    budget: f64,
    method: &str,
    trials: u64,
    seed: u64,
) -> Result<u8, Failure> {
    let strategy = match Strategy::parse(method) {
        Some(Strategy::Custom) | None => {
            return Err(Failure::config(format!(
                "unknown method `{method}`; use spread, closed, hoeffding or chernoff"
            )))
        }
        Some(s) => s,
    };
    let profile = SystemProfile::new(probs, budget)?;
    let mut converged = true;
    let alloc = match strategy {
        Strategy::Spread => Allocation::spread(&profile),
        Strategy::ChernoffClosedForm => {
            let c = closed_form_allocation(&profile)?;
            println!("opt_cond   {}", c.optimality_condition);
            println!("clipped    {}", c.clipped);
            c.allocation
        }
        Strategy::Hoeffding => {
            let h = solve_h1_default(&profile)?;
            println!("eps*       {}", num(h.epsilon_star));
            println!("certified  {}", h.certified);
            println!("calls      {}", h.oracle_calls);
            converged = h.converged && h.monotone;
            h.allocation
        }
        Strategy::ChernoffIterative => {
            let it = iterative_chernoff(&profile, DEFAULT_MAX_ROUNDS, DEFAULT_ROUND_TOL)?;
            println!("t          {}", num(it.best_t.t));
            println!("rounds     {}", it.rounds);
            println!("kkt        {}", num(it.solution.kkt_residual));
            converged = it.converged && it.monotone;
            it.solution.allocation
        }
        Strategy::Custom => unreachable!(),
    };
    let amounts: Vec<String> = alloc.amounts().iter().map(|&v| num(v)).collect();
    println!("x          {}", amounts.join(","));
    print_estimate(&estimate(&profile, &alloc, trials, seed)?);
    let report = bound_report(&profile, &alloc)?;
    println!("hoeffding  {}", show(report.hoeffding));
    println!("chernoff   {}", show(report.chernoff()));
    if !converged {
        eprintln!("solver did not converge");
        return Ok(EXIT_NONCONVERGED);
    }
    Ok(0)
}
