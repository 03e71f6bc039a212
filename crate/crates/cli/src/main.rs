use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use fairband::coregame::{check, CoreKind, BLOCKING_TOLERANCE};
use fairband::learning::{learn_policy_with, write_trace_csv, LearnConfig, Method};
use fairband::policies::{ggi_optimal, solve};
use fairband::preflib::{bandit_from_profile, beta_models, parse_soc, DOTS_RANK_MEANS};
use fairband::sweep::{
    aggregate, enumerate_sweep, run_sweep, write_cells, write_records, write_table1, SweepConfig,
};
use fairband::{
    score_all, Objective, Policy, RewardMatrix, RewardModel, SolverSettings, DEFAULT_TIE_TOLERANCE,
};
use serde::Serialize;
use serde_json::json;

const SEED_ENV: &str = "FAIRBAND_SEED";

#[derive(Parser)]
#[command(name = "fairband", version, about = "Fairness scores, optimal policies and bandit learning")]
struct Cli {
    /// Tolerance for ties between an agent's best arms.
    #[arg(long, global = true, default_value_t = DEFAULT_TIE_TOLERANCE)]
    tie_tolerance: f64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scores a policy on the PF, EF and UF criteria.
    Score {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Computes the optimal policy for one objective.
    Solve {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        /// Comma-separated GGI weights (non-increasing); defaults to 1, 1/2, 1/4, ...
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Runs the factorial sweep and writes per-policy score aggregates.
    Sweep {
        /// TOML sweep configuration; defaults reproduce the 7,776-cell sweep.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Runs a learning algorithm and writes its trace.
    Learn {
        #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
        soc: Option<PathBuf>,
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long = "horizon", visible_alias = "T", default_value_t = 100_000)]
        horizon: u64,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Beta reward standard deviation; a matrix without it uses Bernoulli rewards.
        #[arg(long)]
        std: Option<f64>,
        /// Voters sampled from the SOC profile.
        #[arg(long, default_value_t = 50)]
        n_sample: usize,
        /// Mean reward for each rank position, best first.
        #[arg(long, value_delimiter = ',')]
        rank_means: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        trace_every: u64,
        /// Output directory for trace.csv and manifest.json; the trace goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks whether a policy lies in the procedural or outcome core.
    CoreCheck {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum)]
        which: CoreArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Pf,
    Ef,
    Uf,
    Nsw,
    Ggi,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Pf => Objective::Pf,
            ObjectiveArg::Ef => Objective::Ef,
            ObjectiveArg::Uf => Objective::Uf,
            ObjectiveArg::Nsw => Objective::Nsw,
            ObjectiveArg::Ggi => Objective::Ggi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pf,
    Ef,
    Uf,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pf => Method::Pf,
            MethodArg::Ef => Method::Ef,
            MethodArg::Uf => Method::Uf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CoreArg {
    Procedural,
    Outcome,
}

/// A failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<fairband::error::Error> for Failure {
    fn from(e: fairband::error::Error) -> Self {
        let code = if e.is_input_error() { 2 } else { 3 };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::input(format!("{}: {e}", path.display()))
}

struct LabelledMatrix {
    agents: Vec<String>,
    matrix: RewardMatrix,
}

fn parse_float(s: &str, what: &str) -> CliResult<f64> {
    s.trim().parse().map_err(|_| Failure::input(format!("{what}: '{s}' is not a number")))
}

/// Reads `agent,arm_1..arm_K` CSV.
fn read_matrix(path: &Path) -> CliResult<LabelledMatrix> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    let header = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if header.len() < 2 || header.get(0) != Some("agent") {
        return Err(io_err(path, "header must be agent,arm_1,...,arm_K"));
    }
    let (mut agents, mut rows) = (Vec::new(), Vec::new());
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        let line = idx + 2;
        agents.push(record[0].to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|v| parse_float(v, &format!("{} line {line}", path.display())))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let matrix = RewardMatrix::new(rows).map_err(|e| io_err(path, e))?;
    Ok(LabelledMatrix { agents, matrix })
}

/// Reads a single CSV row of arm probabilities; an `arm_*` header row is skipped.
fn read_policy(path: &Path) -> CliResult<Policy> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let records: Vec<csv::StringRecord> = reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))?;
    let data: Vec<&csv::StringRecord> = records
        .iter()
        .filter(|r| !r.get(0).is_some_and(|c| c.starts_with("arm")))
        .collect();
    let [row] = data.as_slice() else {
        return Err(io_err(path, format!("expected one row of probabilities, found {}", data.len())));
    };
    let probs = row
        .iter()
        .map(|v| parse_float(v, &path.display().to_string()))
        .collect::<CliResult<Vec<f64>>>()?;
    Policy::new(probs).map_err(|e| io_err(path, e))
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure { code: 3, message: e.to_string() })?;
    println!("{text}");
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn write_manifest(dir: &Path, command: &str, config: serde_json::Value, seed: u64, outputs: &[&str], start: Instant) -> CliResult<()> {
    let manifest = json!({
        "command": command,
        "config": config,
        "seed": seed,
        "versions": { "fairband": env!("CARGO_PKG_VERSION") },
        "outputs": outputs,
        "duration_secs": start.elapsed().as_secs_f64(),
    });
    write_file(&dir.join("manifest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })
}

fn seed_override(seed: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| Failure::input(format!("{SEED_ENV}='{s}' is not a seed"))),
        Err(_) => Ok(seed),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let tol = cli.tie_tolerance;
    let settings = SolverSettings::default();
    match cli.command {
        Command::Score { matrix, policy } => {
            let m = read_matrix(&matrix)?;
            let p = read_policy(&policy)?;
            print_json(&score_all(&m.matrix, &p, tol)?)
        }
        Command::Solve { matrix, objective, weights } => {
            let m = read_matrix(&matrix)?.matrix;
            let objective = Objective::from(objective);
            let policy = match (objective, weights) {
                (Objective::Ggi, Some(w)) => ggi_optimal(&m, &w, &settings)?,
                (_, Some(_)) => return Err(Failure::input("--weights only applies to --objective ggi")),
                (o, None) => solve(o, &m, tol, &settings)?,
            };
            print_json(&json!({ "objective": objective.label(), "policy": policy.probs() }))
        }
        Command::Sweep { config, out, jobs } => {
            let start = Instant::now();
            let mut cfg = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    toml::from_str::<SweepConfig>(&text).map_err(|e| io_err(path, e))?
                }
                None => SweepConfig::default(),
            };
            cfg.seed = seed_override(cfg.seed)?;
            cfg.validate()?;
            fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let cells = enumerate_sweep(&cfg);
            let records = run_sweep(&cells, &cfg, jobs)?;
            let rows = aggregate(&records);
            write_file(&out.join("table1.csv"), |w| write_table1(w, &rows))?;
            write_file(&out.join("cells.csv"), |w| write_cells(w, &records))?;
            write_file(&out.join("records.csv"), |w| write_records(w, &records))?;
            let config = serde_json::to_value(&cfg).map_err(|e| Failure::input(e.to_string()))?;
            write_manifest(&out, "sweep", config, cfg.seed, &["table1.csv", "cells.csv", "records.csv"], start)?;
            let failures: usize = rows.iter().map(|r| r.failures).sum();
            eprintln!("{} cells, {failures} solver failures, outputs in {}", cells.len(), out.display());
            Ok(())
        }
        Command::Learn {
            soc,
            matrix,
            method,
            horizon,
            gamma,
            alpha,
            seed,
            std,
            n_sample,
            rank_means,
            trace_every,
            out,
        } => {
            let start = Instant::now();
            let seed = seed_override(seed)?;
            let (means, model) = match (&soc, &matrix) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    let profile = parse_soc(&text)?.to_profile()?;
                    let ranks = rank_means.clone().unwrap_or_else(|| DOTS_RANK_MEANS.to_vec());
                    let means = bandit_from_profile(&profile, &ranks, n_sample, seed)?;
                    let model = beta_models(&means, std.unwrap_or(0.1))?;
                    (means, model)
                }
                (None, Some(path)) => {
                    let means = read_matrix(path)?.matrix;
                    let model = match std {
                        Some(s) => beta_models(&means, s)?,
                        None => RewardModel::bernoulli(&means)?,
                    };
                    (means, model)
                }
                (None, None) => return Err(Failure::input("one of --soc or --matrix is required")),
            };
            let mut cfg = LearnConfig::new(method.into(), horizon, seed);
            if gamma.is_some() {
                cfg.gamma = gamma;
            }
            cfg.alpha = alpha;
            cfg.trace_every = trace_every;
            cfg.tie_tolerance = tol;
            cfg.validate(means.n_arms())?;
            let outcome = learn_policy_with(&model, &cfg, &settings)?;
            let k = means.n_arms();
            match &out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                    write_file(&dir.join("trace.csv"), |w| write_trace_csv(w, &outcome.trace, k))?;
                    let config = json!({
                        "learn": cfg,
                        "soc": soc,
                        "matrix": matrix,
                        "std": std,
                        "n_sample": n_sample,
                        "rank_means": rank_means,
                        "means": means.rows().collect::<Vec<_>>(),
                    });
                    write_manifest(dir, "learn", config, seed, &["trace.csv"], start)?;
                    let report = score_all(&means, &outcome.policy, tol)?;
                    print_json(&json!({
                        "policy": outcome.policy.probs(),
                        "scores": report,
                        "regret_pf": outcome.regret_pf,
                        "regret_ef": outcome.regret_ef,
                        "regret_uf": outcome.regret_uf,
                    }))
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    write_trace_csv(&mut w, &outcome.trace, k)
                        .and_then(|_| w.flush())
                        .map_err(|e| Failure::input(e.to_string()))
                }
            }
        }
        Command::CoreCheck { matrix, policy, which } => {
            let m = read_matrix(&matrix)?;
            let p = read_policy(&policy)?;
            let kind = match which {
                CoreArg::Procedural => CoreKind::Procedural,
                CoreArg::Outcome => CoreKind::Outcome,
            };
            let v = check(kind, &m.matrix, &p, tol, BLOCKING_TOLERANCE)?;
            let coalition = v
                .blocking_coalition
                .map(|c| c.into_iter().map(|i| m.agents[i].clone()).collect::<Vec<_>>());
            print_json(&json!({
                "in_core": v.in_core,
                "coalition": coalition,
                "policy": v.blocking_policy.as_ref().map(Policy::probs),
                "margin": v.margin,
            }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
