//! Full factorial experiment over synthetic preference profiles.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RewardMatrix, DEFAULT_TIE_TOLERANCE};
use crate::policies::{solve, Objective, SolverSettings};
use crate::prefgen::{means_from_ranking_with_std, sample_profile, Distribution, MEAN_STD};
use crate::scores::score_all;
use crate::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FavoriteMode {
    /// Every agent has exactly `f` favourite arms.
    Equal,
    /// Each agent draws its favourite count uniformly from `1..=f`.
    Random,
}

impl fmt::Display for FavoriteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FavoriteMode::Equal => "equal",
            FavoriteMode::Random => "random",
        })
    }
}

fn default_agents() -> Vec<usize> {
    (2..=10).collect()
}

fn default_arms() -> Vec<usize> {
    (2..=10).collect()
}

fn default_favorites() -> Vec<usize> {
    (1..=10).collect()
}

fn default_modes() -> Vec<FavoriteMode> {
    vec![FavoriteMode::Equal, FavoriteMode::Random]
}

fn default_distributions() -> Vec<Distribution> {
    let mut d = vec![
        Distribution::Uniform,
        Distribution::ImpartialCulture,
        Distribution::SinglePeaked,
    ];
    d.extend([0.01, 0.25, 0.5, 0.75, 0.99].map(|phi| Distribution::Mallows { phi }));
    d
}

fn default_seed() -> u64 {
    42
}

fn default_mean_std() -> f64 {
    MEAN_STD
}

fn default_tie_tolerance() -> f64 {
    DEFAULT_TIE_TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_agents")]
    pub n_agents: Vec<usize>,
    #[serde(default = "default_arms")]
    pub n_arms: Vec<usize>,
    #[serde(default = "default_favorites")]
    pub n_favorites: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<FavoriteMode>,
    #[serde(default = "default_distributions")]
    pub distributions: Vec<Distribution>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Standard deviation of the normal draws behind each agent's means.
    #[serde(default = "default_mean_std")]
    pub mean_std: f64,
    #[serde(default = "default_tie_tolerance")]
    pub tie_tolerance: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_agents: default_agents(),
            n_arms: default_arms(),
            n_favorites: default_favorites(),
            modes: default_modes(),
            distributions: default_distributions(),
            seed: default_seed(),
            mean_std: default_mean_std(),
            tie_tolerance: default_tie_tolerance(),
            solver: SolverSettings::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents.contains(&0) || self.n_arms.contains(&0) || self.n_favorites.contains(&0) {
            return Err(Error::InvalidInput("sweep ranges must be positive".into()));
        }
        if !(self.mean_std > 0.0 && self.mean_std.is_finite()) {
            return Err(Error::InvalidInput("mean_std must be positive".into()));
        }
        for d in &self.distributions {
            d.validate()?;
        }
        self.solver.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub cell_id: u64,
    pub n_agents: usize,
    pub n_arms: usize,
    pub n_favorites: usize,
    pub mode: FavoriteMode,
    pub distribution: Distribution,
}

/// Cells in nested order N, K, f, mode, distribution, skipping `f > K`.
pub fn enumerate_sweep(cfg: &SweepConfig) -> Vec<ExperimentConfig> {
    let mut cells = Vec::new();
    for &n in &cfg.n_agents {
        for &k in &cfg.n_arms {
            for &f in cfg.n_favorites.iter().filter(|&&f| f <= k) {
                for &mode in &cfg.modes {
                    for &distribution in &cfg.distributions {
                        cells.push(ExperimentConfig {
                            cell_id: cells.len() as u64,
                            n_agents: n,
                            n_arms: k,
                            n_favorites: f,
                            mode,
                            distribution,
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Reward matrix for one cell, drawn from the cell's own RNG stream.
pub fn cell_matrix(cell: &ExperimentConfig, cfg: &SweepConfig) -> Result<RewardMatrix> {
    let mut rng = stream_rng(cfg.seed, cell.cell_id);
    let profile = sample_profile(cell.distribution, cell.n_agents, cell.n_arms, &mut rng)?;
    let rows = profile
        .rankings()
        .iter()
        .map(|ranking| {
            let f = match cell.mode {
                FavoriteMode::Equal => cell.n_favorites,
                FavoriteMode::Random => rng.random_range(1..=cell.n_favorites),
            };
            means_from_ranking_with_std(ranking, f, cfg.mean_std, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    RewardMatrix::new(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub pf: f64,
    pub ef: Option<f64>,
    pub uf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: ExperimentConfig,
    pub policy_kind: Objective,
    pub outcome: std::result::Result<ScoreTriple, String>,
}

fn run_cell(cell: &ExperimentConfig, cfg: &SweepConfig) -> Vec<RunRecord> {
    let matrix = cell_matrix(cell, cfg);
    Objective::ALL
        .iter()
        .map(|&kind| {
            let outcome = matrix
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|m| {
                    let policy = solve(kind, m, cfg.tie_tolerance, &cfg.solver)?;
                    let report = score_all(m, &policy, cfg.tie_tolerance)?;
                    Ok(ScoreTriple {
                        pf: report.pf,
                        ef: report.ef,
                        uf: report.uf,
                    })
                })
                .map_err(|e| e.to_string());
            RunRecord {
                cell: cell.clone(),
                policy_kind: kind,
                outcome,
            }
        })
        .collect()
}

/// Solves and scores every cell; `jobs = 0` uses all cores.
///
/// Output order follows `cells` regardless of the worker count.
pub fn run_sweep(cells: &[ExperimentConfig], cfg: &SweepConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(c, cfg))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation; `None` for an empty sample.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy_kind: Objective,
    pub pf: Option<MeanStd>,
    pub ef: Option<MeanStd>,
    pub uf: Option<MeanStd>,
    pub failures: usize,
}

pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    Objective::ALL
        .iter()
        .map(|&kind| {
            let (mut pf, mut ef, mut uf, mut failures) = (Vec::new(), Vec::new(), Vec::new(), 0);
            for r in records.iter().filter(|r| r.policy_kind == kind) {
                match &r.outcome {
                    Ok(s) => {
                        pf.push(s.pf);
                        ef.extend(s.ef);
                        uf.push(s.uf);
                    }
                    Err(_) => failures += 1,
                }
            }
            AggregateRow {
                policy_kind: kind,
                pf: mean_std(&pf),
                ef: mean_std(&ef),
                uf: mean_std(&uf),
                failures,
            }
        })
        .collect()
}

/// Fixed 9-significant-digit rendering with trailing zeros removed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn opt_sig(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

pub fn write_table1<W: Write>(mut w: W, rows: &[AggregateRow]) -> std::io::Result<()> {
    writeln!(w, "policy,pf_mean,pf_std,ef_mean,ef_std,uf_mean,uf_std,failures")?;
    for r in rows {
        let cell = |m: &Option<MeanStd>| match m {
            Some(m) => format!("{},{}", fmt_sig(m.mean), fmt_sig(m.std)),
            None => ",".into(),
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            r.policy_kind.label(),
            cell(&r.pf),
            cell(&r.ef),
            cell(&r.uf),
            r.failures
        )?;
    }
    Ok(())
}

fn cell_prefix(c: &ExperimentConfig) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        c.cell_id,
        c.n_agents,
        c.n_arms,
        c.n_favorites,
        c.mode,
        c.distribution.label(),
        opt_sig(c.distribution.phi())
    )
}

/// One row per run: `cell_id,N,K,f,mode,distribution,phi,policy_kind,pf,ef,uf,error`.
pub fn write_records<W: Write>(mut w: W, records: &[RunRecord]) -> std::io::Result<()> {
    writeln!(w, "cell_id,N,K,f,mode,distribution,phi,policy_kind,pf,ef,uf,error")?;
    for r in records {
        let scores = match &r.outcome {
            Ok(s) => format!("{},{},{},", fmt_sig(s.pf), opt_sig(s.ef), fmt_sig(s.uf)),
            Err(e) => format!(",,,\"{}\"", e.replace('"', "'")),
        };
        writeln!(w, "{},{},{}", cell_prefix(&r.cell), r.policy_kind.label(), scores)?;
    }
    Ok(())
}

/// One row per cell with the three scores of every policy side by side.
pub fn write_cells<W: Write>(mut w: W, records: &[RunRecord]) -> std::io::Result<()> {
    let mut header = "cell_id,N,K,f,mode,distribution,phi".to_string();
    for kind in Objective::ALL {
        for score in ["pf", "ef", "uf"] {
            header.push_str(&format!(",{}_{score}", kind.label()));
        }
    }
    writeln!(w, "{header}")?;
    for group in records.chunk_by(|a, b| a.cell.cell_id == b.cell.cell_id) {
        let mut line = cell_prefix(&group[0].cell);
        for kind in Objective::ALL {
            match group.iter().find(|r| r.policy_kind == kind).map(|r| &r.outcome) {
                Some(Ok(s)) => line.push_str(&format!(
                    ",{},{},{}",
                    fmt_sig(s.pf),
                    opt_sig(s.ef),
                    fmt_sig(s.uf)
                )),
                _ => line.push_str(",,,"),
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
