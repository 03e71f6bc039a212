//! Online learning of fair policies with per-round regret tracking.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    favorite_sets, inequality_d, utilities, EstimatorState, FavoriteSets, Policy, RewardMatrix,
    RewardModel, DEFAULT_TIE_TOLERANCE,
};
use crate::policies::{argmax_lowest, minimize_inequality_with_bonus, pf_optimal_for_sets, SolverSettings};
use crate::scores::{ef_score, optimal_inequality, optimal_total_utility, pf_score, uf_score};
use crate::stream_rng;
use crate::sweep::fmt_sig;

/// Finite stand-in for an infinite confidence radius inside objectives.
pub const RADIUS_SENTINEL: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Pf,
    Ef,
    Uf,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Pf => "pf",
            Method::Ef => "ef",
            Method::Uf => "uf",
        }
    }

    pub fn default_alpha(&self, n_agents: usize) -> f64 {
        match self {
            Method::Pf => 1.0,
            Method::Ef => 4.0,
            Method::Uf => n_agents as f64,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pf" => Ok(Method::Pf),
            "ef" => Ok(Method::Ef),
            "uf" => Ok(Method::Uf),
            other => Err(Error::InvalidInput(format!("unknown learning method '{other}'"))),
        }
    }
}

/// `sqrt(2 ln(N K t) / n)`, infinite for an unpulled arm.
pub fn ucb_radius(pulls: u64, n_agents: usize, n_arms: usize, t: u64) -> f64 {
    if pulls == 0 {
        return f64::INFINITY;
    }
    let nkt = (n_agents * n_arms) as f64 * t.max(1) as f64;
    (2.0 * nkt.ln().max(0.0) / pulls as f64).sqrt()
}

fn radii(est: &EstimatorState, t: u64) -> Vec<f64> {
    est.pull_counts()
        .iter()
        .map(|&n| ucb_radius(n, est.n_agents(), est.n_arms(), t))
        .collect()
}

/// Arms whose upper confidence bound reaches the lower bound of the empirical best.
///
/// `t` is the round used in the radius; the empirical best arm is the lowest
/// index among maximal estimates.
pub fn estimate_favorite_sets(est: &EstimatorState, alpha: f64, t: u64) -> FavoriteSets {
    let z = radii(est, t);
    let k = est.n_arms();
    let sets = (0..est.n_agents())
        .map(|i| {
            let row: Vec<f64> = (0..k).map(|a| est.estimate(i, a)).collect();
            let best = (0..k).fold(0, |b, a| if row[a] > row[b] { a } else { b });
            let lower = row[best] - alpha * z[best];
            (0..k)
                .filter(|&a| a == best || z[a].is_infinite() || row[a] + alpha * z[a] >= lower)
                .collect()
        })
        .collect();
    FavoriteSets::from_sets(sets, k).expect("estimated sets are nonempty and in range")
}

/// Probability of a forced exploration round at round `t`.
pub fn exploration_probability(t: u64, gamma: f64) -> f64 {
    (t.max(1) as f64).powf(-(1.0 - gamma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PfStep {
    pub policy: Policy,
    pub forced: bool,
    /// Estimated favourite sets, absent on forced rounds.
    pub sets: Option<FavoriteSets>,
}

/// Procedural step: forced uniform exploration with probability
/// `t^{-(1-γ)}`, otherwise the PF optimum under estimated favourite sets.
pub fn step_pf<R: Rng + ?Sized>(
    est: &EstimatorState,
    t: u64,
    gamma: f64,
    alpha: f64,
    rng: &mut R,
    settings: &SolverSettings,
) -> Result<PfStep> {
    if rng.random::<f64>() < exploration_probability(t, gamma) {
        let arm = rng.random_range(0..est.n_arms());
        return Ok(PfStep {
            policy: Policy::one_hot(arm, est.n_arms()),
            forced: true,
            sets: None,
        });
    }
    let sets = estimate_favorite_sets(est, alpha, t);
    let (policy, _) = pf_optimal_for_sets(&sets, settings)?;
    Ok(PfStep {
        policy,
        forced: false,
        sets: Some(sets),
    })
}

fn capped_bonus(est: &EstimatorState, alpha: f64, t: u64) -> Vec<f64> {
    radii(est, t)
        .into_iter()
        .map(|z| alpha * z.min(RADIUS_SENTINEL))
        .collect()
}

/// Equality step: minimises `D̂(p) − α Σ p_k z_k` over the simplex.
pub fn step_ef(
    est: &EstimatorState,
    t: u64,
    alpha: f64,
    settings: &SolverSettings,
) -> Result<Policy> {
    let bonus = capped_bonus(est, alpha, t);
    minimize_inequality_with_bonus(&est.estimates(), &bonus, settings).map(|(p, _)| p)
}

/// Utilitarian step: one-hot on the arm maximising estimated column sum plus bonus.
pub fn step_uf(est: &EstimatorState, t: u64, alpha: f64) -> Policy {
    let bonus = capped_bonus(est, alpha, t);
    let scores: Vec<f64> = est
        .estimates()
        .column_sums()
        .iter()
        .zip(&bonus)
        .map(|(s, b)| s + b)
        .collect();
    Policy::one_hot(argmax_lowest(&scores), est.n_arms())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub method: Method,
    pub horizon: u64,
    pub gamma: Option<f64>,
    /// `None` selects the method default.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub trace_every: u64,
    pub tie_tolerance: f64,
}

impl LearnConfig {
    pub fn new(method: Method, horizon: u64, seed: u64) -> Self {
        Self {
            method,
            horizon,
            gamma: (method == Method::Pf).then_some(0.7),
            alpha: None,
            seed,
            trace_every: 1,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }

    pub fn alpha_for(&self, n_agents: usize) -> f64 {
        self.alpha.unwrap_or_else(|| self.method.default_alpha(n_agents))
    }

    pub fn validate(&self, n_arms: usize) -> Result<()> {
        if self.horizon < n_arms as u64 {
            return Err(Error::InvalidInput(format!(
                "horizon {} is shorter than the {} initial pulls",
                self.horizon, n_arms
            )));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidInput("trace_every must be positive".into()));
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidInput(format!("alpha must be finite and >= 0, got {a}")));
            }
        }
        match (self.method, self.gamma) {
            (Method::Pf, None) => Err(Error::InvalidInput("PF learning requires gamma".into())),
            (Method::Pf, Some(g)) if !(g > 0.0 && g < 1.0) => {
                Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {g}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub t: u64,
    pub policy: Policy,
    pub arm: usize,
    pub rewards: Vec<f64>,
    pub forced: bool,
    /// Whether the estimated favourite sets differed from the true ones (PF only).
    pub mismatch: Option<bool>,
    pub pf: f64,
    pub ef: Option<f64>,
    pub uf: Option<f64>,
    pub regret_pf: Option<f64>,
    pub regret_ef: Option<f64>,
    pub regret_uf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnOutcome {
    pub policy: Policy,
    pub trace: Vec<RoundTrace>,
    pub estimates: RewardMatrix,
    pub pull_counts: Vec<u64>,
    pub regret_pf: Option<f64>,
    pub regret_ef: Option<f64>,
    pub regret_uf: f64,
}

struct RegretTracker {
    sets: FavoriteSets,
    d_star: Option<f64>,
    u_star: f64,
    pf: f64,
    ef: f64,
    uf: f64,
}

impl RegretTracker {
    fn new(means: &RewardMatrix, tol: f64) -> Result<Self> {
        let d_star = if means.n_agents() >= 2 {
            Some(optimal_inequality(means)?)
        } else {
            None
        };
        Ok(Self {
            sets: favorite_sets(means, tol),
            d_star,
            u_star: optimal_total_utility(means),
            pf: 0.0,
            ef: 0.0,
            uf: 0.0,
        })
    }

    fn mismatch(&self, estimated: Option<&FavoriteSets>) -> bool {
        estimated.is_none_or(|s| s != &self.sets)
    }

    fn update(&mut self, means: &RewardMatrix, policy: &Policy, mismatch: bool) -> Result<()> {
        if mismatch {
            self.pf += 1.0;
        }
        if let Some(d_star) = self.d_star {
            self.ef += (inequality_d(means, policy)? - d_star).max(0.0);
        }
        let total: f64 = utilities(means, policy)?.iter().sum();
        self.uf += (self.u_star - total).max(0.0);
        Ok(())
    }
}

/// Runs the learner for `cfg.horizon` rounds against `model`.
///
/// The returned policy is the last one produced by an optimisation step;
/// forced exploration rounds do not replace it (uniform if none ran).
///
/// Rounds `1..=K` pull each arm once (flagged as forced); the remaining
/// rounds play the method's step policy. Scores and regrets are measured
/// against the model's true means.
pub fn learn_policy(model: &RewardModel, cfg: &LearnConfig) -> Result<LearnOutcome> {
    learn_policy_with(model, cfg, &SolverSettings::default())
}

pub fn learn_policy_with(
    model: &RewardModel,
    cfg: &LearnConfig,
    settings: &SolverSettings,
) -> Result<LearnOutcome> {
    let n = model.n_agents();
    let k = model.n_arms();
    cfg.validate(k)?;
    if cfg.method == Method::Ef && n < 2 {
        return Err(Error::UndefinedInequality);
    }
    let means = model.means();
    let alpha = cfg.alpha_for(n);
    let mut policy_rng = stream_rng(cfg.seed, 0);
    let mut reward_rng = stream_rng(cfg.seed, 1);
    let mut est = EstimatorState::new(n, k);
    let mut tracker = RegretTracker::new(&means, cfg.tie_tolerance)?;
    let mut pf_cache: HashMap<FavoriteSets, Policy> = HashMap::new();
    let mut score_cache: HashMap<Vec<u64>, (f64, Option<f64>, Option<f64>)> = HashMap::new();
    let mut trace = Vec::new();
    let mut policy = Policy::uniform(k);
    let mut rewards = vec![0.0; n];

    for t in 1..=cfg.horizon {
        let (played, forced, estimated) = if t <= k as u64 {
            (Policy::one_hot((t - 1) as usize, k), true, None)
        } else {
            match cfg.method {
                Method::Pf => {
                    let gamma = cfg.gamma.expect("validated");
                    if policy_rng.random::<f64>() < exploration_probability(t, gamma) {
                        let arm = policy_rng.random_range(0..k);
                        (Policy::one_hot(arm, k), true, None)
                    } else {
                        let sets = estimate_favorite_sets(&est, alpha, t);
                        let p = match pf_cache.get(&sets) {
                            Some(p) => p.clone(),
                            None => {
                                let (p, _) = pf_optimal_for_sets(&sets, settings)?;
                                pf_cache.insert(sets.clone(), p.clone());
                                p
                            }
                        };
                        (p, false, Some(sets))
                    }
                }
                Method::Ef => (step_ef(&est, t, alpha, settings)?, false, None),
                Method::Uf => (step_uf(&est, t, alpha), false, None),
            }
        };
        let arm = played.sample_arm(&mut policy_rng);
        for (i, r) in rewards.iter_mut().enumerate() {
            *r = model.sample(i, arm, &mut reward_rng);
        }
        est.record(arm, &rewards);

        let mismatch = (cfg.method == Method::Pf).then(|| tracker.mismatch(estimated.as_ref()));
        tracker.update(&means, &played, mismatch.unwrap_or(false))?;

        if t % cfg.trace_every == 0 || t == cfg.horizon {
            let key: Vec<u64> = played.probs().iter().map(|p| p.to_bits()).collect();
            let (pf, ef, uf) = match score_cache.get(&key) {
                Some(&s) => s,
                None => {
                    let s = (
                        pf_score(&means, &played, cfg.tie_tolerance)?.score,
                        tracker.d_star.map(|_| ef_score(&means, &played)).transpose()?,
                        uf_score(&means, &played).ok(),
                    );
                    score_cache.insert(key, s);
                    s
                }
            };
            trace.push(RoundTrace {
                t,
                policy: played.clone(),
                arm,
                rewards: rewards.clone(),
                forced,
                mismatch,
                pf,
                ef,
                uf,
                regret_pf: mismatch.map(|_| tracker.pf),
                regret_ef: tracker.d_star.map(|_| tracker.ef),
                regret_uf: tracker.uf,
            });
        }
        if !forced {
            policy = played;
        }
    }

    Ok(LearnOutcome {
        policy,
        trace,
        estimates: est.estimates(),
        pull_counts: est.pull_counts().to_vec(),
        regret_pf: (cfg.method == Method::Pf).then_some(tracker.pf),
        regret_ef: tracker.d_star.map(|_| tracker.ef),
        regret_uf: tracker.uf,
    })
}

/// Cumulative regrets recomputed from the rows of `trace`.
///
/// Each row contributes one round, so the result matches the tracked regrets
/// only for traces recorded with `trace_every = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    pub pf: Vec<f64>,
    pub ef: Vec<f64>,
    pub uf: Vec<f64>,
}

pub fn regrets(trace: &[RoundTrace], means: &RewardMatrix) -> Result<RegretSeries> {
    if trace.is_empty() {
        return Err(Error::InvalidInput("empty trace".into()));
    }
    let mut tracker = RegretTracker::new(means, DEFAULT_TIE_TOLERANCE)?;
    let mut out = RegretSeries {
        pf: Vec::with_capacity(trace.len()),
        ef: Vec::with_capacity(trace.len()),
        uf: Vec::with_capacity(trace.len()),
    };
    for row in trace {
        tracker.update(means, &row.policy, row.mismatch.unwrap_or(false))?;
        out.pf.push(tracker.pf);
        out.ef.push(tracker.ef);
        out.uf.push(tracker.uf);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[RoundTrace], n_arms: usize) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((0..n_arms).map(|k| format!("policy_{k}")));
    header.extend(
        ["arm", "forced", "pf", "ef", "uf", "regret_pf", "regret_ef", "regret_uf"]
            .iter()
            .map(|s| s.to_string()),
    );
    writeln!(w, "{}", header.join(","))?;
    for row in trace {
        let mut cells = vec![row.t.to_string()];
        cells.extend(row.policy.probs().iter().map(|&p| fmt_sig(p)));
        cells.push(row.arm.to_string());
        cells.push(row.forced.to_string());
        cells.push(fmt_sig(row.pf));
        cells.push(opt(row.ef));
        cells.push(opt(row.uf));
        cells.push(opt(row.regret_pf));
        cells.push(opt(row.regret_ef));
        cells.push(fmt_sig(row.regret_uf));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
