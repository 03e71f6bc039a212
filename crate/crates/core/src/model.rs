//! Domain types and the elementary per-policy quantities: utilities,
//! decision shares, the pairwise inequality measure and both Nash welfares.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used to decide that two means are tied for the maximum.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-9;

const POLICY_NEG_SLACK: f64 = 1e-12;
const POLICY_SUM_SLACK: f64 = 1e-9;

/// N×K matrix of mean rewards, row-major, every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardMatrix {
    n_agents: usize,
    n_arms: usize,
    means: Vec<f64>,
}

impl RewardMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_agents = rows.len();
        let n_arms = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_arms) {
            return Err(Error::InvalidMatrix("rows have different lengths".into()));
        }
        Self::from_flat(n_agents, n_arms, rows.into_iter().flatten().collect())
    }

    pub fn from_flat(n_agents: usize, n_arms: usize, means: Vec<f64>) -> Result<Self> {
        if n_agents == 0 || n_arms == 0 {
            return Err(Error::InvalidMatrix(
                "need at least one agent and one arm".into(),
            ));
        }
        if means.len() != n_agents * n_arms {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries, got {}",
                n_agents * n_arms,
                means.len()
            )));
        }
        if let Some((idx, v)) = means
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidMatrix(format!(
                "entry ({}, {}) = {v} is outside [0, 1]",
                idx / n_arms,
                idx % n_arms
            )));
        }
        Ok(Self {
            n_agents,
            n_arms,
            means,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    #[inline]
    pub fn get(&self, agent: usize, arm: usize) -> f64 {
        self.means[agent * self.n_arms + arm]
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.means[agent * self.n_arms..(agent + 1) * self.n_arms]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.means.chunks(self.n_arms)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.means
    }

    /// Total mean reward of each arm summed over agents.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_arms];
        for row in self.rows() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Multiplies every entry by `factor`, which must keep entries in `[0, 1]`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_flat(
            self.n_agents,
            self.n_arms,
            self.means.iter().map(|v| v * factor).collect(),
        )
    }

    /// Same matrix with agents reordered so that new agent `i` is old agent `order[i]`.
    pub fn permute_agents(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_agents {
            return Err(Error::DimensionMismatch(
                "permutation length differs from agent count".into(),
            ));
        }
        Self::new(order.iter().map(|&i| self.row(i).to_vec()).collect())
    }
}

/// A probability distribution over arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    probs: Vec<f64>,
}

impl Policy {
    /// Validates `probs`; slightly negative entries (≥ −1e-12) are clamped to zero.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPolicy("policy has no arms".into()));
        }
        if let Some((k, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < -POLICY_NEG_SLACK)
        {
            return Err(Error::InvalidPolicy(format!("probability of arm {k} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > POLICY_SUM_SLACK {
            return Err(Error::InvalidPolicy(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            probs: probs.into_iter().map(|p| p.max(0.0)).collect(),
        })
    }

    /// Builds a policy from solver output: clamps negatives and renormalises.
    pub(crate) fn from_solver(mut probs: Vec<f64>) -> Self {
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum: f64 = probs.iter().sum();
        debug_assert!(sum > 0.0);
        for p in probs.iter_mut() {
            *p /= sum;
        }
        Self { probs }
    }

    pub fn uniform(n_arms: usize) -> Self {
        Self {
            probs: vec![1.0 / n_arms as f64; n_arms],
        }
    }

    pub fn one_hot(arm: usize, n_arms: usize) -> Self {
        let mut probs = vec![0.0; n_arms];
        probs[arm] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_arms(&self) -> usize {
        self.probs.len()
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &Policy, weight: f64) -> Result<Policy> {
        if self.n_arms() != other.n_arms() {
            return Err(Error::DimensionMismatch("policies differ in arm count".into()));
        }
        Ok(Policy::from_solver(
            self.probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| weight * a + (1.0 - weight) * b)
                .collect(),
        ))
    }

    /// Inverse-CDF draw of an arm index.
    pub fn sample_arm<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = k;
                acc += p;
                if u < acc {
                    return k;
                }
            }
        }
        last_positive
    }

    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-agent sets of favourite arms (ascending arm indices, never empty).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FavoriteSets {
    sets: Vec<Vec<usize>>,
    n_arms: usize,
}

impl FavoriteSets {
    /// Sets must be nonempty, ascending and within `0..n_arms`.
    pub fn from_sets(sets: Vec<Vec<usize>>, n_arms: usize) -> Result<Self> {
        for (i, s) in sets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("favourite set of agent {i} is empty")));
            }
            if s.windows(2).any(|w| w[0] >= w[1]) || s.iter().any(|&k| k >= n_arms) {
                return Err(Error::InvalidInput(format!(
                    "favourite set of agent {i} is not an ascending subset of the arms"
                )));
            }
        }
        Ok(Self { sets, n_arms })
    }

    pub fn n_agents(&self) -> usize {
        self.sets.len()
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn set(&self, agent: usize) -> &[usize] {
        &self.sets[agent]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn contains(&self, agent: usize, arm: usize) -> bool {
        self.sets[agent].binary_search(&arm).is_ok()
    }

    /// 0/1 indicator row of agent `agent` over all arms.
    pub fn indicator(&self, agent: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n_arms];
        for &k in &self.sets[agent] {
            x[k] = 1.0;
        }
        x
    }

    /// True when every agent favours every arm.
    pub fn all_indifferent(&self) -> bool {
        self.sets.iter().all(|s| s.len() == self.n_arms)
    }
}

/// Decision-share matrix: `shares[i][j]` is the mass agent `i` places on arm `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareAllocation {
    n_agents: usize,
    n_arms: usize,
    shares: Vec<f64>,
}

impl ShareAllocation {
    pub(crate) fn from_flat(n_agents: usize, n_arms: usize, shares: Vec<f64>) -> Self {
        debug_assert_eq!(shares.len(), n_agents * n_arms);
        Self {
            n_agents,
            n_arms,
            shares,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn get(&self, agent: usize, arm: usize) -> f64 {
        self.shares[agent * self.n_arms + arm]
    }

    pub fn row(&self, agent: usize) -> &[f64] {
        &self.shares[agent * self.n_arms..(agent + 1) * self.n_arms]
    }

    pub fn row_sum(&self, agent: usize) -> f64 {
        self.row(agent).iter().sum()
    }

    /// Per-arm totals `p_j = Σ_i y_ij`.
    pub fn arm_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_arms];
        for row in self.shares.chunks(self.n_arms) {
            for (t, y) in totals.iter_mut().zip(row) {
                *t += y;
            }
        }
        totals
    }

    pub fn total(&self) -> f64 {
        self.shares.iter().sum()
    }
}

/// Reward distribution of a single (agent, arm) pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RewardDist {
    PointMass(f64),
    Bernoulli(f64),
    BetaMeanStd { mean: f64, std: f64 },
}

impl RewardDist {
    pub fn mean(&self) -> f64 {
        match *self {
            RewardDist::PointMass(m) | RewardDist::Bernoulli(m) => m,
            RewardDist::BetaMeanStd { mean, .. } => mean,
        }
    }
}

/// Beta shape parameters `(a, b)` with the given mean and standard deviation.
pub fn beta_shape(mean: f64, std: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && mean < 1.0) {
        return Err(Error::InvalidModel(format!(
            "beta mean {mean} must lie strictly inside (0, 1)"
        )));
    }
    let var = std * std;
    if !(std > 0.0) || var >= mean * (1.0 - mean) {
        return Err(Error::InvalidModel(format!(
            "std {std} is infeasible for beta mean {mean} (need std^2 < {})",
            mean * (1.0 - mean)
        )));
    }
    let nu = mean * (1.0 - mean) / var - 1.0;
    Ok((mean * nu, (1.0 - mean) * nu))
}

#[derive(Clone, Debug)]
enum Sampler {
    Point(f64),
    Bernoulli(f64),
    Beta(Beta<f64>),
}

/// Per-(agent, arm) reward distributions of a bandit instance.
#[derive(Clone, Debug)]
pub struct RewardModel {
    n_agents: usize,
    n_arms: usize,
    dists: Vec<RewardDist>,
    samplers: Vec<Sampler>,
}

impl RewardModel {
    pub fn new(n_agents: usize, n_arms: usize, dists: Vec<RewardDist>) -> Result<Self> {
        if n_agents == 0 || n_arms == 0 || dists.len() != n_agents * n_arms {
            return Err(Error::InvalidModel(format!(
                "expected {}x{} distributions, got {}",
                n_agents,
                n_arms,
                dists.len()
            )));
        }
        let samplers = dists
            .iter()
            .map(|d| match *d {
                RewardDist::PointMass(m) if (0.0..=1.0).contains(&m) => Ok(Sampler::Point(m)),
                RewardDist::PointMass(m) => Err(Error::InvalidModel(format!(
                    "point mass {m} outside [0, 1]"
                ))),
                RewardDist::Bernoulli(m) if m > 0.0 && m < 1.0 => Ok(Sampler::Bernoulli(m)),
                RewardDist::Bernoulli(m) => Err(Error::InvalidModel(format!(
                    "bernoulli mean {m} must lie strictly inside (0, 1)"
                ))),
                RewardDist::BetaMeanStd { mean, std } => {
                    let (a, b) = beta_shape(mean, std)?;
                    Beta::new(a, b)
                        .map(Sampler::Beta)
                        .map_err(|e| Error::InvalidModel(e.to_string()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_agents,
            n_arms,
            dists,
            samplers,
        })
    }

    pub fn point_masses(means: &RewardMatrix) -> Self {
        let dists = means.as_flat().iter().map(|&m| RewardDist::PointMass(m)).collect();
        Self::new(means.n_agents(), means.n_arms(), dists).expect("matrix entries are in [0, 1]")
    }

    pub fn bernoulli(means: &RewardMatrix) -> Result<Self> {
        let dists = means.as_flat().iter().map(|&m| RewardDist::Bernoulli(m)).collect();
        Self::new(means.n_agents(), means.n_arms(), dists)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn dist(&self, agent: usize, arm: usize) -> RewardDist {
        self.dists[agent * self.n_arms + arm]
    }

    /// The true mean matrix of the model.
    pub fn means(&self) -> RewardMatrix {
        RewardMatrix::from_flat(
            self.n_agents,
            self.n_arms,
            self.dists.iter().map(RewardDist::mean).collect(),
        )
        .expect("validated distributions have means in [0, 1]")
    }

    pub fn sample<R: Rng + ?Sized>(&self, agent: usize, arm: usize, rng: &mut R) -> f64 {
        match &self.samplers[agent * self.n_arms + arm] {
            Sampler::Point(m) => *m,
            Sampler::Bernoulli(m) => {
                if rng.random::<f64>() < *m {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Beta(b) => b.sample(rng).clamp(0.0, 1.0),
        }
    }
}

/// Draws one reward for `agent` pulling `arm`.
pub fn sample_reward<R: Rng + ?Sized>(
    model: &RewardModel,
    agent: usize,
    arm: usize,
    rng: &mut R,
) -> f64 {
    model.sample(agent, arm, rng)
}

/// Running empirical means and pull counts of a learner.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    n_agents: usize,
    n_arms: usize,
    estimates: Vec<f64>,
    pull_counts: Vec<u64>,
    step: u64,
}

impl EstimatorState {
    pub fn new(n_agents: usize, n_arms: usize) -> Self {
        Self {
            n_agents,
            n_arms,
            estimates: vec![0.0; n_agents * n_arms],
            pull_counts: vec![0; n_arms],
            step: 0,
        }
    }

    /// Builds a state directly from estimates and counts (used by tests and replays).
    pub fn from_parts(estimates: &RewardMatrix, pull_counts: Vec<u64>, step: u64) -> Result<Self> {
        if pull_counts.len() != estimates.n_arms() {
            return Err(Error::DimensionMismatch(
                "pull counts length differs from arm count".into(),
            ));
        }
        Ok(Self {
            n_agents: estimates.n_agents(),
            n_arms: estimates.n_arms(),
            estimates: estimates.as_flat().to_vec(),
            pull_counts,
            step,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_arms(&self) -> usize {
        self.n_arms
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    pub fn estimate(&self, agent: usize, arm: usize) -> f64 {
        self.estimates[agent * self.n_arms + arm]
    }

    pub fn estimates(&self) -> RewardMatrix {
        RewardMatrix::from_flat(self.n_agents, self.n_arms, self.estimates.clone())
            .expect("incremental means of [0, 1] rewards stay in [0, 1]")
    }

    /// Incremental-mean update after pulling `arm` and observing one reward per agent.
    pub fn record(&mut self, arm: usize, rewards: &[f64]) {
        debug_assert_eq!(rewards.len(), self.n_agents);
        self.pull_counts[arm] += 1;
        self.step += 1;
        let n = self.pull_counts[arm] as f64;
        for (i, &r) in rewards.iter().enumerate() {
            let e = &mut self.estimates[i * self.n_arms + arm];
            *e += (r - *e) / n;
            *e = e.clamp(0.0, 1.0);
        }
    }
}

fn check_dims(means: &RewardMatrix, policy: &Policy) -> Result<()> {
    if means.n_arms() != policy.n_arms() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} arms but policy has {}",
            means.n_arms(),
            policy.n_arms()
        )));
    }
    Ok(())
}

/// All arms within `tie_tolerance` of each agent's maximum mean.
pub fn favorite_sets(means: &RewardMatrix, tie_tolerance: f64) -> FavoriteSets {
    let sets = means
        .rows()
        .map(|row| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter()
                .enumerate()
                .filter(|(_, &v)| v >= best - tie_tolerance)
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    FavoriteSets {
        sets,
        n_arms: means.n_arms(),
    }
}

/// Expected utility `U_i = Σ_k p_k μ_ik` of each agent.
pub fn utilities(means: &RewardMatrix, policy: &Policy) -> Result<Vec<f64>> {
    check_dims(means, policy)?;
    Ok(means
        .rows()
        .map(|row| row.iter().zip(policy.probs()).map(|(m, p)| m * p).sum())
        .collect())
}

/// Decision share of each agent: policy mass on its favourite arms.
pub fn decision_shares(means: &RewardMatrix, policy: &Policy, tol: f64) -> Result<Vec<f64>> {
    check_dims(means, policy)?;
    Ok(shares_for_sets(&favorite_sets(means, tol), policy))
}

pub fn shares_for_sets(sets: &FavoriteSets, policy: &Policy) -> Vec<f64> {
    sets.sets()
        .iter()
        .map(|s| s.iter().map(|&k| policy.probs()[k]).sum())
        .collect()
}

/// Mean squared pairwise utility gap, `2/(N(N-1)) Σ_{i>j} (U_i - U_j)^2`.
pub fn inequality_of(utilities: &[f64]) -> Result<f64> {
    let n = utilities.len();
    if n < 2 {
        return Err(Error::UndefinedInequality);
    }
    let mut sum = 0.0;
    for i in 1..n {
        for j in 0..i {
            let d = utilities[i] - utilities[j];
            sum += d * d;
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

pub fn inequality_d(means: &RewardMatrix, policy: &Policy) -> Result<f64> {
    inequality_of(&utilities(means, policy)?)
}

pub fn nash_welfare_utilities(means: &RewardMatrix, policy: &Policy) -> Result<f64> {
    Ok(utilities(means, policy)?.iter().product())
}

pub fn nash_welfare_shares(means: &RewardMatrix, policy: &Policy, tol: f64) -> Result<f64> {
    Ok(decision_shares(means, policy, tol)?.iter().product())
}
