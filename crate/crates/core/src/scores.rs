//! Procedural, equality and utilitarian fairness scores of a policy,
//! always evaluated against the true mean matrix.
//!
//! The procedural score is the value of a bipartite allocation LP: every agent
//! may route up to `1/N` of probability to its favourite arms, and every arm
//! `j` can absorb at most `p_j`. It is a max-flow problem in disguise, but it
//! is solved with the crate's LP kernel.

use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::model::{
    favorite_sets, inequality_d, utilities, FavoriteSets, Policy, RewardMatrix, ShareAllocation,
};
use crate::policies;

#[derive(Clone, Debug, PartialEq)]
pub struct PfScore {
    pub score: f64,
    pub allocation: ShareAllocation,
}

/// Procedural fairness score of `policy` together with a maximising allocation.
pub fn pf_score(means: &RewardMatrix, policy: &Policy, tol: f64) -> Result<PfScore> {
    if means.n_arms() != policy.n_arms() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} arms but policy has {}",
            means.n_arms(),
            policy.n_arms()
        )));
    }
    pf_score_for_sets(&favorite_sets(means, tol), policy)
}

pub fn pf_score_for_sets(sets: &FavoriteSets, policy: &Policy) -> Result<PfScore> {
    let n = sets.n_agents();
    let k = sets.n_arms();
    if policy.n_arms() != k {
        return Err(Error::DimensionMismatch("favourite sets and policy differ in arms".into()));
    }
    // One LP variable per (agent, favourite arm) pair.
    let vars: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| sets.set(i).iter().map(move |&j| (i, j)))
        .collect();
    let mut lp = LinearProgram::maximize(vec![1.0; vars.len()]);
    let share = 1.0 / n as f64;
    for i in 0..n {
        let row = vars.iter().map(|&(a, _)| if a == i { 1.0 } else { 0.0 }).collect();
        lp.add_constraint(row, Relation::Le, share);
    }
    for j in 0..k {
        if vars.iter().any(|&(_, b)| b == j) {
            let row = vars.iter().map(|&(_, b)| if b == j { 1.0 } else { 0.0 }).collect();
            lp.add_constraint(row, Relation::Le, policy.probs()[j]);
        }
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NumericalInstability(format!(
            "procedural score LP returned {:?}",
            sol.status
        )));
    }
    let mut shares = vec![0.0; n * k];
    for (&(i, j), &y) in vars.iter().zip(&sol.x) {
        shares[i * k + j] = y.max(0.0);
    }
    Ok(PfScore {
        score: sol.objective_value.clamp(0.0, 1.0),
        allocation: ShareAllocation::from_flat(n, k, shares),
    })
}

fn dstar_cache() -> &'static RwLock<HashMap<(usize, Vec<u64>), f64>> {
    static CACHE: OnceLock<RwLock<HashMap<(usize, Vec<u64>), f64>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Minimum of the inequality measure over all policies, memoised per matrix.
///
/// The minimiser may not be unique but the minimum is, so the memo is sound.
pub fn optimal_inequality(means: &RewardMatrix) -> Result<f64> {
    if means.n_agents() < 2 {
        return Err(Error::UndefinedInequality);
    }
    let key = (
        means.n_arms(),
        means.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
    );
    if let Some(&d) = dstar_cache().read().expect("cache lock").get(&key) {
        return Ok(d);
    }
    let (_, d) = policies::ef_optimal_with_value(means, &policies::SolverSettings::default())?;
    dstar_cache().write().expect("cache lock").insert(key, d);
    Ok(d)
}

/// `1 - |D(P) - D(P*)|`; undefined for a single agent.
pub fn ef_score(means: &RewardMatrix, policy: &Policy) -> Result<f64> {
    let d = inequality_d(means, policy)?;
    let d_star = optimal_inequality(means)?;
    Ok((1.0 - (d - d_star).abs()).clamp(0.0, 1.0))
}

/// Largest achievable total utility: the best column sum.
pub fn optimal_total_utility(means: &RewardMatrix) -> f64 {
    means.column_sums().into_iter().fold(0.0, f64::max)
}

/// Total utility of `policy` as a fraction of the best achievable total.
pub fn uf_score(means: &RewardMatrix, policy: &Policy) -> Result<f64> {
    let total: f64 = utilities(means, policy)?.iter().sum();
    let best = optimal_total_utility(means);
    if best <= 0.0 {
        return Err(Error::UndefinedUtility);
    }
    Ok((total / best).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub pf: f64,
    /// `None` when fewer than two agents make the inequality measure undefined.
    pub ef: Option<f64>,
    pub uf: f64,
    pub inequality: Option<f64>,
    pub optimal_inequality: Option<f64>,
    pub total_utility: f64,
    pub optimal_total_utility: f64,
}

impl FairnessReport {
    /// True when `self` is at least as good on every score and better on one.
    /// An undefined equality score compares equal to itself.
    pub fn pareto_dominates(&self, other: &FairnessReport) -> bool {
        let pairs = [
            (Some(self.pf), Some(other.pf)),
            (self.ef, other.ef),
            (Some(self.uf), Some(other.uf)),
        ];
        let mut strict = false;
        for (a, b) in pairs {
            match (a, b) {
                (Some(a), Some(b)) => {
                    if a < b {
                        return false;
                    }
                    strict |= a > b;
                }
                (None, None) => {}
                _ => return false,
            }
        }
        strict
    }
}

pub fn score_all(means: &RewardMatrix, policy: &Policy, tol: f64) -> Result<FairnessReport> {
    let pf = pf_score(means, policy, tol)?.score;
    let uf = uf_score(means, policy)?;
    let (ef, inequality, optimal) = if means.n_agents() >= 2 {
        let d = inequality_d(means, policy)?;
        let d_star = optimal_inequality(means)?;
        (Some(ef_score(means, policy)?), Some(d), Some(d_star))
    } else {
        (None, None, None)
    };
    Ok(FairnessReport {
        pf,
        ef,
        uf,
        inequality,
        optimal_inequality: optimal,
        total_utility: utilities(means, policy)?.iter().sum(),
        optimal_total_utility: optimal_total_utility(means),
    })
}
