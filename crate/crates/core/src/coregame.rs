//! Outcome-core and procedural-core membership by coalition enumeration.
//!
//! A coalition `A` blocks `P` when some `P'` satisfies
//! `(|A|/N) v_i(P') ≥ v_i(P)` for every member with one strict inequality.
//! Over the simplex this is decided by one LP per coalition: maximise the
//! summed margins subject to each margin being nonnegative; the coalition
//! blocks iff that optimum exceeds the tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::model::{favorite_sets, Policy, RewardMatrix};
use crate::scores::pf_score;

/// Coalitions are enumerated exhaustively, so the agent count is capped.
pub const MAX_ENUMERATED_AGENTS: usize = 20;

/// Default threshold above which a summed margin counts as blocking.
pub const BLOCKING_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreVerdict {
    pub in_core: bool,
    /// Zero-based agent indices of the first blocking coalition found.
    pub blocking_coalition: Option<Vec<usize>>,
    pub blocking_policy: Option<Policy>,
    /// Largest summed margin over all coalitions (≤ tolerance when in core).
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoreKind {
    /// Agents value policies by decision share.
    Procedural,
    /// Agents value policies by expected utility.
    Outcome,
}

/// Coalitions of `n` agents ordered by size, then lexicographically.
fn coalitions_by_size(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (1..=n).flat_map(move |size| combinations(n, size))
}

fn combinations(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.clone());
        let mut pos = size;
        while pos > 0 {
            pos -= 1;
            if idx[pos] < n - size + pos {
                idx[pos] += 1;
                for q in pos + 1..size {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return out;
            }
        }
        if size == 0 {
            return out;
        }
    }
}

fn check_core(
    values: &[Vec<f64>],
    policy: &Policy,
    tol: f64,
) -> Result<CoreVerdict> {
    let n = values.len();
    let k = policy.n_arms();
    if n > MAX_ENUMERATED_AGENTS {
        return Err(Error::TooManyAgents {
            n_agents: n,
            max: MAX_ENUMERATED_AGENTS,
        });
    }
    let current: Vec<f64> = values
        .iter()
        .map(|row| row.iter().zip(policy.probs()).map(|(v, p)| v * p).sum())
        .collect();

    let mut best_margin = f64::NEG_INFINITY;
    for coalition in coalitions_by_size(n) {
        let weight = coalition.len() as f64 / n as f64;
        let mut objective = vec![0.0; k];
        for &i in &coalition {
            for (o, v) in objective.iter_mut().zip(&values[i]) {
                *o += weight * v;
            }
        }
        let mut lp = LinearProgram::maximize(objective);
        for &i in &coalition {
            let row = values[i].iter().map(|v| weight * v).collect();
            lp.add_constraint(row, Relation::Ge, current[i]);
        }
        lp.add_constraint(vec![1.0; k], Relation::Eq, 1.0);
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Err(Error::NumericalInstability(
                    "blocking program over the simplex reported unbounded".into(),
                ))
            }
            LpStatus::Optimal => {}
        }
        let constant: f64 = coalition.iter().map(|&i| current[i]).sum();
        let margin = sol.objective_value - constant;
        best_margin = best_margin.max(margin);
        if margin > tol {
            let deviation = Policy::from_solver(sol.x);
            // Verify the witness directly before reporting it.
            let gains: Vec<f64> = coalition
                .iter()
                .map(|&i| {
                    let v: f64 = values[i].iter().zip(deviation.probs()).map(|(a, p)| a * p).sum();
                    weight * v - current[i]
                })
                .collect();
            let weakly = gains.iter().all(|&g| g >= -1e-8);
            let strictly = gains.iter().sum::<f64>() > tol;
            if !(weakly && strictly) {
                return Err(Error::NumericalInstability(format!(
                    "blocking witness for coalition {coalition:?} failed verification"
                )));
            }
            return Ok(CoreVerdict {
                in_core: false,
                blocking_coalition: Some(coalition),
                blocking_policy: Some(deviation),
                margin,
            });
        }
    }
    Ok(CoreVerdict {
        in_core: true,
        blocking_coalition: None,
        blocking_policy: None,
        margin: best_margin.max(0.0),
    })
}

fn dims(means: &RewardMatrix, policy: &Policy) -> Result<()> {
    if means.n_arms() != policy.n_arms() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} arms but policy has {}",
            means.n_arms(),
            policy.n_arms()
        )));
    }
    Ok(())
}

/// Procedural core: agents value a policy by the mass on their favourite arms.
///
/// `tie_tolerance` defines favourite sets; `blocking_tol` is the margin threshold.
pub fn check_procedural_core(
    means: &RewardMatrix,
    policy: &Policy,
    tie_tolerance: f64,
    blocking_tol: f64,
) -> Result<CoreVerdict> {
    dims(means, policy)?;
    let sets = favorite_sets(means, tie_tolerance);
    let values: Vec<Vec<f64>> = (0..sets.n_agents()).map(|i| sets.indicator(i)).collect();
    check_core(&values, policy, blocking_tol)
}

/// Outcome core: agents value a policy by expected utility.
pub fn check_outcome_core(
    means: &RewardMatrix,
    policy: &Policy,
    blocking_tol: f64,
) -> Result<CoreVerdict> {
    dims(means, policy)?;
    let values: Vec<Vec<f64>> = means.rows().map(<[f64]>::to_vec).collect();
    check_core(&values, policy, blocking_tol)
}

pub fn check(
    kind: CoreKind,
    means: &RewardMatrix,
    policy: &Policy,
    tie_tolerance: f64,
    blocking_tol: f64,
) -> Result<CoreVerdict> {
    match kind {
        CoreKind::Procedural => check_procedural_core(means, policy, tie_tolerance, blocking_tol),
        CoreKind::Outcome => check_outcome_core(means, policy, blocking_tol),
    }
}

/// True iff every agent can be given its full `1/N` share on favourite arms.
pub fn is_procedurally_fair(
    means: &RewardMatrix,
    policy: &Policy,
    tie_tolerance: f64,
    tol: f64,
) -> Result<bool> {
    Ok(pf_score(means, policy, tie_tolerance)?.score >= 1.0 - tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_TIE_TOLERANCE;
    use crate::policies::{pf_optimal, SolverSettings};
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> RewardMatrix {
        RewardMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn p(v: &[f64]) -> Policy {
        Policy::new(v.to_vec()).unwrap()
    }

    #[test]
    fn coalition_order() {
        let all: Vec<Vec<usize>> = coalitions_by_size(3).collect();
        assert_eq!(
            all,
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0, 1, 2]
            ]
        );
        assert_eq!(coalitions_by_size(5).count(), 31);
    }

    #[test]
    fn nash_optimum_blocked_in_procedural_core() {
        let b11 = m(&[&[1.0, 0.99], &[0.0, 1.0]]);
        let v = check_procedural_core(&b11, &p(&[0.0, 1.0]), 0.0, BLOCKING_TOLERANCE).unwrap();
        assert!(!v.in_core);
        assert_eq!(v.blocking_coalition, Some(vec![0]));
        assert_eq!(v.blocking_policy.unwrap().probs(), &[1.0, 0.0]);
        assert_abs_diff_eq!(v.margin, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn single_agent_on_favourite_is_in_core() {
        let one = m(&[&[0.2, 0.9, 0.4]]);
        let pol = Policy::one_hot(1, 3);
        assert!(check_procedural_core(&one, &pol, 0.0, BLOCKING_TOLERANCE).unwrap().in_core);
        assert!(check_outcome_core(&one, &pol, BLOCKING_TOLERANCE).unwrap().in_core);
    }

    #[test]
    fn pf_policy_of_worked_example_in_core() {
        let a = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let (pol, _) = pf_optimal(&a, 0.0, &SolverSettings::default()).unwrap();
        let v = check_procedural_core(&a, &pol, 0.0, BLOCKING_TOLERANCE).unwrap();
        assert!(v.in_core, "{v:?}");
        // The uniform policy is blocked by the two agents favouring arm 1.
        let v = check_procedural_core(&a, &p(&[0.5, 0.5]), 0.0, BLOCKING_TOLERANCE).unwrap();
        assert!(!v.in_core);
        assert_eq!(v.blocking_coalition, Some(vec![0, 1]));
    }

    #[test]
    fn outcome_core_witness() {
        let id = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = check_outcome_core(&id, &p(&[1.0, 0.0]), BLOCKING_TOLERANCE).unwrap();
        assert!(!v.in_core);
        assert_eq!(v.blocking_coalition, Some(vec![1]));
        assert_eq!(v.blocking_policy.unwrap().probs(), &[0.0, 1.0]);
    }

    #[test]
    fn procedural_fairness_predicate() {
        let a = m(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let tol = 1e-9;
        assert!(is_procedurally_fair(&a, &p(&[2.0 / 3.0, 1.0 / 3.0]), DEFAULT_TIE_TOLERANCE, tol).unwrap());
        assert!(!is_procedurally_fair(&a, &p(&[0.5, 0.5]), DEFAULT_TIE_TOLERANCE, tol).unwrap());
        let single_arm = m(&[&[0.3], &[0.8]]);
        assert!(is_procedurally_fair(&single_arm, &p(&[1.0]), DEFAULT_TIE_TOLERANCE, tol).unwrap());
    }

    #[test]
    fn enumeration_bound() {
        let big = RewardMatrix::from_flat(21, 2, vec![0.5; 42]).unwrap();
        assert!(matches!(
            check_procedural_core(&big, &Policy::uniform(2), 0.0, BLOCKING_TOLERANCE),
            Err(Error::TooManyAgents { .. })
        ));
    }
}
