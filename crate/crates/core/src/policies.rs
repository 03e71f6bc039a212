//! Optimal policies for the five benchmarked objectives.
//!
//! * procedural (PF): decision-share Nash welfare over the transportation
//!   polytope, solved with pairwise Frank-Wolfe;
//! * equality (EF): minimum of the pairwise inequality measure, solved with
//!   accelerated projected gradient;
//! * utilitarian (UF): best column sum, closed form;
//! * utility Nash welfare (NSW): pairwise Frank-Wolfe over the simplex;
//! * generalized Gini index (GGI): ordered-weighted LP on the simplex kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::model::{favorite_sets, FavoriteSets, Policy, RewardMatrix, ShareAllocation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Exact line search along pairwise (away-to-toward) directions.
    LineSearch,
    /// Classic `2/(t+2)` Frank-Wolfe steps; projected gradient uses `1/(L√t)`.
    Diminishing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub duality_gap_tol: f64,
    pub step_rule: StepRule,
    /// Resolution of brute-force grid oracles in tests.
    pub grid_oracle_resolution: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            duality_gap_tol: 1e-8,
            step_rule: StepRule::LineSearch,
            grid_oracle_resolution: 200,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.duality_gap_tol > 0.0) {
            return Err(Error::InvalidInput(
                "solver needs max_iterations ≥ 1 and a positive gap tolerance".into(),
            ));
        }
        Ok(())
    }
}

/// Objectives with an optimal-policy solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Pf,
    Ef,
    Uf,
    Nsw,
    Ggi,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Pf,
        Objective::Ef,
        Objective::Uf,
        Objective::Nsw,
        Objective::Ggi,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Objective::Pf => "pf",
            Objective::Ef => "ef",
            Objective::Uf => "uf",
            Objective::Nsw => "nsw",
            Objective::Ggi => "ggi",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pf" => Ok(Objective::Pf),
            "ef" => Ok(Objective::Ef),
            "uf" => Ok(Objective::Uf),
            "nsw" => Ok(Objective::Nsw),
            "ggi" | "gg" => Ok(Objective::Ggi),
            other => Err(Error::InvalidInput(format!("unknown objective '{other}'"))),
        }
    }
}

/// Default GGI weights `w_i = 2^{-(i-1)}`.
pub fn default_ggi_weights(n_agents: usize) -> Vec<f64> {
    (0..n_agents).map(|i| 0.5f64.powi(i as i32)).collect()
}

/// Solves one objective with default GGI weights.
pub fn solve(
    objective: Objective,
    means: &RewardMatrix,
    tie_tolerance: f64,
    settings: &SolverSettings,
) -> Result<Policy> {
    match objective {
        Objective::Pf => pf_optimal(means, tie_tolerance, settings).map(|(p, _)| p),
        Objective::Ef => ef_optimal(means, settings),
        Objective::Uf => Ok(uf_optimal(means)),
        Objective::Nsw => nsw_optimal(means, settings),
        Objective::Ggi => ggi_optimal(means, &default_ggi_weights(means.n_agents()), settings),
    }
}

// ---------------------------------------------------------------------------
// Procedural fairness

/// Procedurally fair policy, ties broken by maximising decision-share Nash welfare.
pub fn pf_optimal(
    means: &RewardMatrix,
    tie_tolerance: f64,
    settings: &SolverSettings,
) -> Result<(Policy, ShareAllocation)> {
    pf_optimal_for_sets(&favorite_sets(means, tie_tolerance), settings)
}

fn decision_shares_from_totals(sets: &FavoriteSets, totals: &[f64], beta: &mut [f64]) {
    for (i, b) in beta.iter_mut().enumerate() {
        *b = sets.set(i).iter().map(|&j| totals[j]).sum();
    }
}

fn share_gradient(sets: &FavoriteSets, beta: &[f64], grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for (i, &b) in beta.iter().enumerate() {
        for &j in sets.set(i) {
            grad[j] += 1.0 / b;
        }
    }
}

/// Root of a decreasing derivative on `[0, hi]`, or `hi` if it stays positive.
fn concave_line_search(hi: f64, deriv: impl Fn(f64) -> f64) -> f64 {
    if deriv(hi) >= 0.0 {
        return hi;
    }
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Same as [`pf_optimal`] but for externally supplied (e.g. estimated) favourite sets.
pub fn pf_optimal_for_sets(
    sets: &FavoriteSets,
    settings: &SolverSettings,
) -> Result<(Policy, ShareAllocation)> {
    settings.validate()?;
    let n = sets.n_agents();
    let k = sets.n_arms();
    if n == 0 {
        return Err(Error::InvalidInput("no agents".into()));
    }
    let share = 1.0 / n as f64;

    let mut y = vec![0.0; n * k];
    for i in 0..n {
        let s = sets.set(i);
        for &j in s {
            y[i * k + j] = share / s.len() as f64;
        }
    }
    let mut totals = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            totals[j] += y[i * k + j];
        }
    }
    let mut beta = vec![0.0; n];
    let mut grad = vec![0.0; k];

    for iter in 0..settings.max_iterations {
        decision_shares_from_totals(sets, &totals, &mut beta);
        share_gradient(sets, &beta, &mut grad);
        let mut gap = 0.0;
        for l in 0..n {
            let best = sets.set(l).iter().map(|&j| grad[j]).fold(f64::NEG_INFINITY, f64::max);
            let held: f64 = sets.set(l).iter().map(|&j| y[l * k + j] * grad[j]).sum();
            gap += share * best - held;
        }
        if gap <= settings.duality_gap_tol {
            break;
        }
        match settings.step_rule {
            StepRule::LineSearch => {
                for l in 0..n {
                    share_gradient(sets, &beta, &mut grad);
                    let fav = sets.set(l);
                    let to = *fav
                        .iter()
                        .max_by(|&&a, &&b| grad[a].total_cmp(&grad[b]).then(b.cmp(&a)))
                        .expect("favourite sets are nonempty");
                    let from = fav
                        .iter()
                        .copied()
                        .filter(|&j| y[l * k + j] > 0.0)
                        .min_by(|&a, &b| grad[a].total_cmp(&grad[b]).then(a.cmp(&b)));
                    let Some(from) = from else { continue };
                    if from == to || grad[to] - grad[from] <= 0.0 {
                        continue;
                    }
                    // Agents whose decision share moves with the transfer.
                    let moved: Vec<(f64, f64)> = (0..n)
                        .filter_map(|i| {
                            let d = f64::from(u8::from(sets.contains(i, to)))
                                - f64::from(u8::from(sets.contains(i, from)));
                            (d != 0.0).then_some((beta[i], d))
                        })
                        .collect();
                    let cap = y[l * k + from];
                    let t = concave_line_search(cap, |t| {
                        moved.iter().map(|&(b, d)| d / (b + d * t)).sum()
                    });
                    let t = if cap - t <= 1e-15 * share { cap } else { t };
                    y[l * k + from] -= t;
                    y[l * k + to] += t;
                    if y[l * k + from] < 1e-300 {
                        y[l * k + from] = 0.0;
                    }
                    totals[from] -= t;
                    totals[to] += t;
                    decision_shares_from_totals(sets, &totals, &mut beta);
                }
            }
            StepRule::Diminishing => {
                let step = 2.0 / (iter as f64 + 2.0);
                for l in 0..n {
                    let to = *sets
                        .set(l)
                        .iter()
                        .max_by(|&&a, &&b| grad[a].total_cmp(&grad[b]).then(b.cmp(&a)))
                        .expect("favourite sets are nonempty");
                    for j in 0..k {
                        let target = if j == to { share } else { 0.0 };
                        y[l * k + j] += step * (target - y[l * k + j]);
                    }
                }
                totals.iter_mut().for_each(|t| *t = 0.0);
                for i in 0..n {
                    for j in 0..k {
                        totals[j] += y[i * k + j];
                    }
                }
            }
        }
    }

    // Recompute totals from the allocation to avoid drift.
    totals.iter_mut().for_each(|t| *t = 0.0);
    for i in 0..n {
        for j in 0..k {
            totals[j] += y[i * k + j];
        }
    }
    Ok((Policy::from_solver(totals), ShareAllocation::from_flat(n, k, y)))
}

// ---------------------------------------------------------------------------
// Equality fairness

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `min pᵀQp − c·p` over the simplex, where `pᵀQp` is the inequality measure
/// of `means`. Returns the minimiser and the quadratic part at it.
pub(crate) fn minimize_inequality_with_bonus(
    means: &RewardMatrix,
    bonus: &[f64],
    settings: &SolverSettings,
) -> Result<(Policy, f64)> {
    settings.validate()?;
    let n = means.n_agents();
    let k = means.n_arms();
    if n < 2 {
        return Err(Error::UndefinedInequality);
    }
    // D(p) = 2/(N-1) ||B p||² with B the agent-centred means.
    let col_mean: Vec<f64> = means.column_sums().iter().map(|s| s / n as f64).collect();
    let centred: Vec<f64> = means
        .rows()
        .flat_map(|row| row.iter().zip(&col_mean).map(|(m, c)| m - c).collect::<Vec<_>>())
        .collect();
    let scale = 2.0 / (n - 1) as f64;
    let mut q = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let v: f64 = (0..n).map(|i| centred[i * k + a] * centred[i * k + b]).sum::<f64>() * scale;
            q[a * k + b] = v;
            q[b * k + a] = v;
        }
    }
    let quad = |p: &[f64]| -> f64 {
        let mut s = 0.0;
        for a in 0..k {
            for b in 0..k {
                s += p[a] * q[a * k + b] * p[b];
            }
        }
        s
    };
    let objective = |p: &[f64]| quad(p) - bonus.iter().zip(p).map(|(c, x)| c * x).sum::<f64>();
    let gradient = |p: &[f64], g: &mut [f64]| {
        for a in 0..k {
            g[a] = 2.0 * (0..k).map(|b| q[a * k + b] * p[b]).sum::<f64>() - bonus[a];
        }
    };

    let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bonus_spread = bonus.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - bonus.iter().copied().fold(f64::INFINITY, f64::min);
    if q_norm < 1e-15 {
        // Linear objective: uniform if flat, otherwise the best vertex.
        let p = if bonus_spread <= 1e-15 {
            Policy::uniform(k)
        } else {
            let best = (0..k).fold(0, |b, j| if bonus[j] > bonus[b] { j } else { b });
            Policy::one_hot(best, k)
        };
        let d = quad(p.probs());
        return Ok((p, d));
    }
    let lipschitz = 2.0 * q_norm;

    let mut x = vec![1.0 / k as f64; k];
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut g = vec![0.0; k];
    let mut fx = objective(&x);
    for iter in 0..settings.max_iterations {
        gradient(&x, &mut g);
        let held: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
        let lowest = g.iter().copied().fold(f64::INFINITY, f64::min);
        if held - lowest <= settings.duality_gap_tol {
            break;
        }
        let step = match settings.step_rule {
            StepRule::LineSearch => 1.0 / lipschitz,
            StepRule::Diminishing => 1.0 / (lipschitz * ((iter + 1) as f64).sqrt()),
        };
        gradient(&y, &mut g);
        let trial: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
        let x_new = project_simplex(&trial);
        let f_new = objective(&x_new);
        if f_new > fx {
            // Adaptive restart: drop momentum and retry from the current point.
            theta = 1.0;
            y.clone_from(&x);
            continue;
        }
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_new;
        for j in 0..k {
            y[j] = x_new[j] + momentum * (x_new[j] - x[j]);
        }
        let moved = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum::<f64>();
        x = x_new;
        fx = f_new;
        theta = theta_new;
        if moved == 0.0 && momentum == 0.0 {
            break;
        }
    }
    let d = quad(&x).max(0.0);
    Ok((Policy::from_solver(x), d))
}

/// A policy minimising the inequality measure.
pub fn ef_optimal(means: &RewardMatrix, settings: &SolverSettings) -> Result<Policy> {
    ef_optimal_with_value(means, settings).map(|(p, _)| p)
}

/// EF-optimal policy together with the (unique) minimum inequality.
pub fn ef_optimal_with_value(
    means: &RewardMatrix,
    settings: &SolverSettings,
) -> Result<(Policy, f64)> {
    minimize_inequality_with_bonus(means, &vec![0.0; means.n_arms()], settings)
}

// ---------------------------------------------------------------------------
// Utilitarian fairness

/// Index of the largest value, preferring the lowest index among near-ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&v| v >= best - 1e-12 * best.abs().max(1.0))
        .unwrap_or(0)
}

/// One-hot policy on the arm with the largest total mean.
pub fn uf_optimal(means: &RewardMatrix) -> Policy {
    Policy::one_hot(argmax_lowest(&means.column_sums()), means.n_arms())
}

// ---------------------------------------------------------------------------
// Utility-based Nash welfare

const UTILITY_FLOOR: f64 = 1e-12;

/// Maximiser of `Σ_i log U_i(P)` over the simplex.
pub fn nsw_optimal(means: &RewardMatrix, settings: &SolverSettings) -> Result<Policy> {
    settings.validate()?;
    if let Some(agent) = means.rows().position(|r| r.iter().all(|&v| v <= 0.0)) {
        return Err(Error::UnboundedLog { agent });
    }
    let n = means.n_agents();
    let k = means.n_arms();
    let mut p = vec![1.0 / k as f64; k];
    let mut u = vec![0.0; n];
    let mut g = vec![0.0; k];
    let refresh = |p: &[f64], u: &mut [f64], g: &mut [f64]| {
        for (i, row) in means.rows().enumerate() {
            u[i] = row.iter().zip(p).map(|(m, x)| m * x).sum::<f64>().max(UTILITY_FLOOR);
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (0..n).map(|i| means.get(i, j) / u[i]).sum();
        }
    };
    for iter in 0..settings.max_iterations {
        refresh(&p, &mut u, &mut g);
        let to = (0..k).fold(0, |b, j| if g[j] > g[b] { j } else { b });
        let held: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();
        if g[to] - held <= settings.duality_gap_tol {
            break;
        }
        match settings.step_rule {
            StepRule::LineSearch => {
                let from = (0..k)
                    .filter(|&j| p[j] > 0.0)
                    .min_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)))
                    .expect("policy has support");
                if from == to {
                    break;
                }
                let cap = p[from];
                let t = concave_line_search(cap, |t| {
                    (0..n)
                        .map(|i| {
                            let d = means.get(i, to) - means.get(i, from);
                            d / (u[i] + d * t).max(UTILITY_FLOOR)
                        })
                        .sum()
                });
                let t = if cap - t <= 1e-15 { cap } else { t };
                p[from] -= t;
                p[to] += t;
                if p[from] < 1e-300 {
                    p[from] = 0.0;
                }
            }
            StepRule::Diminishing => {
                let step = 2.0 / (iter as f64 + 2.0);
                for (j, x) in p.iter_mut().enumerate() {
                    let target = if j == to { 1.0 } else { 0.0 };
                    *x += step * (target - *x);
                }
            }
        }
    }
    Ok(Policy::from_solver(p))
}

// ---------------------------------------------------------------------------
// Generalized Gini index

/// Value of the ordered weighted sum `Σ_i w_i u_(i)` with utilities ascending.
pub fn ggi_value(utilities: &[f64], weights: &[f64]) -> f64 {
    let mut sorted = utilities.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().zip(weights).map(|(u, w)| u * w).sum()
}

fn validate_ggi_weights(weights: &[f64], n_agents: usize) -> Result<()> {
    if weights.len() != n_agents {
        return Err(Error::InvalidWeights(format!(
            "expected {n_agents} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidWeights("weights must be positive and finite".into()));
    }
    if weights.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidWeights("weights must be non-increasing".into()));
    }
    Ok(())
}

/// Maximiser of the generalized Gini index via the ordered-weighted LP
/// (sum of the `k` smallest utilities expressed with auxiliary variables).
pub fn ggi_optimal(
    means: &RewardMatrix,
    weights: &[f64],
    settings: &SolverSettings,
) -> Result<Policy> {
    settings.validate()?;
    let n = means.n_agents();
    let k = means.n_arms();
    validate_ggi_weights(weights, n)?;

    // Level k (1-based) carries weight w_k - w_{k+1}.
    let levels: Vec<(usize, f64)> = (0..n)
        .map(|l| (l + 1, weights[l] - weights.get(l + 1).copied().unwrap_or(0.0)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let n_levels = levels.len();
    // Variables: p (k), r per level, d per (level, agent).
    let r_off = k;
    let d_off = k + n_levels;
    let n_vars = d_off + n_levels * n;
    let mut objective = vec![0.0; n_vars];
    for (li, &(size, w)) in levels.iter().enumerate() {
        objective[r_off + li] = w * size as f64;
        for i in 0..n {
            objective[d_off + li * n + i] = -w;
        }
    }
    let mut lp = LinearProgram::maximize(objective);
    for li in 0..n_levels {
        for i in 0..n {
            // d_{l,i} - r_l + u_i(p) ≥ 0
            let mut row = vec![0.0; n_vars];
            row[..k].copy_from_slice(means.row(i));
            row[r_off + li] = -1.0;
            row[d_off + li * n + i] = 1.0;
            lp.add_constraint(row, Relation::Ge, 0.0);
        }
    }
    let mut simplex = vec![0.0; n_vars];
    simplex[..k].iter_mut().for_each(|v| *v = 1.0);
    lp.add_constraint(simplex, Relation::Eq, 1.0);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::NumericalInstability(format!(
            "GGI program returned {:?}",
            sol.status
        )));
    }
    Ok(Policy::from_solver(sol.x[..k].to_vec()))
}
