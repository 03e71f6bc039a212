//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Problems solved in this crate are small (at most a few hundred columns),
//! so the tableau is kept dense. All tolerances live in [`Tolerances`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Central tolerances for the LP kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Smallest magnitude accepted as a pivot element or improving reduced cost.
    pub pivot: f64,
    /// Allowed constraint violation of a reported optimum.
    pub feasibility: f64,
    /// Comparison tolerance for reported objective values.
    pub value: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    pivot: 1e-9,
    feasibility: 1e-8,
    value: 1e-6,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize c·x` subject to linear constraints and per-variable bounds.
///
/// Variables default to `x ≥ 0`; a lower bound of `None` makes a variable free.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            lower: vec![Some(0.0); n],
            upper: vec![None; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self
    }

    pub fn with_constraint(mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        self.add_constraint(coeffs, relation, rhs);
        self
    }

    pub fn set_lower(&mut self, var: usize, bound: Option<f64>) -> &mut Self {
        self.lower[var] = bound;
        self
    }

    pub fn set_upper(&mut self, var: usize, bound: Option<f64>) -> &mut Self {
        self.upper[var] = bound;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if n == 0 {
            return Err(Error::InvalidInput("linear program has no variables".into()));
        }
        let has_bound = self.upper.iter().any(Option::is_some) || self.lower.iter().any(Option::is_some);
        if self.constraints.is_empty() && !has_bound {
            return Err(Error::InvalidInput(
                "linear program has neither constraints nor bounds".into(),
            ));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite objective coefficient".into()));
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "constraint {r} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if c.coeffs.iter().any(|v| !v.is_finite()) || !c.rhs.is_finite() {
                return Err(Error::InvalidInput(format!("constraint {r} is not finite")));
            }
        }
        for j in 0..n {
            if let Some(l) = self.lower[j] {
                if !l.is_finite() {
                    return Err(Error::InvalidInput(format!("lower bound of x{j} is not finite")));
                }
            }
            if let Some(u) = self.upper[j] {
                if !u.is_finite() {
                    return Err(Error::InvalidInput(format!("upper bound of x{j} is not finite")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v / (1.0 + c.rhs.abs()));
        }
        for (j, &v) in x.iter().enumerate() {
            if let Some(l) = self.lower[j] {
                worst = worst.max(l - v);
            }
            if let Some(u) = self.upper[j] {
                worst = worst.max(v - u);
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal solution; empty unless `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// How an original variable maps onto nonnegative tableau columns.
#[derive(Clone, Copy)]
enum VarMap {
    Shifted { col: usize, lower: f64 },
    Free { pos: usize, neg: usize },
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.rows[r][self.n_cols]
    }

    fn pivot(&mut self, obj: &mut [f64], r: usize, c: usize) {
        let width = self.n_cols + 1;
        let pv = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= pv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for k in 0..width {
                    row[k] -= f * pivot_row[k];
                }
                row[c] = 0.0;
                if row[self.n_cols] < 0.0 && row[self.n_cols] > -1e-12 {
                    row[self.n_cols] = 0.0;
                }
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for k in 0..width {
                obj[k] -= f * pivot_row[k];
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row for maximising `cost` given the current basis.
    /// The last entry holds minus the current objective value.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj = cost.to_vec();
        obj.push(0.0);
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb != 0.0 {
                for (o, v) in obj.iter_mut().zip(&self.rows[r]) {
                    *o -= cb * v;
                }
            }
        }
        obj
    }

    /// Primal simplex over columns with `allowed[c]`; false when unbounded.
    ///
    /// Dantzig pricing with a Harris ratio test, switching to Bland's rule
    /// after a run of degenerate pivots so that cycling cannot persist.
    fn optimize(&mut self, obj: &mut [f64], allowed: &[bool], tol: f64) -> Result<bool> {
        const DEGENERATE_RUN: usize = 50;
        let max_iter = 50_000 + 50 * (self.n_cols + self.rows.len());
        let mut degenerate = 0;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..self.n_cols).find(|&c| allowed[c] && obj[c] > tol)
            } else {
                (0..self.n_cols)
                    .filter(|&c| allowed[c] && obj[c] > tol)
                    .max_by(|&a, &b| obj[a].total_cmp(&obj[b]).then(b.cmp(&a)))
            };
            let Some(c) = entering else {
                return Ok(true);
            };
            let Some(r) = self.leaving_row(c, tol, bland) else {
                return Ok(false);
            };
            if self.rhs(r) <= tol {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(obj, r, c);
        }
        Err(Error::NumericalInstability(
            "simplex iteration limit reached".into(),
        ))
    }

    fn leaving_row(&self, c: usize, tol: f64, bland: bool) -> Option<usize> {
        const RELAX: f64 = 1e-9;
        let candidates: Vec<(usize, f64)> = (0..self.rows.len())
            .filter_map(|r| {
                let a = self.rows[r][c];
                (a > tol).then_some((r, a))
            })
            .collect();
        let bound = candidates
            .iter()
            .map(|&(r, a)| (self.rhs(r).max(0.0) + RELAX) / a)
            .fold(f64::INFINITY, f64::min);
        if !bound.is_finite() {
            return None;
        }
        let eligible = candidates
            .into_iter()
            .filter(|&(r, a)| self.rhs(r).max(0.0) / a <= bound);
        if bland {
            let min_ratio = eligible
                .clone()
                .map(|(r, a)| self.rhs(r).max(0.0) / a)
                .fold(f64::INFINITY, f64::min);
            eligible
                .filter(|&(r, a)| self.rhs(r).max(0.0) / a <= min_ratio + 1e-12)
                .min_by_key(|&(r, _)| self.basis[r])
                .map(|(r, _)| r)
        } else {
            eligible
                .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
                .map(|(r, _)| r)
        }
    }
}

/// Solves `lp` and certifies the returned optimum against every constraint.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let tol = TOLERANCES;
    let n = lp.n_vars();

    let mut maps = Vec::with_capacity(n);
    let mut n_struct = 0;
    for j in 0..n {
        match lp.lower[j] {
            Some(l) => {
                maps.push(VarMap::Shifted { col: n_struct, lower: l });
                n_struct += 1;
            }
            None => {
                maps.push(VarMap::Free {
                    pos: n_struct,
                    neg: n_struct + 1,
                });
                n_struct += 2;
            }
        }
    }

    // Rows over structural columns, after bound shifting.
    let mut std_rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    let expand = |coeffs: &[f64]| -> (Vec<f64>, f64) {
        let mut row = vec![0.0; n_struct];
        let mut shift = 0.0;
        for (j, &a) in coeffs.iter().enumerate() {
            match maps[j] {
                VarMap::Shifted { col, lower } => {
                    row[col] = a;
                    shift += a * lower;
                }
                VarMap::Free { pos, neg } => {
                    row[pos] = a;
                    row[neg] = -a;
                }
            }
        }
        (row, shift)
    };
    for c in &lp.constraints {
        let (row, shift) = expand(&c.coeffs);
        std_rows.push((row, c.relation, c.rhs - shift));
    }
    for j in 0..n {
        if let Some(u) = lp.upper[j] {
            let mut unit = vec![0.0; n];
            unit[j] = 1.0;
            let (row, shift) = expand(&unit);
            std_rows.push((row, Relation::Le, u - shift));
        }
    }
    for (row, rel, rhs) in std_rows.iter_mut() {
        if *rhs < 0.0 || (*rhs == 0.0 && *rel == Relation::Ge) {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = std_rows.len();
    let n_slack = std_rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = std_rows.iter().filter(|r| r.1 != Relation::Le).count();
    let n_cols = n_struct + n_slack + n_art;
    let art_start = n_struct + n_slack;

    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        n_cols,
    };
    let (mut next_slack, mut next_art) = (n_struct, art_start);
    for (row, rel, rhs) in &std_rows {
        let mut full = vec![0.0; n_cols + 1];
        full[..n_struct].copy_from_slice(row);
        full[n_cols] = *rhs;
        match rel {
            Relation::Le => {
                full[next_slack] = 1.0;
                tab.basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                full[next_slack] = -1.0;
                next_slack += 1;
                full[next_art] = 1.0;
                tab.basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                full[next_art] = 1.0;
                tab.basis.push(next_art);
                next_art += 1;
            }
        }
        tab.rows.push(full);
    }

    // Phase 1: drive artificial variables to zero.
    if n_art > 0 {
        let mut cost = vec![0.0; n_cols];
        cost[art_start..].iter_mut().for_each(|c| *c = -1.0);
        let mut obj = tab.reduced_costs(&cost);
        let allowed = vec![true; n_cols];
        tab.optimize(&mut obj, &allowed, tol.pivot)?;
        let infeasibility: f64 = tab
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= art_start)
            .map(|(r, _)| tab.rhs(r).max(0.0))
            .sum();
        if infeasibility > tol.feasibility {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective_value: f64::NEG_INFINITY,
            });
        }
        // Pivot remaining zero-level artificials out, dropping redundant rows.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= art_start {
                let col = (0..art_start)
                    .filter(|&c| tab.rows[r][c].abs() > tol.pivot)
                    .max_by(|&a, &b| tab.rows[r][a].abs().total_cmp(&tab.rows[r][b].abs()));
                match col {
                    Some(c) => {
                        tab.pivot(&mut obj, r, c);
                        r += 1;
                    }
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    // Phase 2 over structural and slack columns.
    let mut cost = vec![0.0; n_cols];
    for (j, map) in maps.iter().enumerate() {
        match *map {
            VarMap::Shifted { col, .. } => cost[col] = lp.objective[j],
            VarMap::Free { pos, neg } => {
                cost[pos] = lp.objective[j];
                cost[neg] = -lp.objective[j];
            }
        }
    }
    let mut obj = tab.reduced_costs(&cost);
    let allowed: Vec<bool> = (0..n_cols).map(|c| c < art_start).collect();
    if !tab.optimize(&mut obj, &allowed, tol.pivot)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: Vec::new(),
            objective_value: f64::INFINITY,
        });
    }

    let mut values = vec![0.0; n_cols];
    for (r, &b) in tab.basis.iter().enumerate() {
        values[b] = tab.rhs(r).max(0.0);
    }
    let x: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shifted { col, lower } => lower + values[col],
            VarMap::Free { pos, neg } => values[pos] - values[neg],
        })
        .collect();
    let violation = lp.max_violation(&x);
    if violation > tol.feasibility {
        return Err(Error::NumericalInstability(format!(
            "optimal point violates a constraint by {violation:e}"
        )));
    }
    let objective_value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
    })
}

/// Maximises `t` subject to `rows[i]·P' - offsets[i] ≥ t` over the probability simplex.
///
/// The solution vector holds `P'` followed by `t`.
pub fn max_min_margin(rows: &[Vec<f64>], offsets: &[f64]) -> Result<LpSolution> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no rows to take a margin over".into()));
    }
    if rows.len() != offsets.len() {
        return Err(Error::DimensionMismatch("rows and offsets differ in length".into()));
    }
    let k = rows[0].len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch("rows must share a nonzero length".into()));
    }
    let mut objective = vec![0.0; k + 1];
    objective[k] = 1.0;
    let mut lp = LinearProgram::maximize(objective);
    lp.set_lower(k, None);
    for (row, &offset) in rows.iter().zip(offsets) {
        let mut coeffs = row.clone();
        coeffs.push(-1.0);
        lp.add_constraint(coeffs, Relation::Ge, offset);
    }
    let mut simplex = vec![1.0; k];
    simplex.push(0.0);
    lp.add_constraint(simplex, Relation::Eq, 1.0);
    solve_lp(&lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_variable_bound() {
        let lp = LinearProgram::maximize(vec![1.0]).with_constraint(vec![1.0], Relation::Le, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 3.0);
        assert_abs_diff_eq!(s.objective_value, 3.0);
    }

    #[test]
    fn infeasible_system() {
        let lp = LinearProgram::maximize(vec![1.0, 1.0])
            .with_constraint(vec![1.0, 1.0], Relation::Le, 1.0)
            .with_constraint(vec![1.0, -1.0], Relation::Ge, 2.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let lp = LinearProgram::maximize(vec![1.0, 0.0]).with_constraint(
            vec![-1.0, 1.0],
            Relation::Le,
            1.0,
        );
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn bounds_and_free_variables() {
        // max -x0 + x1 with x0 free, x0 ≥ -2 via constraint, 1 ≤ x1 ≤ 4
        let mut lp = LinearProgram::maximize(vec![-1.0, 1.0])
            .with_constraint(vec![1.0, 0.0], Relation::Ge, -2.0);
        lp.set_lower(0, None).set_lower(1, Some(1.0)).set_upper(1, Some(4.0));
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.x[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective_value, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let lp = LinearProgram::maximize(vec![1.0, 2.0])
            .with_constraint(vec![1.0, 1.0], Relation::Eq, 1.0)
            .with_constraint(vec![2.0, 2.0], Relation::Eq, 2.0);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.objective_value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_transportation_problem() {
        // Highly degenerate: three agents, two arms, two voters sharing a favourite.
        let mut lp = LinearProgram::maximize(vec![1.0; 3]);
        lp.add_constraint(vec![1.0, 0.0, 0.0], Relation::Le, 1.0 / 3.0)
            .add_constraint(vec![0.0, 1.0, 0.0], Relation::Le, 1.0 / 3.0)
            .add_constraint(vec![0.0, 0.0, 1.0], Relation::Le, 1.0 / 3.0)
            .add_constraint(vec![1.0, 1.0, 0.0], Relation::Le, 0.5)
            .add_constraint(vec![0.0, 0.0, 1.0], Relation::Le, 0.5);
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.objective_value, 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn margin_examples() {
        let s = max_min_margin(&[vec![1.0, 0.0]], &[0.0]).unwrap();
        assert_abs_diff_eq!(s.objective_value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);

        let s = max_min_margin(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(s.objective_value, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 0.5, epsilon = 1e-12);

        assert!(max_min_margin(&[], &[]).is_err());
    }

    #[test]
    fn rejects_malformed_programs() {
        let lp = LinearProgram::maximize(vec![1.0, 1.0]).with_constraint(vec![1.0], Relation::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::DimensionMismatch(_))));
        let lp = LinearProgram::maximize(vec![f64::NAN]).with_constraint(vec![1.0], Relation::Le, 1.0);
        assert!(solve_lp(&lp).is_err());
        assert!(solve_lp(&LinearProgram::maximize(vec![])).is_err());
    }
}
