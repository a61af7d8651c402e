//! Small dense linear programs over the probability simplex.
//!
//! Problems have the form
//!
//! ```text
//! maximize  objective · w
//! s.t.      a_j · w ≥ b_j   for every constraint j
//!           w ≥ 0, Σ w = 1
//! ```
//!
//! [`solve`] runs a two-phase tableau simplex with Bland's rule. The domain
//! is compact, so the only possible outcomes are optimal and infeasible.
//! [`enumerate_oracle`] enumerates every basic point and is meant for tests.

use crate::error::{Error, Result};
use crate::group_state::SimplexWeights;

/// Constraint violation accepted by phase one.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Smallest pivot element or reduced cost treated as non-zero.
pub const PIVOT_TOL: f64 = 1e-11;

const ORACLE_MAX_GROUPS: usize = 5;
const ORACLE_MAX_CONSTRAINTS: usize = 8;

/// The half-space `a · w ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, constraints: Vec<Constraint>) -> Result<Self> {
        let k = objective.len();
        if k < 2 {
            return Err(Error::invalid("objective", format!("need K >= 2, got {k}")));
        }
        if objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("objective", "non-finite coefficient"));
        }
        for (j, c) in constraints.iter().enumerate() {
            if c.a.len() != k {
                return Err(Error::Shape {
                    context: "constraint row",
                    expected: k,
                    got: c.a.len(),
                });
            }
            if c.a.iter().any(|v| !v.is_finite()) || !c.b.is_finite() {
                return Err(Error::invalid(
                    format!("constraints[{j}]"),
                    "non-finite coefficient",
                ));
            }
        }
        Ok(Self {
            objective,
            constraints,
        })
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn dim(&self) -> usize {
        self.objective.len()
    }

    fn value(&self, w: &[f64]) -> f64 {
        self.objective.iter().zip(w).map(|(c, x)| c * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Present iff `status` is optimal.
    pub w: Option<SimplexWeights>,
    /// `objective · w`; `-inf` when infeasible.
    pub objective_value: f64,
}

impl LpSolution {
    fn infeasible() -> Self {
        Self {
            status: LpStatus::Infeasible,
            w: None,
            objective_value: f64::NEG_INFINITY,
        }
    }

    fn optimal(p: &LpProblem, raw: Vec<f64>) -> Result<Self> {
        let w = SimplexWeights::new(raw.into_iter().map(|v| if v < 0.0 { 0.0 } else { v }).collect())?;
        Ok(Self {
            status: LpStatus::Optimal,
            objective_value: p.value(w.as_slice()),
            w: Some(w),
        })
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Dense tableau in equality form `T x = rhs`, `x ≥ 0`.
struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        self.rows[r][col] = 1.0;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in self.rows[i].iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.rows[i][col] = 0.0;
            self.rhs[i] -= f * pivot_rhs;
        }
        self.basis[r] = col;
    }

    /// Maximizes `cost · x` over the columns in `0..ncols` using Bland's rule.
    fn maximize(&mut self, cost: &[f64], ncols: usize) {
        // Bland's rule terminates; the cap only guards against pathological
        // round-off.
        for _ in 0..10_000 {
            let entering = (0..ncols).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .basis
                        .iter()
                        .zip(&self.rows)
                        .map(|(&b, row)| cost[b] * row[j])
                        .sum::<f64>();
                reduced > PIVOT_TOL
            });
            let Some(col) = entering else { return };

            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs[r].max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        let tie = (ratio - lratio).abs() <= 1e-12 * lratio.abs().max(1.0);
                        if ratio < lratio && !tie
                            || tie && self.basis[r] < self.basis[lr]
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            // The feasible region is bounded, so an improving column always
            // has a positive entry.
            let Some((r, _)) = leave else { return };
            self.pivot(r, col);
        }
    }
}

pub fn solve(p: &LpProblem) -> Result<LpSolution> {
    let k = p.dim();
    let m = p.constraints.len();
    let n = k + m; // structural + surplus columns
    let nrows = m + 1;
    let ncols = n + nrows; // plus one artificial per row

    let mut rows = Vec::with_capacity(nrows);
    let mut rhs = Vec::with_capacity(nrows);
    let mut simplex_row = vec![0.0; ncols];
    simplex_row[..k].iter_mut().for_each(|v| *v = 1.0);
    rows.push(simplex_row);
    rhs.push(1.0);
    for (j, c) in p.constraints.iter().enumerate() {
        let mut row = vec![0.0; ncols];
        row[..k].copy_from_slice(&c.a);
        row[k + j] = -1.0;
        rows.push(row);
        rhs.push(c.b);
    }
    for r in 0..nrows {
        if rhs[r] < 0.0 {
            rows[r].iter_mut().for_each(|v| *v = -*v);
            rhs[r] = -rhs[r];
        }
        rows[r][n + r] = 1.0;
    }
    let mut t = Tableau {
        rows,
        rhs,
        basis: (n..ncols).collect(),
    };

    // Phase one: drive the artificials to zero.
    let mut phase1 = vec![0.0; ncols];
    phase1[n..].iter_mut().for_each(|v| *v = -1.0);
    t.maximize(&phase1, ncols);
    let residual: f64 = t
        .basis
        .iter()
        .zip(&t.rhs)
        .filter(|(&b, _)| b >= n)
        .map(|(_, &v)| v)
        .sum();
    if residual > FEASIBILITY_TOL {
        return Ok(LpSolution::infeasible());
    }

    // Pivot remaining (zero-valued) artificials out; drop redundant rows.
    let mut r = 0;
    while r < t.rows.len() {
        if t.basis[r] >= n {
            match (0..n).find(|&j| t.rows[r][j].abs() > PIVOT_TOL) {
                Some(col) => t.pivot(r, col),
                None => {
                    t.rows.remove(r);
                    t.rhs.remove(r);
                    t.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    let mut phase2 = vec![0.0; ncols];
    phase2[..k].copy_from_slice(&p.objective);
    t.maximize(&phase2, n);

    let mut w = vec![0.0; k];
    for (&b, &v) in t.basis.iter().zip(&t.rhs) {
        if b < k {
            w[b] = v;
        }
    }
    LpSolution::optimal(p, w)
}

/// Solves the square system with partial pivoting; `None` if singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Visits every size-`choose` subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, choose: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..choose).collect();
    if choose > n {
        return;
    }
    loop {
        f(&idx);
        let Some(i) = (0..choose).rev().find(|&i| idx[i] != i + n - choose) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..choose {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Brute-force reference: enumerates all basic points of the feasible
/// polytope and returns the best one.
///
/// A basic point is the intersection of the affine hull `Σ w = 1` with
/// `K − 1` active inequalities drawn from `w_i ≥ 0` and the constraints.
/// Limited to `K ≤ 5` and at most 8 constraints.
pub fn enumerate_oracle(p: &LpProblem) -> Result<LpSolution> {
    let k = p.dim();
    let m = p.constraints.len();
    if k > ORACLE_MAX_GROUPS {
        return Err(Error::invalid(
            "oracle",
            format!("K = {k} exceeds {ORACLE_MAX_GROUPS}"),
        ));
    }
    if m > ORACLE_MAX_CONSTRAINTS {
        return Err(Error::invalid(
            "oracle",
            format!("{m} constraints exceed {ORACLE_MAX_CONSTRAINTS}"),
        ));
    }
    let tol = 1e-9;
    let row_of = |i: usize| -> (Vec<f64>, f64) {
        if i < k {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            (e, 0.0)
        } else {
            let c = &p.constraints[i - k];
            (c.a.clone(), c.b)
        }
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for_each_subset(k + m, k - 1, |active| {
        let mut a = vec![vec![1.0; k]];
        let mut b = vec![1.0];
        for &i in active {
            let (row, rhs) = row_of(i);
            a.push(row);
            b.push(rhs);
        }
        let Some(w) = solve_linear(a, b) else { return };
        let feasible = w.iter().all(|&v| v >= -tol)
            && p.constraints.iter().all(|c| {
                c.a.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() >= c.b - tol
            });
        if !feasible {
            return;
        }
        let value = p.value(&w);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, w));
        }
    });
    match best {
        Some((_, w)) => LpSolution::optimal(p, w),
        None => Ok(LpSolution::infeasible()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(obj: &[f64], cons: &[(&[f64], f64)]) -> LpProblem {
        LpProblem::new(
            obj.to_vec(),
            cons.iter()
                .map(|(a, b)| Constraint {
                    a: a.to_vec(),
                    b: *b,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vertex_optimum() {
        let p = problem(&[0.0, 1.0], &[]);
        for sol in [solve(&p).unwrap(), enumerate_oracle(&p).unwrap()] {
            assert_eq!(sol.w.unwrap().as_slice(), &[0.0, 1.0]);
            assert_eq!(sol.objective_value, 1.0);
        }
    }

    #[test]
    fn infeasible_bound() {
        let p = problem(&[1.0, 0.0], &[(&[1.0, 0.0], 2.0)]);
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
        assert_eq!(enumerate_oracle(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn binding_edge_constraint() {
        // w = (a, 1-a): 1.5a - 0.5 >= -0.295  =>  a >= 0.205 / 1.5
        let p = problem(&[-0.295, 0.344], &[(&[1.0, -0.5], -0.295)]);
        let a = 0.205 / 1.5;
        for sol in [solve(&p).unwrap(), enumerate_oracle(&p).unwrap()] {
            let w = sol.w.unwrap();
            assert!((w.as_slice()[0] - a).abs() < 1e-12);
            assert!((sol.objective_value - (-0.295 * a + 0.344 * (1.0 - a))).abs() < 1e-12);
        }
        assert!((a - 0.1367).abs() < 1e-4);
    }

    #[test]
    fn zero_objective() {
        let p = problem(&[0.0, 0.0, 0.0], &[(&[1.0, 1.0, 0.0], 0.5)]);
        let s = solve(&p).unwrap();
        let o = enumerate_oracle(&p).unwrap();
        assert_eq!(s.objective_value, 0.0);
        assert_eq!(o.objective_value, 0.0);
        let w = s.w.unwrap();
        assert!(w.as_slice()[0] + w.as_slice()[1] >= 0.5 - 1e-8);
    }

    #[test]
    fn degenerate_duplicated_constraints_terminate() {
        let row: &[f64] = &[1.0, -1.0, 0.0, 0.0];
        let p = problem(
            &[0.0, 0.0, 0.0, 1.0],
            &[(row, 0.0), (row, 0.0), (row, 0.0), (&[0.0, 0.0, 1.0, -1.0], 0.0)],
        );
        let s = solve(&p).unwrap();
        let o = enumerate_oracle(&p).unwrap();
        assert_eq!(s.status, o.status);
        assert!((s.objective_value - o.objective_value).abs() < 1e-8);
    }

    #[test]
    fn oracle_limits_and_validation() {
        assert!(enumerate_oracle(&problem(&[0.0; 6], &[])).is_err());
        assert!(LpProblem::new(vec![1.0], vec![]).is_err());
        assert!(LpProblem::new(
            vec![1.0, 2.0],
            vec![Constraint { a: vec![1.0], b: 0.0 }]
        )
        .is_err());
    }

    #[test]
    fn deterministic() {
        let p = problem(&[0.3, -0.1, 0.2], &[(&[1.0, 0.5, -2.0], -0.1), (&[-1.0, 1.0, 1.0], 0.0)]);
        assert_eq!(solve(&p).unwrap(), solve(&p).unwrap());
    }
}
