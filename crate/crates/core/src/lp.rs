//! Dense two-phase simplex for small linear programs.
//!
//! Problems are `min cᵀx` subject to `A_ub x ≤ b_ub`, `A_eq x = b_eq` and
//! `x ≥ 0`. Pivoting uses Bland's rule. The final basis is refactorised
//! with an LU decomposition to recover primal values and duals, and the
//! result is checked against the original rows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-8;
const SINGULAR_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    /// Multipliers `y` with `c - Aᵀy ≥ 0`; nonpositive on `≤` rows.
    pub duals_ub: Vec<f64>,
    pub duals_eq: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.a_ub.len() != self.b_ub.len() || self.a_eq.len() != self.b_eq.len() {
            return Err(Error::InvalidParameter(
                "constraint matrix and right-hand side lengths differ".into(),
            ));
        }
        for row in self.a_ub.iter().chain(&self.a_eq) {
            if row.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "constraint row has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let finite = self
            .objective
            .iter()
            .chain(self.a_ub.iter().flatten())
            .chain(self.a_eq.iter().flatten())
            .chain(&self.b_ub)
            .chain(&self.b_eq)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "non-finite linear program coefficient".into(),
            ));
        }
        Ok(())
    }
}

struct Tableau {
    rows: usize,
    width: usize,
    /// `rows × (width + 1)`, last column is the right-hand side.
    t: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    alive: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.width + 1) + self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width + 1;
        let inv = 1.0 / self.t[r * w + c];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.t[r * w + c] = 1.0;
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for (v, p) in self.t[i * w..(i + 1) * w].iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                self.t[i * w + c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Resets the cost row to reduced costs of `c` for the current basis.
    fn price(&mut self, c: &[f64]) {
        self.cost = vec![0.0; self.width + 1];
        self.cost[..c.len()].copy_from_slice(c);
        for i in 0..self.rows {
            let cb = c.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 && self.alive[i] {
                let w = self.width + 1;
                for (v, x) in self.cost.iter_mut().zip(&self.t[i * w..(i + 1) * w]) {
                    *v -= cb * x;
                }
            }
        }
    }

    /// Bland's-rule simplex over columns `< allowed`. Returns false when unbounded.
    fn run(&mut self, allowed: usize, limit: usize) -> Result<bool> {
        loop {
            let Some(c) = (0..allowed).find(|&j| self.cost[j] < -COST_TOL) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                if !self.alive[i] {
                    continue;
                }
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 * (1.0 + br)
                                || (ratio <= br + 1e-12 * (1.0 + br)
                                    && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            if self.pivots >= limit {
                return Err(Error::PivotLimit(limit));
            }
            self.pivot(r, c);
        }
    }
}

/// Solves `lp`. Infeasible and unbounded problems are reported through
/// [`LpStatus`]; numerical breakdowns are errors.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let m_ub = lp.a_ub.len();
    let m = m_ub + lp.a_eq.len();

    // standard-form rows with nonnegative right-hand sides
    let mut sign = Vec::with_capacity(m);
    let mut needs_art = Vec::with_capacity(m);
    for (i, &b) in lp.b_ub.iter().chain(&lp.b_eq).enumerate() {
        let flip = b < 0.0;
        sign.push(if flip { -1.0 } else { 1.0 });
        needs_art.push(i >= m_ub || flip);
    }
    let n_art = needs_art.iter().filter(|&&a| a).count();
    let structural = n + m_ub;
    let width = structural + n_art;

    let row_of = |i: usize| {
        if i < m_ub {
            &lp.a_ub[i]
        } else {
            &lp.a_eq[i - m_ub]
        }
    };
    let rhs_of = |i: usize| {
        if i < m_ub {
            lp.b_ub[i]
        } else {
            lp.b_eq[i - m_ub]
        }
    };

    let w = width + 1;
    let mut t = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let mut next_art = structural;
    for i in 0..m {
        let s = sign[i];
        for (j, &a) in row_of(i).iter().enumerate() {
            t[i * w + j] = s * a;
        }
        if i < m_ub {
            t[i * w + n + i] = s;
        }
        t[i * w + width] = s * rhs_of(i);
        if needs_art[i] {
            t[i * w + next_art] = 1.0;
            basis[i] = next_art;
            next_art += 1;
        } else {
            basis[i] = n + i;
        }
    }
    let limit = 50_000 + 200 * (m + width);
    let mut tab = Tableau {
        rows: m,
        width,
        t,
        cost: Vec::new(),
        basis,
        alive: vec![true; m],
        pivots: 0,
    };

    if n_art > 0 {
        let mut c1 = vec![0.0; width];
        c1[structural..].iter_mut().for_each(|v| *v = 1.0);
        tab.price(&c1);
        tab.run(width, limit)?;
        let b_scale = 1.0 + (0..m).map(|i| tab.rhs(i).abs()).fold(0.0, f64::max);
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= structural)
            .map(|i| tab.rhs(i))
            .sum();
        if infeas > FEAS_TOL * b_scale {
            return Ok(infeasible(lp, LpStatus::Infeasible));
        }
        // drive zero-level artificials out of the basis, dropping redundant rows
        for i in 0..m {
            if tab.basis[i] < structural {
                continue;
            }
            match (0..structural).find(|&j| tab.at(i, j).abs() > 1e-9) {
                Some(j) => tab.pivot(i, j),
                None => tab.alive[i] = false,
            }
        }
    }

    tab.price(&lp.objective);
    if !tab.run(structural, limit)? {
        return Ok(infeasible(lp, LpStatus::Unbounded));
    }

    // refactorise the final basis against the original standard-form data
    let rows: Vec<usize> = (0..m).filter(|&i| tab.alive[i]).collect();
    let k = rows.len();
    let column = |i: usize, j: usize| -> f64 {
        if j < n {
            sign[i] * row_of(i)[j]
        } else if j - n == i {
            sign[i]
        } else {
            0.0
        }
    };
    let mut bmat = vec![0.0; k * k];
    for (r, &i) in rows.iter().enumerate() {
        for (col, &ri) in rows.iter().enumerate() {
            bmat[r * k + col] = column(i, tab.basis[ri]);
        }
    }
    let lu = Lu::factor(bmat, k)?;
    let b_std: Vec<f64> = rows.iter().map(|&i| sign[i] * rhs_of(i)).collect();
    let x_b = lu.solve(&b_std);
    let mut x = vec![0.0; structural];
    for (col, &ri) in rows.iter().enumerate() {
        x[tab.basis[ri]] = x_b[col];
    }
    let c_b: Vec<f64> = rows
        .iter()
        .map(|&ri| lp.objective.get(tab.basis[ri]).copied().unwrap_or(0.0))
        .collect();
    let y_std = lu.solve_transpose(&c_b);
    let mut y = vec![0.0; m];
    for (r, &i) in rows.iter().enumerate() {
        y[i] = sign[i] * y_std[r];
    }

    let primal: Vec<f64> = x[..n]
        .iter()
        .map(|&v| if v.abs() < 1e-14 { 0.0 } else { v })
        .collect();
    let residual = residual(lp, &primal);
    if residual > RESIDUAL_TOL {
        return Err(Error::LpResidual(residual));
    }
    let objective = lp.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        primal,
        objective,
        duals_ub: y[..m_ub].to_vec(),
        duals_eq: y[m_ub..].to_vec(),
    })
}

fn infeasible(lp: &LinearProgram, status: LpStatus) -> LpSolution {
    LpSolution {
        status,
        primal: vec![0.0; lp.num_vars()],
        objective: if status == LpStatus::Unbounded {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        },
        duals_ub: vec![0.0; lp.a_ub.len()],
        duals_eq: vec![0.0; lp.a_eq.len()],
    }
}

/// Largest scaled violation of bounds and rows.
fn residual(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
    let row = |a: &[f64]| {
        let (mut dot, mut mag) = (0.0, 0.0);
        for (aj, xj) in a.iter().zip(x) {
            dot += aj * xj;
            mag += (aj * xj).abs();
        }
        (dot, mag)
    };
    for (a, &b) in lp.a_ub.iter().zip(&lp.b_ub) {
        let (dot, mag) = row(a);
        worst = worst.max((dot - b).max(0.0) / (1.0 + mag + b.abs()));
    }
    for (a, &b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let (dot, mag) = row(a);
        worst = worst.max((dot - b).abs() / (1.0 + mag + b.abs()));
    }
    worst
}

/// LU decomposition with partial pivoting of a dense `k × k` matrix.
struct Lu {
    k: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, k: usize) -> Result<Lu> {
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut perm: Vec<usize> = (0..k).collect();
        for col in 0..k {
            let (p, big) = (col..k)
                .map(|r| (r, a[r * k + col].abs()))
                .fold((col, -1.0), |b, c| if c.1 > b.1 { c } else { b });
            if big < SINGULAR_TOL * scale {
                return Err(Error::SingularBasis);
            }
            if p != col {
                for j in 0..k {
                    a.swap(col * k + j, p * k + j);
                }
                perm.swap(col, p);
            }
            let d = a[col * k + col];
            for r in col + 1..k {
                let f = a[r * k + col] / d;
                a[r * k + col] = f;
                if f != 0.0 {
                    for j in col + 1..k {
                        a[r * k + j] -= f * a[col * k + j];
                    }
                }
            }
        }
        Ok(Lu { k, a, perm })
    }

    /// Solves `B x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for r in 0..k {
            let s: f64 = (0..r).map(|j| self.a[r * k + j] * x[j]).sum();
            x[r] -= s;
        }
        for r in (0..k).rev() {
            let s: f64 = (r + 1..k).map(|j| self.a[r * k + j] * x[j]).sum();
            x[r] = (x[r] - s) / self.a[r * k + r];
        }
        x
    }

    /// Solves `Bᵀ y = c`.
    fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let k = self.k;
        // Bᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = c, Lᵀ w = z, y = Pᵀ w
        let mut z = c.to_vec();
        for r in 0..k {
            let s: f64 = (0..r).map(|j| self.a[j * k + r] * z[j]).sum();
            z[r] = (z[r] - s) / self.a[r * k + r];
        }
        for r in (0..k).rev() {
            let s: f64 = (r + 1..k).map(|j| self.a[j * k + r] * z[j]).sum();
            z[r] -= s;
        }
        let mut y = vec![0.0; k];
        for (r, &i) in self.perm.iter().enumerate() {
            y[i] = z[r];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn small_examples() {
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.add_le(vec![1.0], 1.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.primal[0], 1.0);
        assert_relative_eq!(s.objective, -1.0);
        assert_relative_eq!(s.duals_ub[0], -1.0);

        let s = solve(&LinearProgram::new(vec![1.0, 0.0])).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.primal, vec![0.0, 0.0]);

        let mut lp = LinearProgram::new(vec![0.0]);
        lp.add_le(vec![1.0], -1.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_le(vec![-1.0, 1.0], 1.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn textbook_problem_with_duals() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let mut lp = LinearProgram::new(vec![-3.0, -5.0]);
        lp.add_le(vec![1.0, 0.0], 4.0);
        lp.add_le(vec![0.0, 2.0], 12.0);
        lp.add_le(vec![3.0, 2.0], 18.0);
        let s = solve(&lp).unwrap();
        assert_relative_eq!(s.primal[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.primal[1], 6.0, epsilon = 1e-12);
        assert_relative_eq!(s.objective, -36.0, epsilon = 1e-12);
        assert_relative_eq!(s.duals_ub[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.duals_ub[1], -1.5, epsilon = 1e-12);
        assert_relative_eq!(s.duals_ub[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // min x + 2y s.t. x + y = 3, x - y ≤ -1 → x = 1, y = 2
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_eq(vec![1.0, 1.0], 3.0);
        lp.add_le(vec![1.0, -1.0], -1.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.primal[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.primal[1], 2.0, epsilon = 1e-12);
        let b_dot_y = 3.0 * s.duals_eq[0] - s.duals_ub[0];
        assert_relative_eq!(b_dot_y, s.objective, epsilon = 1e-12);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_eq(vec![1.0, 1.0], 2.0);
        lp.add_eq(vec![2.0, 2.0], 4.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_malformed_input() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.add_le(vec![1.0], 2.0);
        assert!(solve(&lp).is_err());
        let mut lp = LinearProgram::new(vec![f64::NAN]);
        lp.add_le(vec![1.0], 2.0);
        assert!(solve(&lp).is_err());
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // classic cycling example for the largest-coefficient rule
        let mut lp = LinearProgram::new(vec![-0.75, 150.0, -0.02, 6.0]);
        lp.add_le(vec![0.25, -60.0, -0.04, 9.0], 0.0);
        lp.add_le(vec![0.5, -90.0, -0.02, 3.0], 0.0);
        lp.add_le(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective, -0.05, epsilon = 1e-12);
    }
}
