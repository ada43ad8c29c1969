//! Dense two-phase simplex with Bland's rule, for small LPs in box form:
//!
//! minimize c·x subject to A x ≤ b, lo ≤ x ≤ hi.

use thiserror::Error;

pub const MAX_VARS: usize = 200;
pub const MAX_ROWS: usize = 400;
const EPS: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    /// Row-major constraint rows, each of length `c.len()`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub lo: Vec<f64>,
    /// May contain `f64::INFINITY`.
    pub hi: Vec<f64>,
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
    /// Empty unless optimal.
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    fn status(status: LpStatus) -> Self {
        Self {
            status,
            x: Vec::new(),
            objective: f64::NAN,
        }
    }
}

impl LpProblem {
    fn check(&self) -> Result<(), LpError> {
        let n = self.c.len();
        if n == 0 || n > MAX_VARS {
            return Err(LpError::Malformed(format!("{n} variables (limit {MAX_VARS})")));
        }
        if self.a.len() != self.b.len() || self.a.len() > MAX_ROWS {
            return Err(LpError::Malformed(format!(
                "{} rows with {} right-hand sides (limit {MAX_ROWS})",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.lo.len() != n || self.hi.len() != n {
            return Err(LpError::Malformed("bound vectors must match variable count".into()));
        }
        if let Some(i) = self.a.iter().position(|r| r.len() != n) {
            return Err(LpError::Malformed(format!("row {i} has wrong length")));
        }
        let finite = self.c.iter().chain(self.a.iter().flatten()).chain(&self.b).chain(&self.lo);
        if finite.into_iter().any(|v| !v.is_finite()) || self.hi.iter().any(|v| v.is_nan()) {
            return Err(LpError::Malformed("non-finite coefficient".into()));
        }
        Ok(())
    }
}

struct Tableau {
    /// m rows of `cols + 1` entries; last entry is the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = col;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (row, &bv) in self.rows.iter().zip(&self.basis) {
            let cb = cost[bv];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Run simplex on `cost` restricted to `allowed` entering columns.
    /// Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        let max_iter = 50 * (self.rows.len() + self.cols).max(100);
        for _ in 0..max_iter {
            let d = self.reduced_costs(cost);
            let Some(enter) = (0..self.cols).find(|&j| allowed[j] && d[j] < -EPS) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > EPS {
                    let ratio = row[self.cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, enter),
            }
        }
        true
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.check()?;
    let n = problem.c.len();
    if problem.lo.iter().zip(&problem.hi).any(|(l, h)| l > h) {
        return Ok(LpSolution::status(LpStatus::Infeasible));
    }

    // Shift to y = x - lo ≥ 0 and turn finite upper bounds into rows.
    let mut rows: Vec<(Vec<f64>, f64)> = problem
        .a
        .iter()
        .zip(&problem.b)
        .map(|(r, &b)| {
            let shift: f64 = r.iter().zip(&problem.lo).map(|(a, l)| a * l).sum();
            (r.clone(), b - shift)
        })
        .collect();
    for j in 0..n {
        if problem.hi[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            rows.push((r, problem.hi[j] - problem.lo[j]));
        }
    }

    let m = rows.len();
    let n_art = rows.iter().filter(|(_, b)| *b < 0.0).count();
    let cols = n + m + n_art;
    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        basis: Vec::with_capacity(m),
        cols,
    };
    let mut art = n + m;
    for (i, (r, b)) in rows.iter().enumerate() {
        let mut row = vec![0.0; cols + 1];
        let sign = if *b < 0.0 { -1.0 } else { 1.0 };
        for (dst, a) in row.iter_mut().zip(r) {
            *dst = sign * a;
        }
        row[n + i] = sign;
        row[cols] = sign * b;
        if sign < 0.0 {
            row[art] = 1.0;
            tab.basis.push(art);
            art += 1;
        } else {
            tab.basis.push(n + i);
        }
        tab.rows.push(row);
    }

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(n + m) {
            *c = 1.0;
        }
        tab.optimize(&phase1, &vec![true; cols]);
        let infeas: f64 = tab
            .rows
            .iter()
            .zip(&tab.basis)
            .filter(|(_, &bv)| bv >= n + m)
            .map(|(r, _)| r[cols])
            .sum();
        if infeas > 1e-9 {
            return Ok(LpSolution::status(LpStatus::Infeasible));
        }
        for r in 0..m {
            if tab.basis[r] >= n + m {
                if let Some(col) = (0..n + m).find(|&j| tab.rows[r][j].abs() > EPS) {
                    tab.pivot(r, col);
                }
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&problem.c);
    let allowed: Vec<bool> = (0..cols).map(|j| j < n + m).collect();
    if !tab.optimize(&cost, &allowed) {
        return Ok(LpSolution::status(LpStatus::Unbounded));
    }

    let mut x = problem.lo.clone();
    for (row, &bv) in tab.rows.iter().zip(&tab.basis) {
        if bv < n {
            x[bv] += row[cols];
        }
    }
    for (xi, (&l, &h)) in x.iter_mut().zip(problem.lo.iter().zip(&problem.hi)) {
        *xi = xi.clamp(l, h);
    }
    let objective = x.iter().zip(&problem.c).map(|(x, c)| x * c).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lp(c: &[f64], a: &[&[f64]], b: &[f64], lo: &[f64], hi: &[f64]) -> LpProblem {
        LpProblem {
            c: c.to_vec(),
            a: a.iter().map(|r| r.to_vec()).collect(),
            b: b.to_vec(),
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        }
    }

    #[test]
    fn maximize_single() {
        let s = solve_lp(&lp(&[-1.0], &[&[1.0]], &[1.0], &[0.0], &[2.0])).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn covering_constraint() {
        // x + 2y >= 2 written as -x - 2y <= -2
        let s = solve_lp(&lp(&[1.0, 1.0], &[&[-1.0, -2.0]], &[-2.0], &[0.0, 0.0], &[3.0, 3.0])).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.x[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.x[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible() {
        let s = solve_lp(&lp(&[1.0], &[&[-1.0], &[1.0]], &[-2.0, 1.0], &[0.0], &[f64::INFINITY])).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded() {
        let s = solve_lp(&lp(&[-1.0, 0.0], &[&[0.0, 1.0]], &[1.0], &[0.0, 0.0], &[f64::INFINITY, 1.0])).unwrap();
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn nonzero_lower_bounds() {
        let s = solve_lp(&lp(&[1.0, 1.0], &[&[-1.0, -1.0]], &[-3.0], &[1.0, 0.5], &[4.0, 4.0])).unwrap();
        assert_relative_eq!(s.objective, 3.0, epsilon = 1e-12);
        assert!(s.x[0] >= 1.0 && s.x[1] >= 0.5);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under the textbook largest-coefficient rule.
        let p = lp(
            &[-0.75, 150.0, -0.02, 6.0],
            &[&[0.25, -60.0, -0.04, 9.0], &[0.5, -90.0, -0.02, 3.0], &[0.0, 0.0, 1.0, 0.0]],
            &[0.0, 0.0, 1.0],
            &[0.0; 4],
            &[f64::INFINITY; 4],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_relative_eq!(s.objective, -0.05, epsilon = 1e-9);
    }

    #[test]
    fn malformed() {
        assert!(solve_lp(&lp(&[1.0], &[&[1.0, 2.0]], &[1.0], &[0.0], &[1.0])).is_err());
        assert!(solve_lp(&lp(&[], &[], &[], &[], &[])).is_err());
    }

    /// Best vertex of a 2-variable box LP by enumerating pairwise intersections.
    fn vertex_oracle(p: &LpProblem) -> Option<f64> {
        let mut lines: Vec<([f64; 2], f64)> = p.a.iter().zip(&p.b).map(|(r, &b)| ([r[0], r[1]], b)).collect();
        lines.push(([1.0, 0.0], p.hi[0]));
        lines.push(([0.0, 1.0], p.hi[1]));
        lines.push(([-1.0, 0.0], -p.lo[0]));
        lines.push(([0.0, -1.0], -p.lo[1]));
        let feasible = |x: [f64; 2]| lines.iter().all(|(a, b)| a[0] * x[0] + a[1] * x[1] <= b + 1e-9);
        let mut best: Option<f64> = None;
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                let (a, b) = (lines[i], lines[j]);
                let det = a.0[0] * b.0[1] - a.0[1] * b.0[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = [(a.1 * b.0[1] - a.0[1] * b.1) / det, (a.0[0] * b.1 - a.1 * b.0[0]) / det];
                if feasible(x) {
                    let v = p.c[0] * x[0] + p.c[1] * x[1];
                    best = Some(best.map_or(v, |bv: f64| bv.min(v)));
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn matches_vertex_enumeration(
            c in prop::collection::vec(-5i32..=5, 2),
            a in prop::collection::vec(prop::collection::vec(-4i32..=4, 2), 1..4),
            b in prop::collection::vec(-6i32..=10, 4),
        ) {
            let p = LpProblem {
                c: c.iter().map(|&v| v as f64).collect(),
                a: a.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect(),
                b: b[..a.len()].iter().map(|&v| v as f64).collect(),
                lo: vec![0.0, 0.0],
                hi: vec![5.0, 5.0],
            };
            let s = solve_lp(&p).unwrap();
            match vertex_oracle(&p) {
                None => prop_assert_eq!(s.status, LpStatus::Infeasible),
                Some(v) => {
                    prop_assert_eq!(s.status, LpStatus::Optimal);
                    prop_assert!((s.objective - v).abs() < 1e-9, "{} vs {}", s.objective, v);
                }
            }
        }
    }
}
