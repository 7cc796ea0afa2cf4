//! Dense two-phase simplex for the small linear programs used to certify
//! test factors (at most a few hundred columns).
//!
//! Problems have the form
//!
//! ```text
//! maximize c·x  subject to  A_eq x = b_eq,  A_le x <= b_le,  x >= 0
//! ```
//!
//! The solver keeps the artificial columns in the tableau through phase two
//! so that the final basis inverse, and with it a dual certificate, can be
//! read off directly.

use thiserror::Error;

/// Primal/dual feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const MAX_ITERATIONS: usize = 50_000;
const DEGENERATE_STREAK_BEFORE_BLAND: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("unbounded")]
    Unbounded,
    #[error("iteration limit reached")]
    IterationLimit,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    n: usize,
    eq_rows: Vec<Vec<f64>>,
    eq_rhs: Vec<f64>,
    le_rows: Vec<Vec<f64>>,
    le_rhs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    /// Multipliers for the equality rows.
    pub dual_eq: Vec<f64>,
    /// Multipliers for the `<=` rows (non-negative at optimality).
    pub dual_le: Vec<f64>,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> Result<(), LpError> {
        self.check_len(&row)?;
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        Ok(())
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> Result<(), LpError> {
        self.check_len(&row)?;
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
        Ok(())
    }

    fn check_len(&self, row: &[f64]) -> Result<(), LpError> {
        if row.len() != self.n {
            return Err(LpError::Dimension(format!(
                "row has {} coefficients, program has {} variables",
                row.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn maximize(&self, objective: &[f64]) -> Result<LpSolution, LpError> {
        self.check_len(objective)?;
        let mut tab = Tableau::build(self);
        let iters1 = tab.phase_one()?;
        let cost: Vec<f64> = (0..tab.cols)
            .map(|j| if j < self.n { -objective[j] } else { 0.0 })
            .collect();
        let iters2 = tab.optimize(&cost, tab.n_real)?;
        let x = tab.primal(self.n);
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let (dual_eq, dual_le) = tab.duals(&cost, self.eq_rows.len());
        Ok(LpSolution {
            value,
            x,
            dual_eq,
            dual_le,
            iterations: iters1 + iters2,
        })
    }

    pub fn minimize(&self, objective: &[f64]) -> Result<LpSolution, LpError> {
        let neg: Vec<f64> = objective.iter().map(|c| -c).collect();
        let mut sol = self.maximize(&neg)?;
        sol.value = -sol.value;
        for y in sol.dual_eq.iter_mut().chain(sol.dual_le.iter_mut()) {
            *y = -*y;
        }
        Ok(sol)
    }

    /// Phase one only: a feasible point or the infeasibility residual.
    pub fn feasible_point(&self) -> Result<Vec<f64>, LpError> {
        let mut tab = Tableau::build(self);
        tab.phase_one()?;
        Ok(tab.primal(self.n))
    }

    /// Largest violation of primal feasibility at `x`.
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, v| w.max(-v));
        for (row, rhs) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row, x) - rhs).abs());
        }
        for (row, rhs) in self.le_rows.iter().zip(&self.le_rhs) {
            worst = worst.max(dot(row, x) - rhs);
        }
        worst
    }

    /// Checks a maximization certificate: returns the larger of the dual
    /// infeasibility and the absolute duality gap `b·y - c·x`.
    pub fn certificate_error(&self, objective: &[f64], sol: &LpSolution) -> f64 {
        let mut reduced = objective.to_vec();
        for (row, y) in self.eq_rows.iter().zip(&sol.dual_eq) {
            for (r, a) in reduced.iter_mut().zip(row) {
                *r -= a * y;
            }
        }
        for (row, y) in self.le_rows.iter().zip(&sol.dual_le) {
            for (r, a) in reduced.iter_mut().zip(row) {
                *r -= a * y;
            }
        }
        // dual feasibility: A^T y >= c, i.e. reduced <= 0; y_le >= 0
        let mut worst = reduced.iter().fold(0.0f64, |w, r| w.max(*r));
        worst = sol.dual_le.iter().fold(worst, |w, y| w.max(-y));
        let dual_value = dot(&self.eq_rhs, &sol.dual_eq) + dot(&self.le_rhs, &sol.dual_le);
        worst.max((dual_value - sol.value).abs())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Tableau {
    /// Row-major `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<f64>,
    rows: usize,
    cols: usize,
    /// Structural plus slack columns; artificials follow.
    n_real: usize,
    basis: Vec<usize>,
    row_sign: Vec<f64>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n_le = lp.le_rows.len();
        let rows = lp.eq_rows.len() + n_le;
        let n_real = lp.n + n_le;
        let cols = n_real + rows;
        let width = cols + 1;
        let mut t = vec![0.0; rows * width];
        let mut row_sign = vec![1.0; rows];
        let all_rows = lp
            .eq_rows
            .iter()
            .zip(&lp.eq_rhs)
            .map(|(r, b)| (r, *b, None))
            .chain(
                lp.le_rows
                    .iter()
                    .zip(&lp.le_rhs)
                    .enumerate()
                    .map(|(k, (r, b))| (r, *b, Some(k))),
            );
        for (i, (row, rhs, slack)) in all_rows.enumerate() {
            let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
            row_sign[i] = sign;
            let base = i * width;
            for (j, a) in row.iter().enumerate() {
                t[base + j] = sign * a;
            }
            if let Some(k) = slack {
                t[base + lp.n + k] = sign;
            }
            t[base + n_real + i] = 1.0;
            t[base + cols] = sign * rhs;
        }
        Self {
            t,
            rows,
            cols,
            n_real,
            basis: (n_real..n_real + rows).collect(),
            row_sign,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn phase_one(&mut self) -> Result<usize, LpError> {
        let cost: Vec<f64> = (0..self.cols)
            .map(|j| if j >= self.n_real { 1.0 } else { 0.0 })
            .collect();
        let iters = self.optimize(&cost, self.cols)?;
        let scale = 1.0
            + (0..self.rows)
                .map(|i| self.rhs(i).abs())
                .fold(0.0, f64::max);
        let residual: f64 = (0..self.rows)
            .filter(|&i| self.basis[i] >= self.n_real)
            .map(|i| self.rhs(i))
            .sum();
        if residual > FEAS_TOL * scale {
            return Err(LpError::Infeasible(residual));
        }
        // Drive zero-level artificials out of the basis where possible. Rows
        // where no real column has a usable entry are redundant and keep
        // their artificial at zero.
        for i in 0..self.rows {
            if self.basis[i] < self.n_real {
                continue;
            }
            let pick = (0..self.n_real)
                .filter(|&j| self.at(i, j).abs() > 1e-8)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            if let Some(j) = pick {
                self.pivot(i, j);
            }
        }
        Ok(iters)
    }

    /// Minimizes `cost·x` over the current tableau, allowing only columns
    /// below `allowed` to enter.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<usize, LpError> {
        let mut degenerate_streak = 0usize;
        let mut reduced = vec![0.0; self.cols];
        for iter in 0..MAX_ITERATIONS {
            self.reduced_costs(cost, &mut reduced);
            let bland = degenerate_streak >= DEGENERATE_STREAK_BEFORE_BLAND;
            let mut enter = None;
            let mut best = -COST_TOL;
            for (j, &r) in reduced.iter().enumerate().take(allowed) {
                if r < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(j) = enter else {
                return Ok(iter);
            };
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.at(i, j);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        if ratio < best_ratio - 1e-12 {
                            true
                        } else if ratio <= best_ratio + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[l]
                            } else {
                                a > self.at(l, j)
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    leave = Some(i);
                    best_ratio = best_ratio.min(ratio);
                }
            }
            let Some(i) = leave else {
                return Err(LpError::Unbounded);
            };
            if best_ratio <= 1e-12 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            self.pivot(i, j);
        }
        Err(LpError::IterationLimit)
    }

    fn reduced_costs(&self, cost: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&cost[..self.cols]);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let base = i * (self.cols + 1);
            for (o, a) in out.iter_mut().zip(&self.t[base..base + self.cols]) {
                *o -= cb * a;
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let width = self.cols + 1;
        let p = self.t[pr * width + pc];
        {
            let row = &mut self.t[pr * width..(pr + 1) * width];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[pc] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[pr * width..(pr + 1) * width].to_vec();
        for i in 0..self.rows {
            if i == pr {
                continue;
            }
            let base = i * width;
            let f = self.t[base + pc];
            if f == 0.0 {
                continue;
            }
            for (v, pv) in self.t[base..base + width].iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.t[base + pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    fn primal(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    /// Duals of the original maximization, split into equality and `<=` rows.
    fn duals(&self, min_cost: &[f64], n_eq: usize) -> (Vec<f64>, Vec<f64>) {
        // pi = c_B B^{-1}; B^{-1} sits in the artificial columns.
        let mut y = vec![0.0; self.rows];
        for (k, yk) in y.iter_mut().enumerate() {
            let col = self.n_real + k;
            let pi: f64 = (0..self.rows)
                .map(|i| min_cost[self.basis[i]] * self.at(i, col))
                .sum();
            *yk = -pi * self.row_sign[k];
        }
        let le = y.split_off(n_eq);
        (y, le)
    }
}
