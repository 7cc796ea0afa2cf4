//! Log-barrier interior-point solver for weighted log-likelihood problems
//!
//! ```text
//! maximize  Σ c_i ln x_i   subject to  E x = e,  G x <= h,  x > 0
//! ```
//!
//! with `c >= 0`. Both the maximum-likelihood fit and the Bell-test factor
//! construction have this shape. Equalities are eliminated with a null-space
//! basis of `E`, so every Newton system is small and dense.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{QpvError, Result};

/// Stop once the duality-gap bound (normalized objective units) drops below this.
pub const GAP_TOL: f64 = 1e-12;
/// Centering failures are tolerated once the gap bound is below this.
const STALL_GAP: f64 = 1e-9;
const MAX_NEWTON: usize = 200;
const T_GROWTH: f64 = 12.0;

#[derive(Clone, Debug, Default)]
pub struct LogProblem {
    pub weights: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

#[derive(Clone, Debug)]
pub struct LogSolution {
    pub x: Vec<f64>,
    /// Σ c_i ln x_i at `x` (unnormalized weights).
    pub objective: f64,
    pub newton_steps: usize,
    /// Upper bound on the remaining suboptimality, in units of Σ c.
    pub gap_bound: f64,
}

impl LogProblem {
    pub fn new(weights: Vec<f64>) -> Self {
        Self {
            weights,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq.push((row, rhs));
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le.push((row, rhs));
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, v)| w * v.ln())
            .sum()
    }

    /// Largest violation of the constraints at `x` (positivity counted as `x >= 0`).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, v| w.max(-v));
        for (row, rhs) in &self.eq {
            worst = worst.max((dot(row, x) - rhs).abs());
        }
        for (row, rhs) in &self.le {
            worst = worst.max(dot(row, x) - rhs);
        }
        worst
    }

    fn validate(&self, start: &[f64]) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(QpvError::Optimization("empty problem".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(QpvError::Optimization(
                "weights must be finite and >= 0".into(),
            ));
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(QpvError::Optimization("all weights are zero".into()));
        }
        if start.len() != n
            || self.eq.iter().any(|(r, _)| r.len() != n)
            || self.le.iter().any(|(r, _)| r.len() != n)
        {
            return Err(QpvError::Optimization("dimension mismatch".into()));
        }
        if start.iter().any(|v| *v <= 0.0) {
            return Err(QpvError::Optimization(
                "start point not strictly positive".into(),
            ));
        }
        for (row, rhs) in &self.eq {
            if (dot(row, start) - rhs).abs() > 1e-9 {
                return Err(QpvError::Optimization(
                    "start point violates an equality".into(),
                ));
            }
        }
        for (row, rhs) in &self.le {
            if dot(row, start) >= *rhs {
                return Err(QpvError::Optimization(
                    "start point is not strictly inside an inequality".into(),
                ));
            }
        }
        Ok(())
    }

    /// Solves the problem from a strictly feasible start point.
    pub fn maximize(&self, start: &[f64]) -> Result<LogSolution> {
        self.validate(start)?;
        let n = self.dim();
        let total: f64 = self.weights.iter().sum();
        let w: Vec<f64> = self.weights.iter().map(|c| c / total).collect();
        let z = null_space(&self.eq, n);
        if z.ncols() == 0 {
            // the equalities pin the point
            return Ok(LogSolution {
                objective: self.objective(start),
                x: start.to_vec(),
                newton_steps: 0,
                gap_bound: 0.0,
            });
        }
        let g_rows: Vec<DVector<f64>> = self
            .le
            .iter()
            .map(|(r, _)| DVector::from_column_slice(r))
            .collect();
        let h: Vec<f64> = self.le.iter().map(|(_, b)| *b).collect();
        let m = (n + self.le.len()) as f64;

        let mut x = DVector::from_column_slice(start);
        let mut t = 1.0;
        let mut steps = 0usize;
        let mut gap = f64::INFINITY;
        loop {
            match self.center(&mut x, &w, &z, &g_rows, &h, t) {
                Ok(k) => {
                    steps += k;
                    gap = m / t;
                }
                // rounding in the barrier at large t; the previous center is good enough
                Err(_) if gap < STALL_GAP => break,
                Err(e) => return Err(e),
            }
            if gap < GAP_TOL {
                break;
            }
            t *= T_GROWTH;
        }
        let x: Vec<f64> = x.iter().copied().collect();
        Ok(LogSolution {
            objective: self.objective(&x),
            x,
            newton_steps: steps,
            gap_bound: gap,
        })
    }

    /// Newton centering for the barrier function at parameter `t`.
    fn center(
        &self,
        x: &mut DVector<f64>,
        w: &[f64],
        z: &DMatrix<f64>,
        g_rows: &[DVector<f64>],
        h: &[f64],
        t: f64,
    ) -> Result<usize> {
        let n = x.len();
        let phi = |x: &DVector<f64>| -> f64 {
            let mut v = 0.0;
            for i in 0..n {
                if x[i] <= 0.0 {
                    return f64::INFINITY;
                }
                v -= (t * w[i] + 1.0) * x[i].ln();
            }
            for (g, hj) in g_rows.iter().zip(h) {
                let s = hj - g.dot(x);
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                v -= s.ln();
            }
            v
        };
        for step in 0..MAX_NEWTON {
            let mut grad = DVector::zeros(n);
            let mut hess = DMatrix::zeros(n, n);
            for i in 0..n {
                let a = t * w[i] + 1.0;
                grad[i] = -a / x[i];
                hess[(i, i)] = a / (x[i] * x[i]);
            }
            for (g, hj) in g_rows.iter().zip(h) {
                let s = hj - g.dot(x);
                grad.axpy(1.0 / s, g, 1.0);
                hess.ger(1.0 / (s * s), g, g, 1.0);
            }
            let gr = z.tr_mul(&grad);
            let hr = z.tr_mul(&hess) * z;
            let dy = solve_spd(hr, -&gr)
                .ok_or_else(|| QpvError::Optimization("singular Newton system".into()))?;
            let decrement = -gr.dot(&dy);
            // a decrement this small leaves a barrier suboptimality far below
            // what rounding of phi at large t can resolve
            if decrement < 1e-9 {
                return Ok(step);
            }
            let dx = z * dy;
            // largest step keeping x and the slacks positive
            let mut smax: f64 = 1.0;
            for i in 0..n {
                if dx[i] < 0.0 {
                    smax = smax.min(-0.99 * x[i] / dx[i]);
                }
            }
            for (g, hj) in g_rows.iter().zip(h) {
                let gd = g.dot(&dx);
                if gd > 0.0 {
                    smax = smax.min(0.99 * (hj - g.dot(x)) / gd);
                }
            }
            let f0 = phi(x);
            let slope = grad.dot(&dx);
            let mut s = smax;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &*x + s * &dx;
                let f1 = phi(&cand);
                if f1 <= f0 + 0.25 * s * slope {
                    if cand == *x {
                        return Ok(step);
                    }
                    *x = cand;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                // rounding noise dominates; the point is as central as it gets
                if decrement < 1e-8 {
                    return Ok(step);
                }
                return Err(QpvError::Optimization(format!(
                    "line search failed (Newton decrement {decrement:e})"
                )));
            }
        }
        Err(QpvError::Optimization("Newton iteration limit".into()))
    }

    /// Largest objective improvement found over random feasible steps of
    /// length `step` (max-norm) around `x`. Used as a first-order optimality
    /// check; infeasible probes are skipped.
    pub fn probe_improvement(&self, x: &[f64], directions: usize, step: f64, seed: u64) -> f64 {
        let n = self.dim();
        let z = null_space(&self.eq, n);
        if z.ncols() == 0 {
            return 0.0;
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let base = self.objective(x);
        let total: f64 = self.weights.iter().sum();
        let mut best = f64::NEG_INFINITY;
        let mut tried = 0;
        while tried < directions {
            let y = DVector::from_fn(z.ncols(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let d = &z * y;
            let norm = d.amax();
            if norm == 0.0 {
                continue;
            }
            tried += 1;
            for sign in [1.0, -1.0] {
                let cand: Vec<f64> = (0..n).map(|i| x[i] + sign * step * d[i] / norm).collect();
                if cand
                    .iter()
                    .zip(&self.weights)
                    .any(|(v, w)| *v < 0.0 || (*v == 0.0 && *w > 0.0))
                {
                    continue;
                }
                if self.le.iter().any(|(r, b)| dot(r, &cand) > *b + 1e-12) {
                    continue;
                }
                best = best.max((self.objective(&cand) - base) / total);
            }
        }
        best
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of `{x : E x = 0}` as matrix columns.
pub fn null_space(eq: &[(Vec<f64>, f64)], n: usize) -> DMatrix<f64> {
    if eq.is_empty() {
        return DMatrix::identity(n, n);
    }
    let e = DMatrix::from_fn(eq.len(), n, |i, j| eq[i].0[j]);
    let gram = e.tr_mul(&e);
    let eig = SymmetricEigen::new(gram);
    let scale = eig.eigenvalues.amax().max(1.0);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .collect();
    DMatrix::from_fn(n, keep.len(), |i, k| eig.eigenvectors[(i, keep[k])])
}

/// Numerical rank of a set of equality rows.
pub fn rank(rows: &[Vec<f64>], n: usize) -> usize {
    let eq: Vec<(Vec<f64>, f64)> = rows.iter().map(|r| (r.clone(), 0.0)).collect();
    n - null_space(&eq, n).ncols()
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(&b));
    }
    a.lu().solve(&b)
}
