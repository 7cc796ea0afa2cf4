//! Calibration: maximum-likelihood fit of matched outcomes over the quantum
//! set, and the mismatch regularization that turns the fit into a full
//! three-response model.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QpvError, Result};
use crate::optim::LogProblem;
use crate::polytopes::{self, Dist2};
use crate::simulator::multinomial;
use crate::trialdata::{outcome3_index, CountsTable, SETTINGS};

const ROW_SUM_TOL: f64 = 1e-12;

/// Default mismatch mass used for regularization.
pub const DEFAULT_MISMATCH: f64 = 2e-6;

/// σ̃(oqa, oqp | mqa, mqp): one row per settings pair, outcomes in table order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct ConditionalDistribution2 {
    rows: [[f64; 4]; SETTINGS],
}

impl ConditionalDistribution2 {
    pub fn new(rows: [[f64; 4]; SETTINGS]) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(Self { rows })
    }

    pub fn from_vector(v: &Dist2) -> Result<Self> {
        let mut rows = [[0.0; 4]; SETTINGS];
        for (s, row) in rows.iter_mut().enumerate() {
            row.copy_from_slice(&v[4 * s..4 * s + 4]);
        }
        Self::new(rows)
    }

    #[inline]
    pub fn prob(&self, settings: usize, outcome2: usize) -> f64 {
        self.rows[settings][outcome2]
    }

    pub fn rows(&self) -> &[[f64; 4]; SETTINGS] {
        &self.rows
    }

    pub fn as_vector(&self) -> Dist2 {
        let mut v = [0.0; 16];
        for s in 0..SETTINGS {
            v[4 * s..4 * s + 4].copy_from_slice(&self.rows[s]);
        }
        v
    }

    pub fn chsh_values(&self) -> [f64; 8] {
        polytopes::chsh_values(&self.as_vector())
    }

    /// Within `1e-8` of the quantum set.
    pub fn is_quantum(&self) -> bool {
        polytopes::quantum_set().max_violation(&self.as_vector()) <= 1e-8
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.as_vector()
            .iter()
            .zip(other.as_vector().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<[[f64; 4]; 4]> for ConditionalDistribution2 {
    type Error = QpvError;
    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ConditionalDistribution2> for [[f64; 4]; 4] {
    fn from(d: ConditionalDistribution2) -> Self {
        d.rows
    }
}

/// σ(oqa, zqa, zqb | mqa, mqp): one row per settings pair, three-party
/// outcome index with oqa fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 8]; 4]", into = "[[f64; 8]; 4]")]
pub struct ConditionalDistribution3 {
    rows: [[f64; 8]; SETTINGS],
}

impl ConditionalDistribution3 {
    pub fn new(rows: [[f64; 8]; SETTINGS]) -> Result<Self> {
        validate_rows(&rows)?;
        Ok(Self { rows })
    }

    #[inline]
    pub fn prob(&self, settings: usize, outcome3: usize) -> f64 {
        self.rows[settings][outcome3]
    }

    pub fn rows(&self) -> &[[f64; 8]; SETTINGS] {
        &self.rows
    }

    /// Probability mass on zqa != zqb for a settings pair.
    pub fn mismatch_mass(&self, settings: usize) -> f64 {
        (0..8)
            .filter(|o| !is_matched3(*o))
            .map(|o| self.rows[settings][o])
            .sum()
    }

    /// Conditional distribution of (oqa, zqa) given a match.
    pub fn matched_part(&self) -> Result<ConditionalDistribution2> {
        let mut rows = [[0.0; 4]; SETTINGS];
        for (s, row) in rows.iter_mut().enumerate() {
            for (o2, v) in row.iter_mut().enumerate() {
                let (oqa, oqp) = ((o2 & 1) as u8 + 1, (o2 >> 1) as u8 + 1);
                *v = self.rows[s][outcome3_index(oqa, oqp, oqp)];
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(QpvError::Degenerate(format!(
                    "settings pair {s} has no matched probability"
                )));
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        ConditionalDistribution2::new(rows)
    }
}

impl TryFrom<[[f64; 8]; 4]> for ConditionalDistribution3 {
    type Error = QpvError;
    fn try_from(rows: [[f64; 8]; 4]) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<ConditionalDistribution3> for [[f64; 8]; 4] {
    fn from(d: ConditionalDistribution3) -> Self {
        d.rows
    }
}

#[inline]
pub(crate) fn is_matched3(outcome3: usize) -> bool {
    (outcome3 >> 1) & 1 == (outcome3 >> 2) & 1
}

fn validate_rows<const N: usize>(rows: &[[f64; N]; SETTINGS]) -> Result<()> {
    for (s, row) in rows.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(QpvError::InvalidDistribution(format!(
                "settings pair {s} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(QpvError::InvalidDistribution(format!(
                "settings pair {s} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Restricted counts ñ(oqa, oqp; mqa, mqp) as a flat vector.
pub fn matched_counts(counts: &CountsTable) -> [f64; 16] {
    let mut n = [0.0; 16];
    for s in 0..SETTINGS {
        for o in 0..4 {
            n[o + 4 * s] = counts.matched(s, o) as f64;
        }
    }
    n
}

/// The log-likelihood problem over the quantum set for the given weights.
pub fn ml_problem(weights: &[f64; 16]) -> LogProblem {
    let q = polytopes::quantum_set();
    let mut p = LogProblem::new(weights.to_vec());
    for (row, rhs) in q.equalities() {
        p.add_eq(row.clone(), *rhs);
    }
    // Nonnegativity is handled by the barrier; keep only the Tsirelson rows.
    for (row, rhs) in q.inequalities() {
        if *rhs != 0.0 {
            p.add_le(row.clone(), *rhs);
        }
    }
    p
}

#[derive(Clone, Debug)]
pub struct MlFit {
    pub distribution: ConditionalDistribution2,
    /// Σ ñ ln μ at the optimum.
    pub log_likelihood: f64,
    pub gap_bound: f64,
}

/// Maximum-likelihood fit of the matched counts over the quantum set.
pub fn ml_fit_quantum(counts: &CountsTable) -> Result<ConditionalDistribution2> {
    Ok(ml_fit_weights(&matched_counts(counts))?.distribution)
}

/// Fit with real-valued weights (counts or expected counts).
pub fn ml_fit_weights(weights: &[f64; 16]) -> Result<MlFit> {
    for s in 0..SETTINGS {
        if weights[4 * s..4 * s + 4].iter().sum::<f64>() <= 0.0 {
            return Err(QpvError::Degenerate(format!(
                "settings pair {s} has no matched counts"
            )));
        }
    }
    let problem = ml_problem(weights);
    let sol = problem.maximize(&[0.25; 16])?;
    let mut v = [0.0; 16];
    for (s, chunk) in v.chunks_mut(4).enumerate() {
        let row = &sol.x[4 * s..4 * s + 4];
        let total: f64 = row.iter().sum();
        for (dst, x) in chunk.iter_mut().zip(row) {
            *dst = x.max(0.0) / total;
        }
    }
    Ok(MlFit {
        distribution: ConditionalDistribution2::from_vector(&v)?,
        log_likelihood: sol.objective,
        gap_bound: sol.gap_bound,
    })
}

/// Spreads mismatch mass `d` evenly over the four zqa != zqb cells.
pub fn regularize(sigma: &ConditionalDistribution2, d: f64) -> Result<ConditionalDistribution3> {
    if !(0.0..1.0).contains(&d) {
        return Err(QpvError::OutOfRange {
            name: "d",
            value: d,
            expected: "0 <= d < 1",
        });
    }
    let mut rows = [[0.0; 8]; SETTINGS];
    for (s, row) in rows.iter_mut().enumerate() {
        for (o3, v) in row.iter_mut().enumerate() {
            *v = if is_matched3(o3) {
                let o2 = (o3 & 1) | ((o3 >> 1) & 1) << 1;
                (1.0 - d) * sigma.prob(s, o2)
            } else {
                d / 4.0
            };
        }
    }
    ConditionalDistribution3::new(rows)
}

/// Structured summary of one calibration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub window_id: String,
    pub counts: CountsTable,
    pub fitted: ConditionalDistribution2,
    pub chsh: [f64; 8],
    pub d: f64,
    pub log_likelihood: f64,
}

pub fn calibrate(
    counts: &CountsTable,
    d: f64,
    window_id: impl Into<String>,
) -> Result<CalibrationReport> {
    let fit = ml_fit_weights(&matched_counts(counts))?;
    Ok(CalibrationReport {
        window_id: window_id.into(),
        counts: *counts,
        chsh: fit.distribution.chsh_values(),
        fitted: fit.distribution,
        d,
        log_likelihood: fit.log_likelihood,
    })
}

/// Spread of refits under multinomial resampling of the matched counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResamplingDiagnostic {
    pub replicates: usize,
    /// Per-entry standard deviation of the refitted σ̃ (flat layout).
    pub std_dev: Vec<f64>,
    /// Largest deviation of any replicate from the original fit.
    pub max_abs_deviation: f64,
}

pub fn resampling_diagnostic(
    counts: &CountsTable,
    replicates: usize,
    seed: u64,
) -> Result<ResamplingDiagnostic> {
    let base = ml_fit_quantum(counts)?;
    let freq = crate::trialdata::match_frequencies(counts)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sum = [0.0; 16];
    let mut sum_sq = [0.0; 16];
    let mut max_dev = 0.0f64;
    for _ in 0..replicates {
        let mut w = [0.0; 16];
        for s in 0..SETTINGS {
            let n: u64 = (0..4).map(|o| counts.matched(s, o)).sum();
            let draw = multinomial(&mut rng, n, freq.rows()[s].as_slice());
            for o in 0..4 {
                w[o + 4 * s] = draw[o] as f64;
            }
        }
        let fit = ml_fit_weights(&w)?.distribution;
        max_dev = max_dev.max(fit.max_abs_diff(&base));
        for (i, v) in fit.as_vector().iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let r = replicates.max(1) as f64;
    let std_dev = (0..16)
        .map(|i| {
            let m = sum[i] / r;
            (sum_sq[i] / r - m * m).max(0.0).sqrt()
        })
        .collect();
    Ok(ResamplingDiagnostic {
        replicates,
        std_dev,
        max_abs_deviation: max_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trialdata::cell_code;

    fn counts_from(rows: [[u64; 4]; 4]) -> CountsTable {
        let mut c = CountsTable::new();
        for s in 0..4 {
            for o2 in 0..4 {
                let o3 = (o2 & 1) | (o2 >> 1) << 1 | (o2 >> 1) << 2;
                c.add_code(cell_code(s, o3), rows[s][o2]);
            }
        }
        c
    }

    #[test]
    fn interior_counts_fit_to_frequencies() {
        let c = counts_from([[40, 10, 10, 40]; 4]);
        let fit = ml_fit_quantum(&c).unwrap();
        for s in 0..4 {
            assert!((fit.prob(s, 0) - 0.4).abs() < 1e-9);
            assert!((fit.prob(s, 1) - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn pr_box_counts_land_on_tsirelson_boundary() {
        let c = counts_from([
            [50, 0, 0, 50],
            [50, 0, 0, 50],
            [50, 0, 0, 50],
            [0, 50, 50, 0],
        ]);
        let fit = ml_fit_quantum(&c).unwrap();
        let max = fit.chsh_values().iter().copied().fold(f64::MIN, f64::max);
        assert!((max - polytopes::TSIRELSON).abs() < 1e-7, "{max}");
        assert!(fit.is_quantum());
    }

    #[test]
    fn degenerate_counts_rejected() {
        let c = counts_from([[1, 0, 0, 0], [0; 4], [1, 0, 0, 0], [1, 0, 0, 0]]);
        assert!(matches!(ml_fit_quantum(&c), Err(QpvError::Degenerate(_))));
    }

    #[test]
    fn scaling_invariance() {
        let a = counts_from([
            [40, 10, 13, 37],
            [30, 20, 5, 45],
            [44, 6, 9, 41],
            [12, 38, 40, 10],
        ]);
        let mut b = CountsTable::new();
        for _ in 0..3 {
            b.merge(&a);
        }
        let fa = ml_fit_quantum(&a).unwrap();
        let fb = ml_fit_quantum(&b).unwrap();
        assert!(fa.max_abs_diff(&fb) < 1e-10);
    }

    #[test]
    fn regularize_cases() {
        let s = ConditionalDistribution2::new([[0.7, 0.1, 0.1, 0.1]; 4]).unwrap();
        let r0 = regularize(&s, 0.0).unwrap();
        assert_eq!(r0.mismatch_mass(2), 0.0);
        assert_eq!(r0.prob(1, 0), 0.7);
        let r = regularize(&s, 2e-6).unwrap();
        assert_eq!(r.prob(0, outcome3_index(1, 1, 2)), 0.5e-6);
        assert!((r.mismatch_mass(3) - 2e-6).abs() < 1e-18);
        assert!(r.matched_part().unwrap().max_abs_diff(&s) < 1e-15);
        assert!(regularize(&s, 1.0).is_err());
        assert!(regularize(&s, -0.1).is_err());
    }

    #[test]
    fn distribution_validation() {
        assert!(ConditionalDistribution2::new([[0.5, 0.5, 0.1, 0.0]; 4]).is_err());
        assert!(ConditionalDistribution2::new([[1.1, -0.1, 0.0, 0.0]; 4]).is_err());
        let d = ConditionalDistribution2::new([[0.25; 4]; 4]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: ConditionalDistribution2 = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}
