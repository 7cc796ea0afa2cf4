//! Trial-wise test factors.
//!
//! A Bell factor `W_LR` is built for the matched two-party statistics, then
//! extended to the full record by a constant `λ` on mismatched responses and
//! certified against every three-party non-signaling adversary by linear
//! programming. Variants for adversaries with bounded prior entanglement are
//! derived from a certified factor by affine mixing and rescaling.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{QpvError, Result};
use crate::estimation::{is_matched3, ConditionalDistribution2, ConditionalDistribution3};
use crate::optim::LogProblem;
use crate::polytopes::{self, ns3_index, LinearOptimum};
use crate::trialdata::{
    cell_code, cell_outcome3, cell_settings, JointSettingsDistribution, TrialRecord, CELLS,
    SETTINGS,
};

/// Allowed excess of the certified expectation over 1.
pub const CERT_MARGIN: f64 = 1e-8;
/// Absolute tolerance of the λ bisection.
pub const LAMBDA_TOL: f64 = 1e-9;
const LAMBDA_BRACKET: f64 = 10.0;

/// Bell factor over matched outcomes, `values[settings][outcome2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellFactor {
    pub values: [[f64; 4]; SETTINGS],
}

impl BellFactor {
    pub fn unity() -> Self {
        Self {
            values: [[1.0; 4]; SETTINGS],
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            values: self.values.map(|r| r.map(|v| v * k)),
        }
    }

    /// Largest ν-weighted expectation over the 16 local deterministic strategies.
    pub fn max_lr_expectation(&self, nu: &JointSettingsDistribution) -> f64 {
        polytopes::lr_vertices()
            .strategies()
            .iter()
            .map(|v| {
                (0..SETTINGS)
                    .map(|s| nu.prob(s) * self.values[s][v.outcome(s)])
                    .sum::<f64>()
            })
            .fold(f64::MIN, f64::max)
    }

    /// Expected natural log under `sigma` and `nu`.
    pub fn log_gain(
        &self,
        sigma: &ConditionalDistribution2,
        nu: &JointSettingsDistribution,
    ) -> f64 {
        let mut g = 0.0;
        for s in 0..SETTINGS {
            for o in 0..4 {
                let p = nu.prob(s) * sigma.prob(s, o);
                if p > 0.0 {
                    g += p * self.values[s][o].ln();
                }
            }
        }
        g
    }
}

#[derive(Clone, Debug)]
pub struct WlrResult {
    pub factor: BellFactor,
    /// Expected natural log of the factor under the input distribution.
    pub gain: f64,
    /// False when the input admits a local model and the factor is trivial.
    pub violating: bool,
}

/// The concave program behind [`build_wlr`], exposed for optimality probes.
pub fn wlr_problem(sigma: &ConditionalDistribution2, nu: &JointSettingsDistribution) -> LogProblem {
    let mut weights = vec![0.0; 16];
    for s in 0..SETTINGS {
        for o in 0..4 {
            weights[o + 4 * s] = nu.prob(s) * sigma.prob(s, o);
        }
    }
    let mut p = LogProblem::new(weights);
    for v in polytopes::lr_vertices().strategies() {
        let mut row = vec![0.0; 16];
        for s in 0..SETTINGS {
            row[v.outcome(s) + 4 * s] = nu.prob(s);
        }
        p.add_le(row, 1.0);
    }
    p
}

/// Gain-optimal factor against local realism for the matched statistics.
pub fn build_wlr(
    sigma: &ConditionalDistribution2,
    nu: &JointSettingsDistribution,
) -> Result<WlrResult> {
    if polytopes::lr_membership(&sigma.as_vector())? {
        return Ok(WlrResult {
            factor: BellFactor::unity(),
            gain: 0.0,
            violating: false,
        });
    }
    let problem = wlr_problem(sigma, nu);
    let sol = problem.maximize(&[0.5; 16])?;
    let mut values = [[0.0; 4]; SETTINGS];
    for s in 0..SETTINGS {
        for o in 0..4 {
            let w = sol.x[o + 4 * s];
            // Cells the model never produces do not affect the gain; keep
            // them at most 1 so they cannot reward an adversary.
            values[s][o] = if sigma.prob(s, o) > 0.0 {
                w
            } else {
                w.min(1.0)
            };
        }
    }
    let factor = BellFactor { values };
    Ok(WlrResult {
        gain: factor.log_gain(sigma, nu),
        factor,
        violating: true,
    })
}

/// Objective over the three-party polytope giving the ν-weighted expectation
/// of the factor with matched values `wlr` and mismatch constant `lambda`.
pub fn ns3_objective(wlr: &BellFactor, lambda: f64, nu: &JointSettingsDistribution) -> Vec<f64> {
    let mut c = vec![0.0; 64];
    for mqa in 0..2 {
        for b in 0..2 {
            let s = mqa | b << 1;
            for o3 in 0..8 {
                let (oqa, zqa, zqb) = (o3 & 1, (o3 >> 1) & 1, (o3 >> 2) & 1);
                let w = if zqa == zqb {
                    wlr.values[s][oqa | zqa << 1]
                } else {
                    lambda
                };
                c[ns3_index(oqa, zqa, zqb, mqa, b, b)] = nu.prob(s) * w;
            }
        }
    }
    c
}

pub fn max_ns3_expectation(
    wlr: &BellFactor,
    lambda: f64,
    nu: &JointSettingsDistribution,
) -> Result<LinearOptimum> {
    polytopes::max_linear(&ns3_objective(wlr, lambda, nu), &polytopes::ns3_polytope())
}

/// Largest mismatch constant keeping the factor valid against three-party
/// non-signaling adversaries, by bisection on `[0, 10]`.
pub fn lambda_max(wlr: &BellFactor, nu: &JointSettingsDistribution) -> Result<f64> {
    let poly = polytopes::ns3_polytope();
    let feasible = |lambda: f64| -> Result<bool> {
        Ok(polytopes::max_linear(&ns3_objective(wlr, lambda, nu), &poly)?.value <= 1.0)
    };
    if !feasible(0.0)? {
        return Err(QpvError::Certification {
            max_expectation: max_ns3_expectation(wlr, 0.0, nu)?.value,
            margin: 0.0,
        });
    }
    if feasible(LAMBDA_BRACKET)? {
        return Ok(LAMBDA_BRACKET);
    }
    let (mut lo, mut hi) = (0.0, LAMBDA_BRACKET);
    while hi - lo > LAMBDA_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// A certified trial-wise test factor over all 32 record cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFactor {
    values: Vec<f64>,
    mismatch_constant: f64,
    nu: JointSettingsDistribution,
    /// Upper bound on the expectation against any allowed adversary.
    max_expectation: f64,
    certification_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window_id: Option<String>,
}

impl TestFactor {
    fn from_parts(
        wlr: &BellFactor,
        lambda: f64,
        nu: &JointSettingsDistribution,
        max_expectation: f64,
    ) -> Self {
        let mut values = vec![0.0; CELLS];
        for (code, v) in values.iter_mut().enumerate() {
            let code = code as u8;
            let o3 = cell_outcome3(code);
            *v = if is_matched3(o3) {
                wlr.values[cell_settings(code)][(o3 & 1) | ((o3 >> 1) & 1) << 1]
            } else {
                lambda
            };
        }
        Self {
            values,
            mismatch_constant: lambda,
            nu: *nu,
            max_expectation,
            certification_margin: CERT_MARGIN,
            window_id: None,
        }
    }

    /// The constant factor 1, trivially valid.
    pub fn unity(nu: &JointSettingsDistribution) -> Self {
        Self::from_parts(&BellFactor::unity(), 1.0, nu, 1.0)
    }

    pub fn with_window_id(mut self, id: impl Into<String>) -> Self {
        self.window_id = Some(id.into());
        self
    }

    pub fn window_id(&self) -> Option<&str> {
        self.window_id.as_deref()
    }

    #[inline]
    pub fn value(&self, code: u8) -> f64 {
        self.values[usize::from(code)]
    }

    pub fn value_of(&self, record: TrialRecord) -> f64 {
        self.value(record.code())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, settings: usize, outcome3: usize) -> f64 {
        self.value(cell_code(settings, outcome3))
    }

    pub fn mismatch_constant(&self) -> f64 {
        self.mismatch_constant
    }

    pub fn nu(&self) -> &JointSettingsDistribution {
        &self.nu
    }

    pub fn max_expectation(&self) -> f64 {
        self.max_expectation
    }

    pub fn certification_margin(&self) -> f64 {
        self.certification_margin
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Matched-cell values in table layout.
    pub fn matched_values(&self) -> BellFactor {
        let mut values = [[0.0; 4]; SETTINGS];
        for (s, row) in values.iter_mut().enumerate() {
            for (o2, v) in row.iter_mut().enumerate() {
                let (oqa, oqp) = (o2 & 1, o2 >> 1);
                *v = self.value_at(s, oqa | oqp << 1 | oqp << 2);
            }
        }
        BellFactor { values }
    }

    /// Invariant under exchanging the two responses.
    pub fn is_symmetric(&self) -> bool {
        (0..CELLS as u8).all(|code| {
            let swapped = (code & 0b00111) | ((code >> 4) & 1) << 3 | ((code >> 3) & 1) << 4;
            self.value(code) == self.value(swapped)
        })
    }

    /// Expectation against the three-party polytope, recomputed by LP.
    pub fn certify(&self) -> Result<f64> {
        let v =
            max_ns3_expectation(&self.matched_values(), self.mismatch_constant, &self.nu)?.value;
        if v > 1.0 + self.certification_margin {
            return Err(QpvError::Certification {
                max_expectation: v,
                margin: self.certification_margin,
            });
        }
        Ok(v)
    }

    /// Expectation under a full three-response model and settings distribution.
    pub fn expectation(&self, sigma: &ConditionalDistribution3) -> f64 {
        let mut e = 0.0;
        for s in 0..SETTINGS {
            for o3 in 0..8 {
                e += self.nu.prob(s) * sigma.prob(s, o3) * self.value_at(s, o3);
            }
        }
        e
    }

    fn map_values(&self, f: impl Fn(f64) -> f64, max_expectation: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| f(*v)).collect(),
            mismatch_constant: f(self.mismatch_constant),
            nu: self.nu,
            max_expectation,
            certification_margin: self.certification_margin,
            window_id: self.window_id.clone(),
        }
    }
}

/// Extends a Bell factor with mismatch constant `lambda` and certifies it.
pub fn assemble_robust(
    wlr: &BellFactor,
    lambda: f64,
    nu: &JointSettingsDistribution,
) -> Result<TestFactor> {
    if lambda < 0.0 || wlr.values.iter().flatten().any(|v| *v < 0.0) {
        return Err(QpvError::OutOfRange {
            name: "test factor value",
            value: lambda.min(
                wlr.values
                    .iter()
                    .flatten()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
            ),
            expected: ">= 0",
        });
    }
    let max = max_ns3_expectation(wlr, lambda, nu)?.value;
    if max > 1.0 + CERT_MARGIN {
        return Err(QpvError::Certification {
            max_expectation: max,
            margin: CERT_MARGIN,
        });
    }
    Ok(TestFactor::from_parts(wlr, lambda, nu, max))
}

/// Factor for basic position verification from a matched distribution:
/// `W_LR`, then the largest certified mismatch constant.
pub fn build_robust(
    sigma: &ConditionalDistribution2,
    nu: &JointSettingsDistribution,
) -> Result<TestFactor> {
    let wlr = build_wlr(sigma, nu)?;
    let lambda = lambda_max(&wlr.factor, nu)?;
    assemble_robust(&wlr.factor, lambda, nu)
}

/// Σ ν(s) min_o W(s, o) with arbitrary nonnegative settings weights.
pub fn wbar_min_weighted(w: &TestFactor, weights: &[f64; SETTINGS]) -> f64 {
    (0..SETTINGS)
        .map(|s| {
            let m = (0..8)
                .map(|o| w.value_at(s, o))
                .fold(f64::INFINITY, f64::min);
            weights[s] * m
        })
        .sum()
}

pub fn wbar_min(w: &TestFactor, nu: &JointSettingsDistribution) -> f64 {
    wbar_min_weighted(w, nu.probs())
}

/// `W / (1 + ξ(1 - w̄_min))`, valid against prior entanglement of robustness at most ξ.
pub fn scale_for_fixed_entanglement(w: &TestFactor, xi: f64) -> Result<TestFactor> {
    if !(xi >= 0.0) {
        return Err(QpvError::OutOfRange {
            name: "xi",
            value: xi,
            expected: ">= 0",
        });
    }
    let wbar = wbar_min(w, w.nu());
    if wbar >= 1.0 {
        return Err(QpvError::UselessFactor { wbar_min: wbar });
    }
    let wu = 1.0 + xi * (1.0 - wbar);
    Ok(w.map_values(|v| v / wu, w.max_expectation() / wu))
}

/// Upper end of the allowed mixing range, infinite when `min W >= 1`.
pub fn mix_upper_bound(w: &TestFactor) -> f64 {
    let m = w.min_value();
    if m >= 1.0 {
        f64::INFINITY
    } else {
        1.0 / (1.0 - m)
    }
}

/// `λ W + (1 - λ)`.
pub fn mix_with_unity(w: &TestFactor, lambda: f64) -> Result<TestFactor> {
    let upper = mix_upper_bound(w);
    if !(0.0..=upper).contains(&lambda) {
        return Err(QpvError::OutOfRange {
            name: "lambda_mix",
            value: lambda,
            expected: "0 <= lambda <= 1/(1 - w_min)",
        });
    }
    let max = lambda * w.max_expectation() + (1.0 - lambda);
    Ok(w.map_values(|v| (lambda * v + 1.0 - lambda).max(0.0), max))
}

/// `W' exp(-r_th (1 - w̄'_min))`.
pub fn entanglement_discounted(w: &TestFactor, r_th: f64) -> Result<TestFactor> {
    if !(r_th >= 0.0) {
        return Err(QpvError::OutOfRange {
            name: "r_th",
            value: r_th,
            expected: ">= 0",
        });
    }
    let k = (-r_th * (1.0 - wbar_min(w, w.nu()))).exp();
    Ok(w.map_values(|v| v * k, w.max_expectation() * k))
}

/// Mean and variance of log2 W per trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainVariance {
    pub g: f64,
    pub v: f64,
}

impl GainVariance {
    /// Mean in natural-log units.
    pub fn g_nats(&self) -> f64 {
        self.g * LN_2
    }

    pub fn v_nats(&self) -> f64 {
        self.v * LN_2 * LN_2
    }
}

pub fn gain_variance(
    w: &TestFactor,
    sigma: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
) -> Result<GainVariance> {
    let mut terms = Vec::with_capacity(CELLS);
    for code in 0..CELLS as u8 {
        let (s, o3) = (cell_settings(code), cell_outcome3(code));
        let p = nu.prob(s) * sigma.prob(s, o3);
        if p == 0.0 {
            continue;
        }
        let wv = w.value(code);
        if wv <= 0.0 {
            return Err(QpvError::ZeroFactor { cell: code });
        }
        terms.push((p, wv.log2()));
    }
    let g: f64 = terms.iter().map(|(p, x)| p * x).sum();
    let v: f64 = terms.iter().map(|(p, x)| p * (x - g) * (x - g)).sum();
    Ok(GainVariance { g, v })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> JointSettingsDistribution {
        JointSettingsDistribution::uniform()
    }

    #[test]
    fn lr_input_gives_unity() {
        let v = polytopes::lr_vertices().strategies()[0].distribution();
        let sigma = ConditionalDistribution2::from_vector(&v).unwrap();
        let r = build_wlr(&sigma, &uniform()).unwrap();
        assert!(!r.violating);
        assert_eq!(r.factor, BellFactor::unity());
        assert_eq!(r.gain, 0.0);
    }

    #[test]
    fn unity_lambda_is_one() {
        let lam = lambda_max(&BellFactor::unity(), &uniform()).unwrap();
        assert!((lam - 1.0).abs() < 1e-9, "{lam}");
        let w = assemble_robust(&BellFactor::unity(), 1.0, &uniform()).unwrap();
        assert!(w.values().iter().all(|v| *v == 1.0));
        assert!(w.is_symmetric());
    }

    #[test]
    fn over_large_lambda_fails_certification() {
        assert!(matches!(
            assemble_robust(&BellFactor::unity(), 1.01, &uniform()),
            Err(QpvError::Certification { .. })
        ));
    }

    #[test]
    fn mixing_and_scaling() {
        let mut b = BellFactor::unity();
        b.values[3][3] = 0.5;
        b.values[0][0] = 1.2;
        let w = TestFactor::from_parts(&b, 0.9, &uniform(), 1.0);
        let full = mix_with_unity(&w, 1.0).unwrap();
        for (a, b) in full.values().iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(mix_with_unity(&w, 0.0)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 1.0));
        let top = mix_upper_bound(&w);
        assert!((top - 2.0).abs() < 1e-15);
        assert!(mix_with_unity(&w, top).unwrap().min_value().abs() < 1e-15);
        assert!(mix_with_unity(&w, top + 1e-6).is_err());
        let same = scale_for_fixed_entanglement(&w, 0.0).unwrap();
        assert_eq!(same.values(), w.values());
        let d = entanglement_discounted(&w, 0.0).unwrap();
        assert_eq!(d.values(), w.values());
        let u = TestFactor::unity(&uniform());
        assert!(matches!(
            scale_for_fixed_entanglement(&u, 1.0),
            Err(QpvError::UselessFactor { .. })
        ));
        assert_eq!(
            entanglement_discounted(&u, 8e-6).unwrap().values(),
            u.values()
        );
    }

    #[test]
    fn gain_of_unity_is_zero() {
        let sigma = crate::estimation::regularize(
            &ConditionalDistribution2::new([[0.25; 4]; 4]).unwrap(),
            1e-3,
        )
        .unwrap();
        let gv = gain_variance(&TestFactor::unity(&uniform()), &sigma, &uniform()).unwrap();
        assert_eq!(gv, GainVariance { g: 0.0, v: 0.0 });
    }

    #[test]
    fn json_roundtrip() {
        let w = TestFactor::unity(&uniform()).with_window_id("w0");
        let s = serde_json::to_string(&w).unwrap();
        let back: TestFactor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }
}
