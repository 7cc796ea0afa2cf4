//! Trial generation: an analytic honest-prover model, adversary behaviors,
//! and seeded samplers for records and counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{QpvError, Result};
use crate::estimation::{is_matched3, ConditionalDistribution2, ConditionalDistribution3};
use crate::polytopes::{self, ns3_index};
use crate::trialdata::{
    cell_code, CountsTable, JointSettingsDistribution, TrialRecord, CELLS, SETTINGS,
};

/// Records drawn per independently seeded chunk.
pub const CHUNK_LEN: usize = 1 << 20;

/// Challenge bits combine into the prover's setting by exclusive or.
pub fn settings_function(cba: u8, cbb: u8) -> u8 {
    ((cba - 1) ^ (cbb - 1)) + 1
}

/// Photon-pair source measured by polarizers at the two stations, with
/// threshold detectors. Outcome 1 is "no click" and 2 is "click".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HonestProverModel {
    /// Amplitude of |HH>.
    pub amp_hh: f64,
    /// Amplitude of |VV>.
    pub amp_vv: f64,
    /// Polarizer angle at the verifier station for mqa = 1, 2.
    pub theta_a_deg: [f64; 2],
    /// Polarizer angle at the prover for mqp = 1, 2.
    pub theta_p_deg: [f64; 2],
    pub eta_a: f64,
    pub eta_p: f64,
    /// Per-trial, per-detector dark-count probability.
    pub dark_count_prob: f64,
    pub pair_prob: f64,
    /// Probability that the two prover responses disagree.
    pub mismatch_prob: f64,
}

impl HonestProverModel {
    /// The experimental operating point with amplitudes normalized.
    pub fn reference() -> Self {
        let (a, b) = (0.383f64, 0.924f64);
        let norm = a.hypot(b);
        Self {
            amp_hh: a / norm,
            amp_vv: b / norm,
            theta_a_deg: [-6.7, 29.26],
            theta_p_deg: [6.7, -29.26],
            eta_a: 0.81,
            eta_p: 0.81,
            dark_count_prob: 1e-7,
            pair_prob: 1.0 / 350.0,
            mismatch_prob: 0.0,
        }
    }

    /// Ideal lossless source emitting every trial.
    pub fn ideal(amp_hh: f64, amp_vv: f64, theta_a_deg: [f64; 2], theta_p_deg: [f64; 2]) -> Self {
        Self {
            amp_hh,
            amp_vv,
            theta_a_deg,
            theta_p_deg,
            eta_a: 1.0,
            eta_p: 1.0,
            dark_count_prob: 0.0,
            pair_prob: 1.0,
            mismatch_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let norm = self.amp_hh * self.amp_hh + self.amp_vv * self.amp_vv;
        if (norm - 1.0).abs() > 1e-12 {
            return Err(QpvError::OutOfRange {
                name: "a^2 + b^2",
                value: norm,
                expected: "1 within 1e-12",
            });
        }
        for (name, v) in [
            ("eta_a", self.eta_a),
            ("eta_p", self.eta_p),
            ("dark_count_prob", self.dark_count_prob),
            ("pair_prob", self.pair_prob),
            ("mismatch_prob", self.mismatch_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QpvError::OutOfRange {
                    name,
                    value: v,
                    expected: "[0, 1]",
                });
            }
        }
        if self.mismatch_prob >= 1.0 {
            return Err(QpvError::OutOfRange {
                name: "mismatch_prob",
                value: self.mismatch_prob,
                expected: "< 1",
            });
        }
        if self
            .theta_a_deg
            .iter()
            .chain(&self.theta_p_deg)
            .any(|t| !t.is_finite())
        {
            return Err(QpvError::OutOfRange {
                name: "angle",
                value: f64::NAN,
                expected: "finite degrees",
            });
        }
        Ok(())
    }

    /// Joint click probabilities [none, A only, P only, both] for settings `s`.
    fn click_pattern(&self, s: usize) -> [f64; 4] {
        let ta = self.theta_a_deg[s & 1].to_radians();
        let tp = self.theta_p_deg[s >> 1].to_radians();
        let (a, b) = (self.amp_hh, self.amp_vv);
        let amp = a * ta.cos() * tp.cos() + b * ta.sin() * tp.sin();
        let both = amp * amp;
        let pa = a * a * ta.cos().powi(2) + b * b * ta.sin().powi(2);
        let pp = a * a * tp.cos().powi(2) + b * b * tp.sin().powi(2);
        let (ea, ep) = (self.eta_a, self.eta_p);
        let cc = ea * ep * both;
        let ca = ea * pa - cc;
        let cp = ep * pp - cc;
        let pair = [1.0 - ca - cp - cc, ca, cp, cc];
        let r = self.pair_prob;
        let truth = [
            r * pair[0] + (1.0 - r),
            r * pair[1],
            r * pair[2],
            r * pair[3],
        ];
        // Dark counts turn a missing click into a click independently per detector.
        let q = self.dark_count_prob;
        let mut out = [0.0; 4];
        for (t, pt) in truth.iter().enumerate() {
            for (f, po) in out.iter_mut().enumerate() {
                let mut p = *pt;
                for bit in [1usize, 2] {
                    let true_click = t & bit != 0;
                    let final_click = f & bit != 0;
                    p *= match (true_click, final_click) {
                        (true, true) => 1.0,
                        (true, false) => 0.0,
                        (false, true) => q,
                        (false, false) => 1.0 - q,
                    };
                }
                *po += p;
            }
        }
        out
    }

    /// Matched statistics σ̃(oqa, oqp | mqa, mqp).
    pub fn matched_distribution(&self) -> Result<ConditionalDistribution2> {
        self.validate()?;
        let mut rows = [[0.0; 4]; SETTINGS];
        for (s, row) in rows.iter_mut().enumerate() {
            let pattern = self.click_pattern(s);
            // click pattern bit 0 = A, bit 1 = P; outcome index uses 0 for
            // no click and 1 for click at each position, same bit order.
            for (o, v) in row.iter_mut().enumerate() {
                *v = pattern[o].max(0.0);
            }
            let total: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        ConditionalDistribution2::new(rows)
    }
}

/// Full honest model including mismatched responses.
pub fn honest_distribution(model: &HonestProverModel) -> Result<ConditionalDistribution3> {
    let matched = model.matched_distribution()?;
    crate::estimation::regularize(&matched, model.mismatch_prob)
}

/// Robustness of entanglement per trial of the pure source state.
pub fn source_robustness(model: &HonestProverModel) -> f64 {
    let s = model.amp_hh.abs() + model.amp_vv.abs();
    model.pair_prob * (s * s - 1.0)
}

/// Adversary behaviors, all expressed as points of the three-party
/// non-signaling polytope over inputs (mqa, b, b').
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryModel {
    LrVertex { index: usize },
    LrMixture { weights: Vec<f64> },
    Ns3Point { mu: Vec<f64> },
}

impl AdversaryModel {
    pub fn lr_vertex(index: usize) -> Result<Self> {
        let m = AdversaryModel::LrVertex { index };
        m.validate()?;
        Ok(m)
    }

    pub fn lr_mixture(weights: Vec<f64>) -> Result<Self> {
        let m = AdversaryModel::LrMixture { weights };
        m.validate()?;
        Ok(m)
    }

    pub fn ns3_point(mu: Vec<f64>) -> Result<Self> {
        let m = AdversaryModel::Ns3Point { mu };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AdversaryModel::LrVertex { index } if *index >= 16 => Err(QpvError::OutOfRange {
                name: "vertex index",
                value: *index as f64,
                expected: "0..16",
            }),
            AdversaryModel::LrMixture { weights }
                if weights.len() != 16
                    || weights.iter().any(|w| *w < 0.0)
                    || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 =>
            {
                Err(QpvError::InvalidDistribution(
                    "mixture needs 16 nonnegative weights summing to 1".into(),
                ))
            }
            AdversaryModel::Ns3Point { mu } if !polytopes::ns3_polytope().contains(mu) => Err(
                QpvError::InvalidDistribution("point is not three-party non-signaling".into()),
            ),
            _ => Ok(()),
        }
    }

    /// The behavior as a 64-entry three-party distribution.
    pub fn ns3_vector(&self) -> Vec<f64> {
        match self {
            AdversaryModel::LrVertex { index } => lr_ns3(*index),
            AdversaryModel::LrMixture { weights } => {
                let mut mu = vec![0.0; 64];
                for (i, w) in weights.iter().enumerate() {
                    for (m, v) in mu.iter_mut().zip(lr_ns3(i)) {
                        *m += w * v;
                    }
                }
                mu
            }
            AdversaryModel::Ns3Point { mu } => mu.clone(),
        }
    }
}

/// Local strategy where both responders answer with the prover's function of their input.
fn lr_ns3(index: usize) -> Vec<f64> {
    let v = polytopes::LrStrategy::from_index(index);
    let mut mu = vec![0.0; 64];
    for mqa in 0..2 {
        for b in 0..2 {
            for b2 in 0..2 {
                let oqa = usize::from(v.a[mqa] - 1);
                let zqa = usize::from(v.p[b] - 1);
                let zqb = usize::from(v.p[b2] - 1);
                mu[ns3_index(oqa, zqa, zqb, mqa, b, b2)] = 1.0;
            }
        }
    }
    mu
}

/// The record distribution an adversary produces: its b = b' = mqp slice.
pub fn adversary_distribution(model: &AdversaryModel) -> Result<ConditionalDistribution3> {
    model.validate()?;
    let mu = model.ns3_vector();
    let mut rows = [[0.0; 8]; SETTINGS];
    for (s, row) in rows.iter_mut().enumerate() {
        let (mqa, b) = (s & 1, s >> 1);
        for (o3, v) in row.iter_mut().enumerate() {
            *v = mu[ns3_index(o3 & 1, (o3 >> 1) & 1, (o3 >> 2) & 1, mqa, b, b)].max(0.0);
        }
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    ConditionalDistribution3::new(rows)
}

/// Joint cell probabilities ν(s) σ(o | s) indexed by record code.
pub fn cell_probabilities(
    dist: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
) -> [f64; CELLS] {
    let mut p = [0.0; CELLS];
    for s in 0..SETTINGS {
        for o3 in 0..8 {
            p[usize::from(cell_code(s, o3))] = nu.prob(s) * dist.prob(s, o3);
        }
    }
    p
}

/// i.i.d. records; chunk `k` of `CHUNK_LEN` records uses stream `k` of the
/// seeded generator, so output does not depend on how chunks are scheduled.
pub fn sample_trials(
    dist: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
    count: usize,
    seed: u64,
) -> Vec<TrialRecord> {
    let probs = cell_probabilities(dist, nu);
    let mut cdf = [0.0; CELLS];
    let mut acc = 0.0;
    for (c, p) in cdf.iter_mut().zip(probs) {
        acc += p;
        *c = acc;
    }
    let last_nonzero = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    let mut out = Vec::with_capacity(count);
    for (k, start) in (0..count).step_by(CHUNK_LEN).enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for _ in start..(start + CHUNK_LEN).min(count) {
            let u: f64 = rng.random::<f64>() * acc;
            let code = cdf.iter().position(|c| u < *c).unwrap_or(last_nonzero);
            let code = if probs[code] > 0.0 {
                code
            } else {
                last_nonzero
            };
            out.push(TrialRecord::from_code(code as u8).expect("code below 32"));
        }
    }
    out
}

/// Counts of `count` i.i.d. records, drawn directly as a multinomial.
pub fn sample_counts<R: Rng + ?Sized>(
    dist: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
    count: u64,
    rng: &mut R,
) -> CountsTable {
    let draw = multinomial(rng, count, &cell_probabilities(dist, nu));
    let mut cells = [0u64; CELLS];
    cells.copy_from_slice(&draw);
    CountsTable::from_cells(cells)
}

/// Multinomial draw by sequential conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass: f64 = probs.iter().sum();
    for (i, p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() || mass <= 0.0 {
            out[i] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            remaining
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining, q)
                .expect("valid binomial")
                .sample(rng)
        };
        out[i] = k;
        remaining -= k;
        mass -= p;
    }
    out
}

/// Matched part of a full model, for callers that only need σ̃.
pub fn matched_statistics(dist: &ConditionalDistribution3) -> Result<ConditionalDistribution2> {
    dist.matched_part()
}

/// Mass of a model on mismatched responses, averaged over settings.
pub fn mean_mismatch(dist: &ConditionalDistribution3, nu: &JointSettingsDistribution) -> f64 {
    (0..SETTINGS)
        .map(|s| {
            nu.prob(s)
                * (0..8)
                    .filter(|o| !is_matched3(*o))
                    .map(|o| dist.prob(s, o))
                    .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trialdata::outcome3_index;

    #[test]
    fn xor_settings() {
        assert_eq!(settings_function(1, 1), 1);
        assert_eq!(settings_function(1, 2), 2);
        assert_eq!(settings_function(2, 1), 2);
        assert_eq!(settings_function(2, 2), 1);
    }

    #[test]
    fn aligned_product_state_always_clicks() {
        let m = HonestProverModel::ideal(1.0, 0.0, [0.0; 2], [0.0; 2]);
        let d = honest_distribution(&m).unwrap();
        for s in 0..4 {
            assert!((d.prob(s, outcome3_index(2, 2, 2)) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_analyzer_never_clicks() {
        let m = HonestProverModel::ideal(1.0, 0.0, [90.0; 2], [0.0; 2]);
        let d = m.matched_distribution().unwrap();
        for s in 0..4 {
            assert!(d.prob(s, 1) + d.prob(s, 3) < 1e-15);
        }
    }

    #[test]
    fn reference_model_rows_sum_to_one() {
        let d = honest_distribution(&HonestProverModel::reference()).unwrap();
        for s in 0..4 {
            assert!((d.rows()[s].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(HonestProverModel {
            amp_hh: 0.383,
            ..HonestProverModel::reference()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn robustness_values() {
        assert_eq!(
            source_robustness(&HonestProverModel::ideal(1.0, 0.0, [0.0; 2], [0.0; 2])),
            0.0
        );
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = HonestProverModel::ideal(h, h, [0.0; 2], [0.0; 2]);
        assert!((source_robustness(&bell) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vertex() {
        let d = adversary_distribution(&AdversaryModel::lr_vertex(0).unwrap()).unwrap();
        for s in 0..4 {
            assert_eq!(d.prob(s, 0), 1.0);
        }
        assert!(AdversaryModel::lr_vertex(16).is_err());
        assert!(AdversaryModel::ns3_point(vec![0.0; 64]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let d = honest_distribution(&HonestProverModel::reference()).unwrap();
        let nu = JointSettingsDistribution::uniform();
        assert!(sample_trials(&d, &nu, 0, 1).is_empty());
        let a = sample_trials(&d, &nu, 5000, 9);
        assert_eq!(a, sample_trials(&d, &nu, 5000, 9));
        assert_ne!(a, sample_trials(&d, &nu, 5000, 10));
    }

    #[test]
    fn point_mass_sampling() {
        let mut rows = [[0.0; 8]; 4];
        for r in rows.iter_mut() {
            r[5] = 1.0;
        }
        let d = ConditionalDistribution3::new(rows).unwrap();
        let nu = JointSettingsDistribution::new([1.0 - 3e-12, 1e-12, 1e-12, 1e-12]).unwrap();
        let recs = sample_trials(&d, &nu, 1000, 3);
        assert!(recs.iter().all(|r| r.code() == cell_code(0, 5)));
    }

    #[test]
    fn multinomial_preserves_total() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let draw = multinomial(&mut rng, 1_000_000, &[0.5, 0.0, 0.25, 0.25]);
        assert_eq!(draw.iter().sum::<u64>(), 1_000_000);
        assert_eq!(draw[1], 0);
    }
}
