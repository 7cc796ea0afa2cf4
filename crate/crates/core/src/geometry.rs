//! Spatial target regions from verifier timings.
//!
//! Coordinates put verifier `Vap` at the origin and `Vb` at `(d, 0, 0)`.
//! Every region here is symmetric under rotation about that axis, so sizes
//! are computed in `(x, ρ)` half-plane coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{QpvError, Result};

/// Speed of light in meters per nanosecond (exact).
pub const C_M_PER_NS: f64 = 0.299_792_458;
/// Abort threshold for the fraction of outer samples with an empty region.
pub const MAX_EMPTY_FRACTION: f64 = 0.01;
const BOX_PAD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub const fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub const fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }
}

/// Send and receive times (ns) and the verifier separation (m).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingGeometry {
    pub s_vap_ns: Measured,
    pub s_vb_ns: Measured,
    pub r_vap_ns: Measured,
    pub r_vb_ns: Measured,
    pub d_sep_m: Measured,
}

impl TimingGeometry {
    /// The experimental layout.
    pub fn reference() -> Self {
        Self {
            s_vap_ns: Measured::new(1291.0, 0.5),
            s_vb_ns: Measured::new(1429.1, 0.6),
            r_vap_ns: Measured::new(2340.3, 0.5),
            r_vb_ns: Measured::new(2207.7, 0.6),
            d_sep_m: Measured::new(195.1, 0.3),
        }
    }

    /// Light-speed challenges and zero-latency responses from the midpoint.
    pub fn ideal(d_sep_m: f64) -> Self {
        let half = d_sep_m / 2.0 / C_M_PER_NS;
        Self {
            s_vap_ns: Measured::exact(0.0),
            s_vb_ns: Measured::exact(0.0),
            r_vap_ns: Measured::exact(2.0 * half),
            r_vb_ns: Measured::exact(2.0 * half),
            d_sep_m: Measured::exact(d_sep_m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.s_vap_ns,
            self.s_vb_ns,
            self.r_vap_ns,
            self.r_vb_ns,
            self.d_sep_m,
        ];
        if all
            .iter()
            .any(|m| !m.value.is_finite() || !(m.sigma >= 0.0))
        {
            return Err(QpvError::Geometry(
                "values must be finite with sigma >= 0".into(),
            ));
        }
        if self.s_vap_ns.value > self.r_vap_ns.value || self.s_vb_ns.value > self.r_vb_ns.value {
            return Err(QpvError::Geometry(
                "a response deadline precedes its challenge".into(),
            ));
        }
        if !(self.d_sep_m.value > 0.0) {
            return Err(QpvError::Geometry(
                "verifier separation must be positive".into(),
            ));
        }
        Ok(())
    }

    fn central(&self) -> [f64; 5] {
        [
            self.s_vap_ns.value,
            self.s_vb_ns.value,
            self.r_vap_ns.value,
            self.r_vb_ns.value,
            self.d_sep_m.value,
        ]
    }

    fn sigmas(&self) -> [f64; 5] {
        [
            self.s_vap_ns.sigma,
            self.s_vb_ns.sigma,
            self.r_vap_ns.sigma,
            self.r_vb_ns.sigma,
            self.d_sep_m.sigma,
        ]
    }
}

/// Sphere radii, ellipsoid major axes and focal separation, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub r_a: f64,
    pub r_b: f64,
    pub m1: f64,
    pub m2: f64,
    pub d: f64,
}

fn spec_from(v: [f64; 5]) -> RegionSpec {
    let [s_a, s_b, r_a, r_b, d] = v;
    RegionSpec {
        r_a: C_M_PER_NS * (r_a - s_a) / 2.0,
        r_b: C_M_PER_NS * (r_b - s_b) / 2.0,
        m1: C_M_PER_NS * (r_b - s_a),
        m2: C_M_PER_NS * (r_a - s_b),
        d,
    }
}

pub fn region_spec(tg: &TimingGeometry) -> RegionSpec {
    spec_from(tg.central())
}

impl RegionSpec {
    /// True when the quantum region has a point, checked on the axis where
    /// every constraint is loosest.
    pub fn quantum_nonempty(&self) -> bool {
        let (lo, hi) = self.quantum_axis_interval();
        lo <= hi
    }

    /// Axis interval `[lo, hi]` of the quantum region (empty when lo > hi).
    pub fn quantum_axis_interval(&self) -> (f64, f64) {
        let m = self.m1.min(self.m2);
        let (elo, ehi) = ellipse_axis(m, self.d);
        let lo = (-self.r_a).max(self.d - self.r_b).max(elo);
        let hi = self.r_a.min(self.d + self.r_b).min(ehi);
        (lo, hi)
    }

    /// Axis box `(x_lo, x_hi, ρ_max)` enclosing both regions, padded 1%.
    pub fn bounding_box(&self) -> (f64, f64, f64) {
        let mmax = self.m1.max(self.m2);
        let (elo, ehi) = ellipse_axis(mmax, self.d);
        let lo = (-self.r_a).min(self.d - self.r_b).max(elo);
        let hi = self.r_a.max(self.d + self.r_b).min(ehi);
        let semi_minor = ((mmax / 2.0).powi(2) - (self.d / 2.0).powi(2))
            .max(0.0)
            .sqrt();
        let rho = self.r_a.max(self.r_b).min(semi_minor);
        let pad = BOX_PAD * (hi - lo).abs().max(rho);
        (lo - pad, hi + pad, rho + pad)
    }
}

fn ellipse_axis(m: f64, d: f64) -> (f64, f64) {
    (d / 2.0 - m / 2.0, d / 2.0 + m / 2.0)
}

#[inline]
fn distances(p: [f64; 3], d: f64) -> (f64, f64) {
    let r2 = p[1] * p[1] + p[2] * p[2];
    (
        (p[0] * p[0] + r2).sqrt(),
        ((p[0] - d) * (p[0] - d) + r2).sqrt(),
    )
}

#[inline]
fn quantum_la_lb(la: f64, lb: f64, s: &RegionSpec) -> bool {
    la <= s.r_a && lb <= s.r_b && la + lb <= s.m1 && la + lb <= s.m2
}

#[inline]
fn classical_la_lb(la: f64, lb: f64, s: &RegionSpec) -> bool {
    (la <= s.r_a && la + lb <= s.m2) || (lb <= s.r_b && la + lb <= s.m1)
}

pub fn point_in_quantum_region(p: [f64; 3], spec: &RegionSpec) -> bool {
    let (la, lb) = distances(p, spec.d);
    quantum_la_lb(la, lb, spec)
}

pub fn point_in_classical_region(p: [f64; 3], spec: &RegionSpec) -> bool {
    let (la, lb) = distances(p, spec.d);
    classical_la_lb(la, lb, spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub size: f64,
    /// One standard error.
    pub error: f64,
}

/// Monte Carlo size of a rotationally symmetric region: length along the
/// axis (1), area of a plane through the axis (2), or volume (3).
pub fn region_size<F>(
    pred: F,
    spec: &RegionSpec,
    dim: u8,
    samples: usize,
    seed: u64,
) -> Result<SizeEstimate>
where
    F: Fn([f64; 3]) -> bool,
{
    if !(1..=3).contains(&dim) {
        return Err(QpvError::Geometry(format!("dimension {dim} not in 1..=3")));
    }
    if samples == 0 {
        return Err(QpvError::Geometry("no samples".into()));
    }
    let (lo, hi, rho_max) = spec.bounding_box();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = lo + (hi - lo) * rng.random::<f64>();
        let (rho, weight) = match dim {
            1 => (0.0, 1.0),
            2 => (rho_max * rng.random::<f64>(), 2.0 * rho_max),
            _ => {
                let r = rho_max * rng.random::<f64>();
                (r, 2.0 * std::f64::consts::PI * r * rho_max)
            }
        };
        if pred([x, rho, 0.0]) {
            sum += weight;
            sum_sq += weight * weight;
        }
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let len = hi - lo;
    let error = len * (var / n).sqrt();
    Ok(SizeEstimate {
        size: len * mean,
        error: if mean == 0.0 {
            len * bounding_weight(dim, rho_max) / n
        } else {
            error
        },
    })
}

fn bounding_weight(dim: u8, rho_max: f64) -> f64 {
    match dim {
        1 => 1.0,
        2 => 2.0 * rho_max,
        _ => std::f64::consts::PI * rho_max * rho_max,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// Light-speed classical protocol: the segment between the verifiers.
    Ideal,
    /// Classical protocol with the same timings as the quantum one.
    Comparable,
}

/// Quantum and classical sizes in 1, 2 and 3 dimensions for one spec.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSizes {
    pub quantum: [f64; 3],
    pub classical: [f64; 3],
}

const R2_A1: f64 = 0.754_877_666_246_692_8;
const R2_A2: f64 = 0.569_840_290_998_053_3;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Region sizes by randomized quasi-Monte Carlo. `shift` randomizes the
/// low-discrepancy points; 2D and 3D share the same half-plane points.
pub fn region_sizes_qmc(spec: &RegionSpec, inner: usize, shift: [f64; 3]) -> RegionSizes {
    let (lo, hi, rho_max) = spec.bounding_box();
    let len = hi - lo;
    let mut q1 = 0usize;
    let mut c1 = 0usize;
    let mut u = shift[0];
    for _ in 0..inner {
        u += GOLDEN;
        if u >= 1.0 {
            u -= 1.0;
        }
        let x = lo + len * u;
        let (la, lb) = (x.abs(), (x - spec.d).abs());
        q1 += usize::from(quantum_la_lb(la, lb, spec));
        c1 += usize::from(classical_la_lb(la, lb, spec));
    }
    let (mut q2, mut c2, mut q3, mut c3) = (0usize, 0usize, 0.0, 0.0);
    let (mut u, mut v) = (shift[1], shift[2]);
    for _ in 0..inner {
        u += R2_A1;
        if u >= 1.0 {
            u -= 1.0;
        }
        v += R2_A2;
        if v >= 1.0 {
            v -= 1.0;
        }
        let x = lo + len * u;
        let rho = rho_max * v;
        let r2 = rho * rho;
        let la = (x * x + r2).sqrt();
        let lb = ((x - spec.d) * (x - spec.d) + r2).sqrt();
        if quantum_la_lb(la, lb, spec) {
            q2 += 1;
            q3 += v;
        }
        if classical_la_lb(la, lb, spec) {
            c2 += 1;
            c3 += v;
        }
    }
    let n = inner.max(1) as f64;
    let a2 = len * 2.0 * rho_max / n;
    // ∫∫ 2πρ dρ dx with ρ = ρ_max v
    let a3 = len * 2.0 * std::f64::consts::PI * rho_max * rho_max / n;
    RegionSizes {
        quantum: [len * q1 as f64 / n, a2 * q2 as f64, a3 * q3],
        classical: [len * c1 as f64 / n, a2 * c2 as f64, a3 * c3],
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdvantageResult {
    pub dim: u8,
    pub comparator: Comparator,
    pub mean: f64,
    pub std_dev: f64,
    pub empty_samples: usize,
    /// Per-outer-sample ratios (finite samples only).
    pub samples: Vec<f64>,
}

/// Advantage ratios for all dimensions and comparators from one outer run.
/// Order: (1, Ideal), (1, Comparable), (2, Comparable), (3, Comparable).
pub fn quantum_advantage_all(
    tg: &TimingGeometry,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<Vec<AdvantageResult>> {
    tg.validate()?;
    if outer == 0 || inner == 0 {
        return Err(QpvError::Geometry("sample counts must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let central = tg.central();
    let sig = tg.sigmas();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ratios: [Vec<f64>; 4] = Default::default();
    let mut empty = 0usize;
    for _ in 0..outer {
        let mut v = central;
        for k in 0..5 {
            v[k] += sig[k] * std.sample(&mut rng);
        }
        let spec = spec_from(v);
        let shift = [rng.random(), rng.random(), rng.random()];
        if !spec.quantum_nonempty() || spec.d <= 0.0 {
            empty += 1;
            continue;
        }
        let sizes = region_sizes_qmc(&spec, inner, shift);
        if sizes.quantum.iter().any(|q| *q <= 0.0) {
            empty += 1;
            continue;
        }
        ratios[0].push(spec.d / sizes.quantum[0]);
        for k in 0..3 {
            ratios[k + 1].push(sizes.classical[k] / sizes.quantum[k]);
        }
    }
    if empty as f64 > MAX_EMPTY_FRACTION * outer as f64 {
        return Err(QpvError::Geometry(format!(
            "{empty} of {outer} outer samples have an empty quantum region"
        )));
    }
    let labels = [
        (1, Comparator::Ideal),
        (1, Comparator::Comparable),
        (2, Comparator::Comparable),
        (3, Comparator::Comparable),
    ];
    Ok(labels
        .iter()
        .zip(ratios)
        .map(|(&(dim, comparator), samples)| {
            let (mean, std_dev) = mean_std(&samples);
            AdvantageResult {
                dim,
                comparator,
                mean,
                std_dev,
                empty_samples: empty,
                samples,
            }
        })
        .collect())
}

/// Advantage for one dimension and comparator. The ideal classical region
/// has no area or volume, so its 2D and 3D advantage is 0.
pub fn quantum_advantage(
    tg: &TimingGeometry,
    dim: u8,
    comparator: Comparator,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<AdvantageResult> {
    if !(1..=3).contains(&dim) {
        return Err(QpvError::Geometry(format!("dimension {dim} not in 1..=3")));
    }
    if comparator == Comparator::Ideal && dim > 1 {
        tg.validate()?;
        return Ok(AdvantageResult {
            dim,
            comparator,
            mean: 0.0,
            std_dev: 0.0,
            empty_samples: 0,
            samples: vec![0.0; outer],
        });
    }
    let all = quantum_advantage_all(tg, outer, inner, seed)?;
    let idx = match (dim, comparator) {
        (1, Comparator::Ideal) => 0,
        (d, _) => d as usize,
    };
    Ok(all.into_iter().nth(idx).expect("four results"))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
