//! Protocol execution: per-instance accumulation of log test factors, the
//! pass rule, central-limit planning, and segmentation of a file sequence
//! into calibration windows and analysis instances.

use std::f64::consts::LN_2;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{QpvError, Result};
use crate::estimation::{self, ConditionalDistribution3};
use crate::testfactor::{self, GainVariance, TestFactor};
use crate::trialdata::{
    CountsTable, JointSettingsDistribution, TrialFile, TrialFilePath, TrialRecord, CELLS,
};

/// Error-free files in each calibration window.
pub const CALIBRATION_FILES: usize = 10;
/// Nominal trial rate of the source, trials per second.
pub const DEFAULT_TRIAL_RATE: f64 = 250_000.0;
/// Confidence levels with conventional one/two/three-sigma quantiles.
pub const EPSILON_1SIGMA: f64 = 0.84134;
pub const EPSILON_2SIGMA: f64 = 0.97725;
pub const EPSILON_3SIGMA: f64 = 0.99865;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Basic,
    Entanglement,
}

impl Mode {
    /// One-minute files consumed by each analysis instance.
    pub fn files_per_instance(self) -> usize {
        match self {
            Mode::Basic => 2,
            Mode::Entanglement => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub delta: f64,
    pub epsilon: f64,
    pub n: u64,
    pub mode: Mode,
    pub r_th: f64,
    pub trial_rate: f64,
}

impl ProtocolParams {
    pub fn new(delta: f64, epsilon: f64, n: u64, mode: Mode, r_th: f64) -> Result<Self> {
        let p = Self {
            delta,
            epsilon,
            n,
            mode,
            r_th,
            trial_rate: DEFAULT_TRIAL_RATE,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < self.epsilon && self.epsilon <= 1.0) {
            return Err(QpvError::OutOfRange {
                name: "delta/epsilon",
                value: self.delta,
                expected: "0 < delta < epsilon <= 1",
            });
        }
        if self.n == 0 {
            return Err(QpvError::OutOfRange {
                name: "n",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if !(self.r_th >= 0.0) {
            return Err(QpvError::OutOfRange {
                name: "r_th",
                value: self.r_th,
                expected: ">= 0",
            });
        }
        if !(self.trial_rate > 0.0) {
            return Err(QpvError::OutOfRange {
                name: "trial_rate",
                value: self.trial_rate,
                expected: "> 0",
            });
        }
        Ok(())
    }

    pub fn ln_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    /// Σ ln w over the analyzed trials (padding contributes 0).
    pub sum_log_w: f64,
    /// -log2 of the p-value.
    pub log2_p: f64,
    pub pass: bool,
    pub threshold: f64,
    /// Certified average-robustness lower bound (entanglement mode only).
    pub r_lb: Option<f64>,
    pub trials_real: u64,
    pub trials_padded: u64,
    #[serde(default)]
    pub calibration_files: Vec<usize>,
    #[serde(default)]
    pub analysis_files: Vec<usize>,
}

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Pass threshold on Σ ln w for the mode.
pub fn threshold(w: &TestFactor, params: &ProtocolParams) -> f64 {
    match params.mode {
        Mode::Basic => params.ln_inv_delta(),
        Mode::Entanglement => {
            let wbar = testfactor::wbar_min(w, w.nu());
            params.ln_inv_delta() + params.n as f64 * params.r_th * (1.0 - wbar)
        }
    }
}

/// Evaluates an instance from its counts. `counts` must hold at most `n` trials.
pub fn run_counts(
    counts: &CountsTable,
    w: &TestFactor,
    params: &ProtocolParams,
) -> Result<InstanceResult> {
    params.validate()?;
    let real = counts.total();
    if real > params.n {
        return Err(QpvError::Format(format!(
            "instance holds {real} trials, more than n = {}",
            params.n
        )));
    }
    let mut acc = NeumaierSum::default();
    for code in 0..CELLS as u8 {
        let k = counts.get(code);
        if k == 0 {
            continue;
        }
        let v = w.value(code);
        if v <= 0.0 {
            return Err(QpvError::ZeroFactor { cell: code });
        }
        acc.add(k as f64 * v.ln());
    }
    let sum = acc.value();
    let th = threshold(w, params);
    let r_lb = match params.mode {
        Mode::Basic => None,
        Mode::Entanglement => Some(r_lower_bound(
            sum,
            params.n,
            testfactor::wbar_min(w, w.nu()),
            params.delta,
        )?),
    };
    Ok(InstanceResult {
        sum_log_w: sum,
        log2_p: sum / LN_2,
        pass: sum >= th,
        threshold: th,
        r_lb,
        trials_real: real,
        trials_padded: params.n - real,
        calibration_files: Vec::new(),
        analysis_files: Vec::new(),
    })
}

/// Evaluates an instance from a trial stream, discarding trials beyond `n`
/// and padding short streams with neutral trials.
pub fn run_instance<I>(trials: I, w: &TestFactor, params: &ProtocolParams) -> Result<InstanceResult>
where
    I: IntoIterator<Item = TrialRecord>,
{
    let counts = crate::trialdata::aggregate_counts(trials.into_iter().take(params.n as usize));
    run_counts(&counts, w, params)
}

/// `(Σ ln W' - ln(1/δ)) / (n (1 - w̄'_min))`.
pub fn r_lower_bound(sum_log_w: f64, n: u64, wbar_min: f64, delta: f64) -> Result<f64> {
    if wbar_min >= 1.0 {
        return Err(QpvError::UselessFactor { wbar_min });
    }
    Ok((sum_log_w + delta.ln()) / (n as f64 * (1.0 - wbar_min)))
}

/// Standard-normal quantile, exact at the conventional sigma levels.
pub fn z_for(epsilon: f64) -> f64 {
    for (e, z) in [
        (0.5, 0.0),
        (EPSILON_1SIGMA, 1.0),
        (EPSILON_2SIGMA, 2.0),
        (EPSILON_3SIGMA, 3.0),
    ] {
        if (epsilon - e).abs() < 1e-12 {
            return z;
        }
    }
    Normal::standard().inverse_cdf(epsilon)
}

/// Central-limit success probability with gain and variance in base 2.
pub fn p_succ(n: u64, g: f64, v: f64, delta: f64) -> f64 {
    let n = n as f64;
    let margin = n * g + delta.log2();
    if v <= 0.0 {
        return if margin >= 0.0 { 1.0 } else { 0.0 };
    }
    Normal::standard().cdf(margin / (n * v).sqrt())
}

/// Smallest `n` with `n g - z sqrt(n v) >= target`, for `g > 0`.
fn smallest_n(g: f64, v: f64, z: f64, target: f64) -> Result<u64> {
    if target <= 0.0 && z <= 0.0 {
        return Ok(0);
    }
    let ok = |n: u64| {
        let n = n as f64;
        n * g - z * (n * v).sqrt() >= target
    };
    let sv = v.max(0.0).sqrt();
    let s = (z * sv + (z * z * v.max(0.0) + 4.0 * g * target.max(0.0)).sqrt()) / (2.0 * g);
    let est = (s * s).ceil().max(0.0);
    // keep well inside u64 so the search below cannot overflow
    if !(est < 1e18) {
        return Err(QpvError::Infeasible(format!(
            "trial requirement is unbounded (estimate {est:e})"
        )));
    }
    let mut n = est as u64;
    while n > 0 && ok(n - 1) {
        n -= 1;
    }
    while !ok(n) {
        n += 1;
    }
    Ok(n)
}

/// Trials needed so that the central-limit estimate of the pass
/// probability reaches `epsilon` (`g`, `v` in base 2).
pub fn required_trials(g: f64, v: f64, delta: f64, epsilon: f64) -> Result<u64> {
    if delta >= 1.0 {
        return Ok(0);
    }
    if !(g > 0.0) {
        return Err(QpvError::Infeasible(format!("gain {g} is not positive")));
    }
    smallest_n(g, v, z_for(epsilon), -delta.log2())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntanglementPlan {
    pub lambda: f64,
    /// The mixed factor W' used for accumulation.
    pub mixed: TestFactor,
    /// W' with the threshold discount folded in.
    pub discounted: TestFactor,
    pub wbar_min: f64,
    pub n: u64,
    /// Gain statistics of W' in base 2.
    pub stats: GainVariance,
}

/// Continuous trial requirement for mixing weight `lambda`, or `None` when
/// the threshold cannot be reached.
fn trials_for_mix(
    w: &TestFactor,
    sigma: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
    lambda: f64,
    r_th: f64,
    ln_inv_delta: f64,
    z: f64,
) -> Option<(f64, TestFactor, GainVariance, f64)> {
    let mixed = testfactor::mix_with_unity(w, lambda).ok()?;
    let gv = testfactor::gain_variance(&mixed, sigma, nu).ok()?;
    let wbar = testfactor::wbar_min(&mixed, nu);
    let a = gv.g_nats() - r_th * (1.0 - wbar);
    if !(a > 0.0) {
        return None;
    }
    let v = gv.v_nats();
    let s = (z * v.sqrt() + (z * z * v + 4.0 * a * ln_inv_delta).sqrt()) / (2.0 * a);
    Some((s * s, mixed, gv, wbar))
}

/// Chooses the mixing weight of `W' = λW + 1 - λ` that minimizes the trials
/// needed to clear the entanglement threshold with probability `epsilon`.
pub fn plan_entanglement(
    sigma: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
    w_base: &TestFactor,
    r_th: f64,
    delta: f64,
    epsilon: f64,
) -> Result<EntanglementPlan> {
    let upper = testfactor::mix_upper_bound(w_base);
    if !upper.is_finite() {
        return Err(QpvError::UselessFactor {
            wbar_min: testfactor::wbar_min(w_base, nu),
        });
    }
    let hi = upper * (1.0 - 1e-9);
    let z = z_for(epsilon);
    let l = -delta.ln();
    let eval = |lam: f64| trials_for_mix(w_base, sigma, nu, lam, r_th, l, z).map(|t| t.0);
    const GRID: usize = 400;
    let mut best: Option<(f64, f64)> = None;
    for i in 1..=GRID {
        let lam = hi * i as f64 / GRID as f64;
        if let Some(n) = eval(lam) {
            if best.is_none_or(|(bn, _)| n < bn) {
                best = Some((n, lam));
            }
        }
    }
    let Some((_, lam0)) = best else {
        return Err(QpvError::Infeasible(format!(
            "threshold r_th = {r_th} is not reachable for any mixing weight"
        )));
    };
    // golden-section refinement on the bracketing grid cells
    let step = hi / GRID as f64;
    let (mut a, mut b) = ((lam0 - step).max(step * 1e-6), (lam0 + step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| eval(x).unwrap_or(f64::INFINITY);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let lam = if f(0.5 * (a + b)) <= f(lam0) {
        0.5 * (a + b)
    } else {
        lam0
    };
    let (_, mixed, stats, wbar) =
        trials_for_mix(w_base, sigma, nu, lam, r_th, l, z).expect("evaluated above");
    let a_nats = stats.g_nats() - r_th * (1.0 - wbar);
    let n = smallest_n(a_nats, stats.v_nats(), z, l)?;
    let discounted = testfactor::entanglement_discounted(&mixed, r_th)?;
    Ok(EntanglementPlan {
        lambda: lam,
        mixed,
        discounted,
        wbar_min: wbar,
        n,
        stats,
    })
}

/// One row of a trade-off curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub runtime_seconds: f64,
    pub epsilon: f64,
    /// log2(1/δ) for the basic curve, r_th for the entanglement curve.
    pub value: f64,
}

/// Achievable log2(1/δ) after each runtime.
pub fn basic_tradeoff(
    g: f64,
    v: f64,
    trial_rate: f64,
    epsilons: &[f64],
    runtimes: &[f64],
) -> Vec<TradeoffPoint> {
    let mut out = Vec::new();
    for &eps in epsilons {
        let z = z_for(eps);
        for &t in runtimes {
            let n = (t * trial_rate).floor();
            let value = (n * g - z * (n * v).sqrt()).max(0.0);
            out.push(TradeoffPoint {
                runtime_seconds: t,
                epsilon: eps,
                value,
            });
        }
    }
    out
}

/// Largest threshold r_th certifiable after each runtime, optimizing the mixing weight.
pub fn entanglement_tradeoff(
    sigma: &ConditionalDistribution3,
    nu: &JointSettingsDistribution,
    w_base: &TestFactor,
    delta: f64,
    trial_rate: f64,
    epsilons: &[f64],
    runtimes: &[f64],
) -> Result<Vec<TradeoffPoint>> {
    let upper = testfactor::mix_upper_bound(w_base);
    if !upper.is_finite() {
        return Err(QpvError::UselessFactor {
            wbar_min: testfactor::wbar_min(w_base, nu),
        });
    }
    let l = -delta.ln();
    let grid: Vec<(GainVariance, f64)> = (1..=200)
        .filter_map(|i| {
            let lam = upper * (1.0 - 1e-9) * i as f64 / 200.0;
            let m = testfactor::mix_with_unity(w_base, lam).ok()?;
            let gv = testfactor::gain_variance(&m, sigma, nu).ok()?;
            Some((gv, testfactor::wbar_min(&m, nu)))
        })
        .collect();
    let mut out = Vec::new();
    for &eps in epsilons {
        let z = z_for(eps);
        for &t in runtimes {
            let n = (t * trial_rate).floor();
            let value = grid
                .iter()
                .map(|(gv, wbar)| {
                    (n * gv.g_nats() - z * (n * gv.v_nats()).sqrt() - l) / (n * (1.0 - wbar))
                })
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0);
            out.push(TradeoffPoint {
                runtime_seconds: t,
                epsilon: eps,
                value: if n > 0.0 { value } else { 0.0 },
            });
        }
    }
    Ok(out)
}

pub fn write_tradeoff_csv<W: Write>(
    points: &[TradeoffPoint],
    value_name: &str,
    mut sink: W,
) -> Result<()> {
    writeln!(sink, "runtime_seconds,epsilon,{value_name}")?;
    for p in points {
        writeln!(sink, "{},{},{:e}", p.runtime_seconds, p.epsilon, p.value)?;
    }
    Ok(())
}

/// A one-minute file as seen by the analysis.
pub trait TrialSource {
    fn detector_error(&self) -> bool;
    fn len(&self) -> u64;
    /// Counts of the first `limit` trials and how many were taken.
    fn counts_prefix(&self, limit: u64) -> Result<(CountsTable, u64)>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TrialSource for TrialFile {
    fn detector_error(&self) -> bool {
        TrialFile::detector_error(self)
    }

    fn len(&self) -> u64 {
        TrialFile::len(self) as u64
    }

    fn counts_prefix(&self, limit: u64) -> Result<(CountsTable, u64)> {
        let take = (limit as usize).min(self.records().len());
        let counts = crate::trialdata::aggregate_counts(self.records()[..take].iter().copied());
        Ok((counts, take as u64))
    }
}

impl TrialSource for TrialFilePath {
    fn detector_error(&self) -> bool {
        self.header().detector_error
    }

    fn len(&self) -> u64 {
        self.header().count
    }

    fn counts_prefix(&self, limit: u64) -> Result<(CountsTable, u64)> {
        TrialFilePath::count_prefix(self, limit)
    }
}

/// Pre-aggregated file contents, for large simulations where record order
/// inside a file is irrelevant except for truncation.
#[derive(Clone, Debug)]
pub struct CountsSource {
    pub counts: CountsTable,
    pub detector_error: bool,
}

impl TrialSource for CountsSource {
    fn detector_error(&self) -> bool {
        self.detector_error
    }

    fn len(&self) -> u64 {
        self.counts.total()
    }

    fn counts_prefix(&self, limit: u64) -> Result<(CountsTable, u64)> {
        if limit >= self.counts.total() {
            return Ok((self.counts, self.counts.total()));
        }
        Err(QpvError::Format(
            "aggregated source cannot be truncated inside the file".into(),
        ))
    }
}

/// File indices used by one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePlan {
    pub calibration: Vec<usize>,
    pub analysis: Vec<usize>,
}

/// Splits a file sequence (given by detector-error flags) into instances.
pub fn plan_segments(detector_error: &[bool], mode: Mode) -> Result<Vec<InstancePlan>> {
    let good: Vec<usize> = (0..detector_error.len())
        .filter(|&i| !detector_error[i])
        .collect();
    if good.len() < CALIBRATION_FILES {
        return Err(QpvError::InsufficientCalibration(format!(
            "{} error-free files, need {CALIBRATION_FILES}",
            good.len()
        )));
    }
    let k = mode.files_per_instance();
    let mut plans = Vec::new();
    let mut current = good[CALIBRATION_FILES - 1] + 1;
    while current < detector_error.len() {
        let mut calibration: Vec<usize> = (0..current)
            .rev()
            .filter(|&i| !detector_error[i])
            .take(CALIBRATION_FILES)
            .collect();
        calibration.reverse();
        let end = (current + k).min(detector_error.len());
        plans.push(InstancePlan {
            calibration,
            analysis: (current..end).collect(),
        });
        current = end;
    }
    Ok(plans)
}

/// Settings for the per-instance calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub nu: JointSettingsDistribution,
    pub d: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            nu: JointSettingsDistribution::uniform(),
            d: estimation::DEFAULT_MISMATCH,
        }
    }
}

/// Builds the factor an instance uses from its calibration counts.
pub fn factor_from_calibration(
    counts: &CountsTable,
    params: &ProtocolParams,
    config: &AnalysisConfig,
    window_id: &str,
) -> Result<TestFactor> {
    let sigma_match = estimation::ml_fit_quantum(counts)?;
    let base = testfactor::build_robust(&sigma_match, &config.nu)?.with_window_id(window_id);
    match params.mode {
        Mode::Basic => Ok(base),
        Mode::Entanglement => {
            let sigma = estimation::regularize(&sigma_match, config.d)?;
            let plan = plan_entanglement(
                &sigma,
                &config.nu,
                &base,
                params.r_th,
                params.delta,
                params.epsilon,
            )?;
            Ok(plan.mixed.with_window_id(window_id))
        }
    }
}

/// Runs every instance of a file sequence: fresh calibration from the ten
/// most recent error-free files, then the next 2 or 4 files truncated or
/// padded to exactly `n` trials.
pub fn segment_and_analyze<S: TrialSource>(
    files: &[S],
    params: &ProtocolParams,
    config: &AnalysisConfig,
) -> Result<Vec<InstanceResult>> {
    params.validate()?;
    let flags: Vec<bool> = files.iter().map(|f| f.detector_error()).collect();
    let plans = plan_segments(&flags, params.mode)?;
    let mut results = Vec::with_capacity(plans.len());
    for plan in plans {
        let mut cal = CountsTable::new();
        for &i in &plan.calibration {
            let (c, _) = files[i].counts_prefix(u64::MAX)?;
            cal.merge(&c);
        }
        let window_id = format!(
            "files {}-{}",
            plan.calibration.first().copied().unwrap_or(0),
            plan.calibration.last().copied().unwrap_or(0)
        );
        let w = factor_from_calibration(&cal, params, config, &window_id)?;
        let mut counts = CountsTable::new();
        let mut remaining = params.n;
        for &i in &plan.analysis {
            if remaining == 0 {
                break;
            }
            let (c, used) = files[i].counts_prefix(remaining)?;
            counts.merge(&c);
            remaining -= used;
        }
        let mut r = run_counts(&counts, &w, params)?;
        r.calibration_files = plan.calibration;
        r.analysis_files = plan.analysis;
        results.push(r);
    }
    Ok(results)
}

pub fn write_instances_csv<W: Write>(results: &[InstanceResult], mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "instance,log2_p,pass,r_lb,trials_real,trials_padded,calibration_first,calibration_last"
    )?;
    for (i, r) in results.iter().enumerate() {
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{}",
            i,
            r.log2_p,
            r.pass,
            r.r_lb.map(|v| format!("{v:e}")).unwrap_or_default(),
            r.trials_real,
            r.trials_padded,
            r.calibration_files
                .first()
                .map(|v| v.to_string())
                .unwrap_or_default(),
            r.calibration_files
                .last()
                .map(|v| v.to_string())
                .unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Equal-width histogram: `(bin edges, counts)`.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<u64>) {
    let bins = bins.max(1);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (vec![0.0, 1.0], vec![0]);
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for v in finite {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    (edges, counts)
}

pub fn write_histogram_csv<W: Write>(edges: &[f64], counts: &[u64], mut sink: W) -> Result<()> {
    writeln!(sink, "bin_low,bin_high,count")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(sink, "{},{},{}", edges[i], edges[i + 1], c)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u64) -> ProtocolParams {
        ProtocolParams::new(2f64.powi(-10), EPSILON_2SIGMA, n, Mode::Basic, 0.0).unwrap()
    }

    #[test]
    fn unity_factor_never_passes() {
        let w = TestFactor::unity(&JointSettingsDistribution::uniform());
        let recs = vec![TrialRecord::from_code(3).unwrap(); 50];
        let r = run_instance(recs, &w, &params(10)).unwrap();
        assert_eq!(r.sum_log_w, 0.0);
        assert!(!r.pass);
        assert_eq!(r.trials_real, 10);
        let empty = run_instance(Vec::new(), &w, &params(10)).unwrap();
        assert_eq!((empty.trials_real, empty.trials_padded), (0, 10));
        assert!(!empty.pass);
    }

    #[test]
    fn r_lb_cases() {
        let delta = 2f64.powi(-64);
        let l = -delta.ln();
        assert_eq!(r_lower_bound(l, 100, 0.9, delta).unwrap(), 0.0);
        let n = 60_000_000;
        let r = r_lower_bound(50.0, n, 0.9, delta).unwrap();
        assert!((r - (50.0 - 64.0 * LN_2) / 6e6).abs() < 1e-18);
        assert!(r_lower_bound(1.0, 1, 1.0, delta).is_err());
    }

    #[test]
    fn planning_edges() {
        let g = 3.79135e-6;
        assert!((p_succ((64.0 / g) as u64, g, 1e-5, 2f64.powi(-64)) - 0.5).abs() < 1e-3);
        assert_eq!(required_trials(g, 1e-5, 1.0, 0.9).unwrap(), 0);
        assert_eq!(
            required_trials(g, 1e-5, 2f64.powi(-64), 0.5).unwrap(),
            (64.0 / g).ceil() as u64
        );
        assert_eq!(
            required_trials(g, 1e-300, 2f64.powi(-64), 0.97725).unwrap(),
            (64.0 / g).ceil() as u64
        );
        assert!(required_trials(0.0, 1.0, 0.5, 0.9).is_err());
        assert_eq!(z_for(EPSILON_2SIGMA), 2.0);
        assert!((z_for(0.975) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn segmentation_counts() {
        let plans = plan_segments(&[false; 12], Mode::Basic).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].analysis, vec![10, 11]);
        assert_eq!(plans[0].calibration, (0..10).collect::<Vec<_>>());
        assert_eq!(
            plan_segments(&[false; 474], Mode::Basic).unwrap().len(),
            232
        );
        assert!(plan_segments(&[false; 9], Mode::Basic).is_err());

        let mut flags = vec![false; 16];
        flags[11] = true;
        let plans = plan_segments(&flags, Mode::Basic).unwrap();
        assert_eq!(plans[0].analysis, vec![10, 11]);
        assert_eq!(plans[1].calibration, (1..=10).collect::<Vec<_>>());
        assert_eq!(plans[1].analysis, vec![12, 13]);
        assert!(plans.iter().all(|p| !p.calibration.contains(&11)));
    }

    #[test]
    fn neumaier_beats_naive() {
        let mut s = NeumaierSum::default();
        s.add(1e16);
        s.add(1.0);
        s.add(-1e16);
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn histogram_counts_everything() {
        let (edges, counts) = histogram(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(edges.len(), 3);
        assert_eq!(counts.iter().sum::<u64>(), 4);
    }
}
