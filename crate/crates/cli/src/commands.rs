use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use qpv_core::estimation::{
    self, CalibrationReport, ConditionalDistribution2, ResamplingDiagnostic,
};
use qpv_core::geometry::{self, Comparator};
use qpv_core::protocol::{self, AnalysisConfig, InstanceResult, Mode, ProtocolParams, TrialSource};
use qpv_core::reference;
use qpv_core::simulator;
use qpv_core::testfactor::{self, GainVariance, TestFactor};
use qpv_core::trialdata::{CountsTable, TrialFile, TrialFilePath, NOMINAL_FILE_SECONDS};
use serde::{Deserialize, Serialize};

use crate::config::{self, AnalysisFileConfig, SimulateConfig, Source};
use crate::{Common, Status};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const TRIAL_FILE_EXT: &str = "qpvt";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Report wrapper recording the tool version and the resolved inputs.
#[derive(Serialize, Deserialize)]
struct Report<C, B> {
    tool_version: String,
    config: C,
    #[serde(flatten)]
    body: B,
}

fn report<C, B>(config: C, body: B) -> Report<C, B> {
    Report {
        tool_version: TOOL_VERSION.to_string(),
        config,
        body,
    }
}

fn analysis_config(common: &Common) -> Result<AnalysisFileConfig> {
    match &common.config {
        Some(p) => config::load_json(p),
        None => Ok(AnalysisFileConfig::default()),
    }
}

fn delta(common: &Common) -> Result<f64> {
    if !(common.delta_log2 >= 0.0) {
        bail!("--delta-log2 must be >= 0");
    }
    Ok(2f64.powf(-common.delta_log2))
}

/// Trial files named on the command line, directories expanded and sorted.
fn trial_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == TRIAL_FILE_EXT))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no trial files found");
    }
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Number of one-minute files (default 12).
    #[arg(long)]
    pub minutes: Option<usize>,
    /// Trials per file (default 15e6, one minute at 250 kHz).
    #[arg(long)]
    pub trials_per_file: Option<usize>,
    /// Comma-separated indices of files flagged with a detector error.
    #[arg(long, value_delimiter = ',')]
    pub detector_error: Vec<usize>,
}

#[derive(Serialize)]
struct SimulateBody {
    files: Vec<String>,
    trials_per_file: usize,
}

pub fn simulate(common: &Common, args: &SimulateArgs) -> Result<Status> {
    let mut cfg: SimulateConfig = match &common.config {
        Some(p) => config::load_json(p)?,
        None => SimulateConfig::default(),
    };
    let minutes = args.minutes.or(cfg.minutes).unwrap_or(12);
    let per_file = args
        .trials_per_file
        .or(cfg.trials_per_file)
        .unwrap_or(NOMINAL_FILE_SECONDS as usize * protocol::DEFAULT_TRIAL_RATE as usize);
    cfg.detector_error_files.extend(&args.detector_error);
    cfg.minutes = Some(minutes);
    cfg.trials_per_file = Some(per_file);
    let nu = cfg
        .nu
        .unwrap_or_else(qpv_core::trialdata::JointSettingsDistribution::uniform);
    let dist = match cfg.source()? {
        Source::Honest(m) => simulator::honest_distribution(&m)?,
        Source::Adversary(a) => simulator::adversary_distribution(&a)?,
    };
    let mut files = Vec::with_capacity(minutes);
    for i in 0..minutes {
        let seed = common
            .seed
            .wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let records = simulator::sample_trials(&dist, &nu, per_file, seed);
        let name = format!("minute_{i:05}.{TRIAL_FILE_EXT}");
        TrialFile::new(records, cfg.detector_error_files.contains(&i))
            .save(common.out.join(&name))?;
        files.push(name);
    }
    write_json(
        &common.out.join("simulate_report.json"),
        &report(
            (common, &cfg),
            SimulateBody {
                files,
                trials_per_file: per_file,
            },
        ),
    )?;
    Ok(Status::Completed)
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// Calibration trial files or directories; flagged files are skipped.
    pub inputs: Vec<PathBuf>,
    /// Fit the published calibration counts instead of trial files.
    #[arg(long)]
    pub reference: bool,
    /// Multinomial resamples for the stability diagnostic.
    #[arg(long, default_value_t = 0)]
    pub resample: usize,
}

#[derive(Serialize, Deserialize)]
struct FitBody {
    calibration: CalibrationReport,
    #[serde(default)]
    resampling: Option<ResamplingDiagnostic>,
}

pub fn fit(common: &Common, args: &FitArgs) -> Result<Status> {
    let cfg = analysis_config(common)?;
    let (counts, window) = if args.reference {
        (
            reference::calibration_counts(),
            "published calibration".to_string(),
        )
    } else {
        let paths = trial_paths(&args.inputs)?;
        let mut counts = CountsTable::new();
        let mut used = Vec::new();
        for p in &paths {
            let f = TrialFilePath::open(p)?;
            if f.detector_error() {
                continue;
            }
            counts.merge(&f.counts_prefix(u64::MAX)?.0);
            used.push(p.display().to_string());
        }
        (counts, used.join(","))
    };
    let calibration = estimation::calibrate(&counts, cfg.mismatch_d, window)?;
    let resampling = if args.resample > 0 {
        Some(estimation::resampling_diagnostic(
            &counts,
            args.resample,
            common.seed,
        )?)
    } else {
        None
    };
    write_json(
        &common.out.join("fit.json"),
        &report(
            (common, args, &cfg),
            FitBody {
                calibration,
                resampling,
            },
        ),
    )?;
    Ok(Status::Completed)
}

fn load_fit(path: Option<&Path>) -> Result<ConditionalDistribution2> {
    match path {
        Some(p) => {
            let r: Report<serde_json::Value, FitBody> = config::load_json(p)?;
            Ok(r.body.calibration.fitted)
        }
        None => Ok(reference::fitted_sigma()),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BuildTfArgs {
    /// Output of `fit`; defaults to the published fitted distribution.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Serialize)]
struct BuildTfBody {
    factor: TestFactor,
    wlr_gain_nats: f64,
    mismatch_constant: f64,
    wbar_min: f64,
    gain: GainVariance,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixing_weight: Option<f64>,
}

pub fn build_tf(common: &Common, args: &BuildTfArgs) -> Result<Status> {
    let cfg = analysis_config(common)?;
    let sigma = load_fit(args.fit.as_deref())?;
    let sigma3 = estimation::regularize(&sigma, cfg.mismatch_d)?;
    let wlr = testfactor::build_wlr(&sigma, &cfg.nu)?;
    let lambda = testfactor::lambda_max(&wlr.factor, &cfg.nu)?;
    let base = testfactor::assemble_robust(&wlr.factor, lambda, &cfg.nu)?;
    let (factor, mixing_weight) = match Mode::from(common.mode) {
        Mode::Basic => (base, None),
        Mode::Entanglement => {
            let plan = protocol::plan_entanglement(
                &sigma3,
                &cfg.nu,
                &base,
                common.rth,
                delta(common)?,
                common.epsilon,
            )?;
            (plan.mixed, Some(plan.lambda))
        }
    };
    factor.certify()?;
    let body = BuildTfBody {
        gain: testfactor::gain_variance(&factor, &sigma3, &cfg.nu)?,
        wbar_min: testfactor::wbar_min(&factor, &cfg.nu),
        wlr_gain_nats: wlr.gain,
        mismatch_constant: lambda,
        mixing_weight,
        factor,
    };
    write_json(
        &common.out.join("test_factor.json"),
        &report((common, args, &cfg), body),
    )?;
    Ok(Status::Completed)
}

#[derive(Args, Debug, Serialize)]
pub struct PlanArgs {
    /// Output of `fit`; defaults to the published fitted distribution.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Longest runtime on the trade-off curves, in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub max_runtime_s: f64,
    #[arg(long, default_value_t = 5.0)]
    pub step_s: f64,
}

#[derive(Serialize)]
struct PlanBody {
    gain: GainVariance,
    n_trials: u64,
    runtime_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mixing_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wbar_min: Option<f64>,
    tradeoff_files: Vec<String>,
}

pub fn plan(common: &Common, args: &PlanArgs) -> Result<Status> {
    let cfg = analysis_config(common)?;
    if !(args.step_s > 0.0 && args.max_runtime_s >= 0.0) {
        bail!("runtime grid needs step_s > 0 and max_runtime_s >= 0");
    }
    let delta = delta(common)?;
    let sigma = load_fit(args.fit.as_deref())?;
    let sigma3 = estimation::regularize(&sigma, cfg.mismatch_d)?;
    let base = testfactor::build_robust(&sigma, &cfg.nu)?;
    let gain = testfactor::gain_variance(&base, &sigma3, &cfg.nu)?;
    let rate = cfg.trial_rate_hz;
    let runtimes: Vec<f64> = (1..)
        .map(|k| k as f64 * args.step_s)
        .take_while(|t| *t <= args.max_runtime_s + 1e-9)
        .collect();
    let epsilons = [
        protocol::EPSILON_1SIGMA,
        protocol::EPSILON_2SIGMA,
        protocol::EPSILON_3SIGMA,
    ];
    let mut tradeoff_files = vec!["tradeoff_basic.csv".to_string()];
    protocol::write_tradeoff_csv(
        &protocol::basic_tradeoff(gain.g, gain.v, rate, &epsilons, &runtimes),
        "log2_inv_delta",
        create(&common.out.join(&tradeoff_files[0]))?,
    )?;
    if let Ok(points) =
        protocol::entanglement_tradeoff(&sigma3, &cfg.nu, &base, delta, rate, &epsilons, &runtimes)
    {
        tradeoff_files.push("tradeoff_entanglement.csv".to_string());
        protocol::write_tradeoff_csv(
            &points,
            "r_th",
            create(&common.out.join(&tradeoff_files[1]))?,
        )?;
    }
    let body = match Mode::from(common.mode) {
        Mode::Basic => {
            let n = protocol::required_trials(gain.g, gain.v, delta, common.epsilon)?;
            PlanBody {
                gain,
                n_trials: n,
                runtime_s: n as f64 / rate,
                mixing_weight: None,
                wbar_min: None,
                tradeoff_files,
            }
        }
        Mode::Entanglement => {
            let p = protocol::plan_entanglement(
                &sigma3,
                &cfg.nu,
                &base,
                common.rth,
                delta,
                common.epsilon,
            )?;
            PlanBody {
                gain: p.stats,
                n_trials: p.n,
                runtime_s: p.n as f64 / rate,
                mixing_weight: Some(p.lambda),
                wbar_min: Some(p.wbar_min),
                tradeoff_files,
            }
        }
    };
    write_json(
        &common.out.join("plan.json"),
        &report((common, args, &cfg), body),
    )?;
    Ok(Status::Completed)
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    /// Trial files or directories, in recording order.
    pub inputs: Vec<PathBuf>,
    /// Trials per instance (default: nominal trials in the instance's files).
    #[arg(long)]
    pub n: Option<u64>,
    /// Histogram bins for log2 p and r_lb.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Serialize)]
struct AnalyzeBody {
    files: Vec<String>,
    n_trials: u64,
    passed: usize,
    failed: usize,
    instances: Vec<InstanceResult>,
}

pub fn analyze(common: &Common, args: &AnalyzeArgs) -> Result<Status> {
    let cfg = analysis_config(common)?;
    let mode = Mode::from(common.mode);
    let n = args.n.or(cfg.n_trials).unwrap_or_else(|| {
        (mode.files_per_instance() as f64 * f64::from(NOMINAL_FILE_SECONDS) * cfg.trial_rate_hz)
            as u64
    });
    let mut params = ProtocolParams::new(delta(common)?, common.epsilon, n, mode, common.rth)?;
    params.trial_rate = cfg.trial_rate_hz;
    let paths = trial_paths(&args.inputs)?;
    let files = paths
        .iter()
        .map(TrialFilePath::open)
        .collect::<qpv_core::Result<Vec<_>>>()?;
    let analysis = AnalysisConfig {
        nu: cfg.nu,
        d: cfg.mismatch_d,
    };
    let instances = protocol::segment_and_analyze(&files, &params, &analysis)?;

    protocol::write_instances_csv(&instances, create(&common.out.join("instances.csv"))?)?;
    let log2p: Vec<f64> = instances.iter().map(|r| r.log2_p).collect();
    let (edges, counts) = protocol::histogram(&log2p, args.bins);
    protocol::write_histogram_csv(
        &edges,
        &counts,
        create(&common.out.join("hist_log2_p.csv"))?,
    )?;
    if mode == Mode::Entanglement {
        let rlb: Vec<f64> = instances.iter().filter_map(|r| r.r_lb).collect();
        let (edges, counts) = protocol::histogram(&rlb, args.bins);
        protocol::write_histogram_csv(&edges, &counts, create(&common.out.join("hist_r_lb.csv"))?)?;
    }
    let passed = instances.iter().filter(|r| r.pass).count();
    let failed = instances.len() - passed;
    let body = AnalyzeBody {
        files: paths.iter().map(|p| p.display().to_string()).collect(),
        n_trials: n,
        passed,
        failed,
        instances,
    };
    write_json(
        &common.out.join("analysis.json"),
        &report((common, args, &cfg), body),
    )?;
    eprintln!("{passed} passed, {failed} failed");
    Ok(if failed > 0 {
        Status::ProtocolFail
    } else {
        Status::Completed
    })
}

#[derive(Args, Debug, Serialize)]
pub struct GeometryArgs {
    /// Outer Monte Carlo draws of the timing and distance measurements.
    #[arg(long, default_value_t = 100_000)]
    pub outer: usize,
    /// Inner quasi-Monte Carlo points per region size.
    #[arg(long, default_value_t = 1_000_000)]
    pub inner: usize,
    /// Report a single dimension (1, 2 or 3).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub dim: Option<u8>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Serialize)]
struct AdvantageSummary {
    dim: u8,
    comparator: Comparator,
    /// `None` when the quantum region is degenerate (infinite advantage).
    mean: Option<f64>,
    std_dev: Option<f64>,
    empty_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    histogram_file: Option<String>,
}

#[derive(Serialize)]
struct GeometryBody {
    region: geometry::RegionSpec,
    /// Sizes at the central values: index 0, 1, 2 = length, area, volume.
    quantum_size: [f64; 3],
    classical_comparable_size: [f64; 3],
    classical_ideal_size: [f64; 3],
    degenerate: bool,
    advantages: Vec<AdvantageSummary>,
}

pub fn geometry(common: &Common, args: &GeometryArgs) -> Result<Status> {
    let tg = config::timing_or_reference(common.config.as_deref())?;
    let spec = geometry::region_spec(&tg);
    let central = geometry::region_sizes_qmc(&spec, args.inner, [0.5, 0.5, 0.5]);
    let dims: Vec<u8> = match args.dim {
        Some(d) => vec![d],
        None => vec![1, 2, 3],
    };
    let degenerate = !spec.quantum_nonempty()
        || dims
            .iter()
            .any(|&d| central.quantum[usize::from(d) - 1] <= 0.0);
    let labels = [
        (1, Comparator::Ideal),
        (1, Comparator::Comparable),
        (2, Comparator::Comparable),
        (3, Comparator::Comparable),
    ];
    let mut advantages = Vec::new();
    if degenerate {
        for &(d, c) in labels.iter().filter(|(d, _)| dims.contains(d)) {
            advantages.push(AdvantageSummary {
                dim: d,
                comparator: c,
                mean: None,
                std_dev: None,
                empty_samples: 0,
                histogram_file: None,
            });
        }
    } else {
        let all = geometry::quantum_advantage_all(&tg, args.outer, args.inner, common.seed)?;
        for res in all.into_iter().filter(|r| dims.contains(&r.dim)) {
            let name = format!(
                "advantage_{}d_{}.csv",
                res.dim,
                comparator_name(res.comparator)
            );
            let (edges, counts) = protocol::histogram(&res.samples, args.bins);
            protocol::write_histogram_csv(&edges, &counts, create(&common.out.join(&name))?)?;
            advantages.push(AdvantageSummary {
                dim: res.dim,
                comparator: res.comparator,
                mean: Some(res.mean),
                std_dev: Some(res.std_dev),
                empty_samples: res.empty_samples,
                histogram_file: Some(name),
            });
        }
    }
    // the ideal classical region is a segment: no area, no volume
    for &d in dims.iter().filter(|&&d| d > 1) {
        advantages.push(AdvantageSummary {
            dim: d,
            comparator: Comparator::Ideal,
            mean: Some(0.0),
            std_dev: Some(0.0),
            empty_samples: 0,
            histogram_file: None,
        });
    }
    let body = GeometryBody {
        region: spec,
        quantum_size: central.quantum,
        classical_comparable_size: central.classical,
        classical_ideal_size: [spec.d, 0.0, 0.0],
        degenerate,
        advantages,
    };
    write_json(
        &common.out.join("geometry.json"),
        &report((common, args, &tg), body),
    )?;
    if degenerate {
        eprintln!("quantum target region is degenerate; advantage is unbounded");
    }
    Ok(Status::Completed)
}

fn comparator_name(c: Comparator) -> &'static str {
    match c {
        Comparator::Ideal => "ideal",
        Comparator::Comparable => "comparable",
    }
}
