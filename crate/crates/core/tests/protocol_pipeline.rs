use proptest::prelude::*;
use qpv_core::protocol::{
    self, AnalysisConfig, CountsSource, Mode, ProtocolParams, CALIBRATION_FILES,
};
use qpv_core::reference;
use qpv_core::simulator::{self, AdversaryModel, HonestProverModel};
use qpv_core::testfactor::{self, BellFactor, TestFactor};
use qpv_core::trialdata::{CountsTable, JointSettingsDistribution, TrialFile, TrialFilePath};
use qpv_core::QpvError;

fn nu() -> JointSettingsDistribution {
    JointSettingsDistribution::uniform()
}

fn chsh_model() -> HonestProverModel {
    let h = 0.5f64.sqrt();
    HonestProverModel {
        mismatch_prob: 1e-3,
        ..HonestProverModel::ideal(h, h, [0.0, 45.0], [22.5, -22.5])
    }
}

fn golden() -> TestFactor {
    testfactor::assemble_robust(
        &BellFactor {
            values: reference::FACTOR_MATCHED,
        },
        reference::FACTOR_MISMATCH,
        &nu(),
    )
    .unwrap()
}

fn files(model: &AdversaryOrHonest, count: usize, per_file: usize, seed: u64) -> Vec<TrialFile> {
    let sigma = match model {
        AdversaryOrHonest::Honest(m) => simulator::honest_distribution(m).unwrap(),
        AdversaryOrHonest::Adversary(a) => simulator::adversary_distribution(a).unwrap(),
    };
    (0..count)
        .map(|i| {
            TrialFile::new(
                simulator::sample_trials(&sigma, &nu(), per_file, seed + i as u64),
                false,
            )
        })
        .collect()
}

enum AdversaryOrHonest {
    Honest(HonestProverModel),
    Adversary(AdversaryModel),
}

#[test]
fn honest_strong_violation_passes_from_disk() {
    let mut fs = files(&AdversaryOrHonest::Honest(chsh_model()), 15, 4_000, 1);
    fs[3] = TrialFile::new(fs[3].records().to_vec(), true);
    let dir = tempfile::tempdir().unwrap();
    let on_disk: Vec<TrialFilePath> = fs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.path().join(format!("{i:03}.qpvt"));
            f.save(&p).unwrap();
            TrialFilePath::open(p).unwrap()
        })
        .collect();
    let params = ProtocolParams::new(2f64.powi(-20), 0.9, 8_000, Mode::Basic, 0.0).unwrap();
    let from_disk =
        protocol::segment_and_analyze(&on_disk, &params, &AnalysisConfig::default()).unwrap();
    let in_memory =
        protocol::segment_and_analyze(&fs, &params, &AnalysisConfig::default()).unwrap();
    assert_eq!(from_disk, in_memory);
    // ten good files are 0..=10 minus file 3, so analysis starts at 11
    assert_eq!(
        from_disk[0].calibration_files,
        vec![0, 1, 2, 4, 5, 6, 7, 8, 9, 10]
    );
    assert_eq!(from_disk[0].analysis_files, vec![11, 12]);
    assert_eq!(from_disk.len(), 2);
    assert!(
        from_disk.iter().all(|r| r.pass && r.trials_padded == 0),
        "{from_disk:?}"
    );
}

#[test]
fn local_adversary_never_passes() {
    let fs = files(
        &AdversaryOrHonest::Adversary(AdversaryModel::lr_vertex(5).unwrap()),
        14,
        4_000,
        9,
    );
    let params = ProtocolParams::new(2f64.powi(-20), 0.9, 8_000, Mode::Basic, 0.0).unwrap();
    // a local calibration yields the trivial factor, which cannot pass
    let res = protocol::segment_and_analyze(&fs, &params, &AnalysisConfig::default()).unwrap();
    assert!(res.iter().all(|r| !r.pass && r.sum_log_w == 0.0));
}

#[test]
fn entanglement_mode_reports_a_bound() {
    let fs = files(&AdversaryOrHonest::Honest(chsh_model()), 14, 4_000, 50);
    let params =
        ProtocolParams::new(2f64.powi(-20), 0.9, 16_000, Mode::Entanglement, 0.05).unwrap();
    let res = protocol::segment_and_analyze(&fs, &params, &AnalysisConfig::default()).unwrap();
    assert_eq!(res.len(), 1);
    let r = &res[0];
    assert_eq!(r.analysis_files, vec![10, 11, 12, 13]);
    let rlb = r.r_lb.unwrap();
    assert_eq!(r.pass, rlb >= 0.05, "{r:?}");
    assert!(r.pass);
}

#[test]
fn too_few_clean_files_is_an_error() {
    let fs: Vec<_> = (0..CALIBRATION_FILES)
        .map(|i| CountsSource {
            counts: CountsTable::new(),
            detector_error: i == 0,
        })
        .collect();
    let params = ProtocolParams::new(0.01, 0.9, 10, Mode::Basic, 0.0).unwrap();
    assert!(matches!(
        protocol::segment_and_analyze(&fs, &params, &AnalysisConfig::default()),
        Err(QpvError::InsufficientCalibration(_))
    ));
}

#[test]
fn unity_factor_cannot_pass() {
    let w = TestFactor::unity(&nu());
    let params = ProtocolParams::new(0.5, 0.9, 1_000, Mode::Basic, 0.0).unwrap();
    let c = simulator::sample_counts(
        &simulator::honest_distribution(&chsh_model()).unwrap(),
        &nu(),
        1_000,
        &mut <rand_chacha::ChaCha20Rng as rand::SeedableRng>::seed_from_u64(1),
    );
    let r = protocol::run_counts(&c, &w, &params).unwrap();
    assert!(!r.pass);
    assert_eq!(r.log2_p, 0.0);
}

#[test]
fn overfull_instances_are_rejected() {
    let mut c = CountsTable::new();
    c.add_code(0, 11);
    let params = ProtocolParams::new(0.01, 0.9, 10, Mode::Basic, 0.0).unwrap();
    assert!(protocol::run_counts(&c, &golden(), &params).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn padding_is_neutral(len in 0usize..5_000, extra in 0u64..10_000, seed: u64) {
        let sigma = simulator::honest_distribution(&chsh_model()).unwrap();
        let recs = simulator::sample_trials(&sigma, &nu(), len, seed);
        let w = golden();
        let exact = ProtocolParams::new(0.01, 0.9, (len as u64).max(1), Mode::Basic, 0.0).unwrap();
        let padded = ProtocolParams { n: len as u64 + extra + 1, ..exact.clone() };
        let a = protocol::run_instance(recs.iter().copied(), &w, &exact).unwrap();
        let b = protocol::run_instance(recs.iter().copied(), &w, &padded).unwrap();
        prop_assert_eq!(a.sum_log_w, b.sum_log_w);
        prop_assert_eq!(b.trials_padded, extra + 1);
    }

    #[test]
    fn truncation_keeps_the_prefix(len in 1usize..4_000, cut in 1u64..4_000, seed: u64) {
        let sigma = simulator::honest_distribution(&chsh_model()).unwrap();
        let recs = simulator::sample_trials(&sigma, &nu(), len, seed);
        let w = golden();
        let params = ProtocolParams::new(0.01, 0.9, cut, Mode::Basic, 0.0).unwrap();
        let r = protocol::run_instance(recs.iter().copied(), &w, &params).unwrap();
        let take = (cut as usize).min(len);
        let direct: f64 = recs[..take].iter().map(|x| w.value_of(*x).ln()).sum();
        prop_assert!((r.sum_log_w - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        prop_assert_eq!(r.trials_real, take as u64);
    }

    #[test]
    fn r_lower_bound_inverts_threshold(sum in 0.0f64..1e3, n in 1u64..1_000_000_000, k in 1i32..100, lam in 0.05f64..1.0) {
        let w = testfactor::mix_with_unity(&golden(), lam).unwrap();
        let delta = 2f64.powi(-k);
        let wbar = testfactor::wbar_min(&w, &nu());
        let total = sum - delta.ln();
        let r = protocol::r_lower_bound(total, n, wbar, delta).unwrap();
        let params = ProtocolParams::new(delta, 0.999, n, Mode::Entanglement, r).unwrap();
        let th = protocol::threshold(&w, &params);
        prop_assert!((th - total).abs() <= 1e-12 * total.abs().max(1.0));
    }
}
