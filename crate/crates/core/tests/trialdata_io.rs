use std::io::Cursor;

use proptest::prelude::*;
use qpv_core::estimation::ConditionalDistribution2;
use qpv_core::simulator;
use qpv_core::trialdata::{
    aggregate_counts, count_prefix, match_frequencies, read_trials, write_csv, write_trials,
    CountsTable, JointSettingsDistribution, TrialFile, TrialFilePath, TrialRecord, CELLS,
    HEADER_LEN,
};

#[test]
fn million_record_round_trip() {
    let sigma = qpv_core::estimation::regularize(
        &ConditionalDistribution2::new([[0.25; 4]; 4]).unwrap(),
        0.1,
    )
    .unwrap();
    let records =
        simulator::sample_trials(&sigma, &JointSettingsDistribution::uniform(), 1_000_000, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("minute.qpvt");
    let file = TrialFile::new(records.clone(), false);
    let header = file.save(&path).unwrap();
    assert_eq!(header.count, 1_000_000);
    assert_eq!(
        std::fs::metadata(&path).unwrap().len(),
        HEADER_LEN as u64 + 1_000_000
    );

    let back = TrialFile::load(&path).unwrap();
    assert_eq!(back.records(), &records[..]);

    let lazy = TrialFilePath::open(&path).unwrap();
    assert_eq!(lazy.header().count, 1_000_000);
    let (all, used) = lazy.count_prefix(u64::MAX).unwrap();
    assert_eq!(used, 1_000_000);
    assert_eq!(all, aggregate_counts(records.iter().copied()));
    let (part, used) = lazy.count_prefix(1234).unwrap();
    assert_eq!(used, 1234);
    assert_eq!(part, aggregate_counts(records[..1234].iter().copied()));
}

#[test]
fn detector_error_flag_survives() {
    let mut buf = Vec::new();
    let r = TrialRecord::new(2, 2, 1, 2, 2).unwrap();
    write_trials(&[r, r], true, &mut buf).unwrap();
    let (h, counts, used) = count_prefix(Cursor::new(&buf), 10).unwrap();
    assert!(h.detector_error);
    assert_eq!(used, 2);
    assert_eq!(counts.get(r.code()), 2);
}

#[test]
fn unknown_flags_and_versions_are_rejected() {
    let mut buf = Vec::new();
    write_trials(&[], false, &mut buf).unwrap();
    let mut v = buf.clone();
    v[4] = 2;
    assert!(read_trials(&v[..]).is_err());
    let mut f = buf.clone();
    f[5] = 0x80;
    assert!(read_trials(&f[..]).is_err());
    assert!(read_trials(&buf[..5]).is_err());
}

#[test]
fn csv_has_one_row_per_trial() {
    let recs: Vec<_> = (0..CELLS as u8)
        .map(|c| TrialRecord::from_code(c).unwrap())
        .collect();
    let mut out = Vec::new();
    write_csv(&recs, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "mqa,oqa,mqp,zqa,zqb");
    assert_eq!(lines.len(), 33);
    assert_eq!(lines[1], "1,1,1,1,1");
    assert_eq!(lines[32], "2,2,2,2,2");
}

#[test]
fn frequencies_use_matched_trials_only() {
    let mut c = CountsTable::new();
    c.add(TrialRecord::new(1, 1, 1, 1, 1).unwrap());
    c.add(TrialRecord::new(1, 2, 1, 2, 2).unwrap());
    c.add(TrialRecord::new(1, 2, 1, 1, 2).unwrap());
    for (a, p) in [(2, 1), (1, 2), (2, 2)] {
        c.add(TrialRecord::new(a, 1, p, 1, 1).unwrap());
    }
    let f = match_frequencies(&c).unwrap();
    assert_eq!(f.prob(0, 0), 0.5);
    assert_eq!(f.prob(0, 3), 0.5);
    assert_eq!(f.prob(3, 0), 1.0);
}

proptest! {
    #[test]
    fn arbitrary_streams_round_trip(codes in prop::collection::vec(0u8..32, 0..2000), flag: bool) {
        let recs: Vec<_> = codes.iter().map(|c| TrialRecord::from_code(*c).unwrap()).collect();
        let mut buf = Vec::new();
        write_trials(&recs, flag, &mut buf).unwrap();
        let back = read_trials(&buf[..]).unwrap();
        prop_assert_eq!(back.records(), &recs[..]);
        prop_assert_eq!(back.detector_error(), flag);
        let (_, counts, used) = count_prefix(&buf[..], u64::MAX).unwrap();
        prop_assert_eq!(used as usize, recs.len());
        prop_assert_eq!(counts, aggregate_counts(recs));
    }

    #[test]
    fn counts_merge_is_additive(a in prop::collection::vec(0u8..32, 0..500), b in prop::collection::vec(0u8..32, 0..500)) {
        let ra: Vec<_> = a.iter().map(|c| TrialRecord::from_code(*c).unwrap()).collect();
        let rb: Vec<_> = b.iter().map(|c| TrialRecord::from_code(*c).unwrap()).collect();
        let mut m = aggregate_counts(ra.clone());
        m.merge(&aggregate_counts(rb.clone()));
        prop_assert_eq!(m, aggregate_counts(ra.into_iter().chain(rb)));
    }
}
