//! Trial records, counts tables, settings distributions and the binary trial
//! file format.
//!
//! Every quantity in a reduced trial record is binary and labelled 1 or 2.
//! A record packs into the low five bits of a byte:
//!
//! ```text
//! bit 0: mqa - 1   bit 1: oqa - 1   bit 2: mqp - 1   bit 3: zqa - 1   bit 4: zqb - 1
//! ```
//!
//! The same 5-bit code doubles as the cell index of [`CountsTable`] and of
//! test-factor value tables, so a record maps to its cell without branching.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "QPVT" | version u8 (0x01) | flags u8 (bit0 = detector error) | count u64 | count x record byte
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{QpvError, Result};
use crate::estimation::ConditionalDistribution2;

/// Number of (settings, outcomes) cells in a reduced trial record.
pub const CELLS: usize = 32;
/// Number of joint settings pairs (mqa, mqp).
pub const SETTINGS: usize = 4;

pub const MAGIC: [u8; 4] = *b"QPVT";
pub const FORMAT_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;
const FLAG_DETECTOR_ERROR: u8 = 0x01;

/// Nominal recording interval covered by one trial file.
pub const NOMINAL_FILE_SECONDS: u32 = 60;

/// Index of a settings pair in table order (1,1), (2,1), (1,2), (2,2).
#[inline]
pub fn settings_index(mqa: u8, mqp: u8) -> usize {
    usize::from(mqa - 1) | (usize::from(mqp - 1) << 1)
}

/// Index of a matched two-party outcome (oqa, oqp) in table order
/// (1,1), (2,1), (1,2), (2,2).
#[inline]
pub fn outcome2_index(oqa: u8, oqp: u8) -> usize {
    usize::from(oqa - 1) | (usize::from(oqp - 1) << 1)
}

/// Index of a three-party outcome (oqa, zqa, zqb), oqa fastest.
#[inline]
pub fn outcome3_index(oqa: u8, zqa: u8, zqb: u8) -> usize {
    usize::from(oqa - 1) | (usize::from(zqa - 1) << 1) | (usize::from(zqb - 1) << 2)
}

/// Cell code for a settings index and a three-party outcome index.
#[inline]
pub fn cell_code(settings: usize, outcome3: usize) -> u8 {
    let mqa = settings & 1;
    let mqp = (settings >> 1) & 1;
    let oqa = outcome3 & 1;
    let zqa = (outcome3 >> 1) & 1;
    let zqb = (outcome3 >> 2) & 1;
    (mqa | (oqa << 1) | (mqp << 2) | (zqa << 3) | (zqb << 4)) as u8
}

#[inline]
pub fn cell_settings(code: u8) -> usize {
    let c = usize::from(code);
    (c & 1) | (((c >> 2) & 1) << 1)
}

#[inline]
pub fn cell_outcome3(code: u8) -> usize {
    let c = usize::from(code);
    ((c >> 1) & 1) | (((c >> 3) & 1) << 1) | (((c >> 4) & 1) << 2)
}

/// True when the two responses of a cell agree.
#[inline]
pub fn cell_is_matched(code: u8) -> bool {
    (code >> 3) & 1 == (code >> 4) & 1
}

/// The verifier-visible outcome of one protocol trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TrialRecord {
    code: u8,
}

impl TrialRecord {
    pub fn new(mqa: u8, oqa: u8, mqp: u8, zqa: u8, zqb: u8) -> Result<Self> {
        for (field, value) in [
            ("mqa", mqa),
            ("oqa", oqa),
            ("mqp", mqp),
            ("zqa", zqa),
            ("zqb", zqb),
        ] {
            if value != 1 && value != 2 {
                return Err(QpvError::InvalidRecord { field, value });
            }
        }
        let code =
            (mqa - 1) | ((oqa - 1) << 1) | ((mqp - 1) << 2) | ((zqa - 1) << 3) | ((zqb - 1) << 4);
        Ok(Self { code })
    }

    pub fn from_code(code: u8) -> Result<Self> {
        if code >= CELLS as u8 {
            return Err(QpvError::Format(format!(
                "record byte {code:#010b} has non-zero high bits"
            )));
        }
        Ok(Self { code })
    }

    /// Packed 5-bit representation; also the cell index.
    #[inline]
    pub fn code(self) -> u8 {
        self.code
    }

    pub fn mqa(self) -> u8 {
        (self.code & 1) + 1
    }
    pub fn oqa(self) -> u8 {
        ((self.code >> 1) & 1) + 1
    }
    pub fn mqp(self) -> u8 {
        ((self.code >> 2) & 1) + 1
    }
    pub fn zqa(self) -> u8 {
        ((self.code >> 3) & 1) + 1
    }
    pub fn zqb(self) -> u8 {
        ((self.code >> 4) & 1) + 1
    }

    pub fn is_matched(self) -> bool {
        cell_is_matched(self.code)
    }
}

/// Probability ν(mqa, mqp) of each settings pair, indexed by [`settings_index`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct JointSettingsDistribution {
    probs: [f64; SETTINGS],
}

impl JointSettingsDistribution {
    pub fn new(probs: [f64; SETTINGS]) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(QpvError::InvalidDistribution(format!(
                "settings probabilities must be strictly positive, got {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(QpvError::InvalidDistribution(format!(
                "settings probabilities sum to {total}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform() -> Self {
        Self {
            probs: [0.25; SETTINGS],
        }
    }

    #[inline]
    pub fn prob(&self, settings: usize) -> f64 {
        self.probs[settings]
    }

    pub fn probs(&self) -> &[f64; SETTINGS] {
        &self.probs
    }
}

impl Default for JointSettingsDistribution {
    fn default() -> Self {
        Self::uniform()
    }
}

impl TryFrom<[f64; 4]> for JointSettingsDistribution {
    type Error = QpvError;
    fn try_from(p: [f64; 4]) -> Result<Self> {
        Self::new(p)
    }
}

impl From<JointSettingsDistribution> for [f64; 4] {
    fn from(d: JointSettingsDistribution) -> Self {
        d.probs
    }
}

/// Counts n(oqa, zqa, zqb; mqa, mqp) for all 32 cells, indexed by cell code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsTable {
    cells: [u64; CELLS],
}

impl CountsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_cells(cells: [u64; CELLS]) -> Self {
        Self { cells }
    }

    #[inline]
    pub fn add(&mut self, record: TrialRecord) {
        self.cells[usize::from(record.code())] += 1;
    }

    #[inline]
    pub fn add_code(&mut self, code: u8, count: u64) {
        self.cells[usize::from(code)] += count;
    }

    pub fn merge(&mut self, other: &CountsTable) {
        for (a, b) in self.cells.iter_mut().zip(other.cells.iter()) {
            *a += *b;
        }
    }

    #[inline]
    pub fn get(&self, code: u8) -> u64 {
        self.cells[usize::from(code)]
    }

    pub fn get_cell(&self, settings: usize, outcome3: usize) -> u64 {
        self.get(cell_code(settings, outcome3))
    }

    /// Matched count ñ(oqa, oqp; settings) = n(oqa, oqp, oqp; settings).
    pub fn matched(&self, settings: usize, outcome2: usize) -> u64 {
        let oqa = outcome2 & 1;
        let oqp = (outcome2 >> 1) & 1;
        self.get_cell(settings, oqa | (oqp << 1) | (oqp << 2))
    }

    pub fn settings_total(&self, settings: usize) -> u64 {
        (0..8).map(|o| self.get_cell(settings, o)).sum()
    }

    pub fn mismatched(&self, settings: usize) -> u64 {
        (0..8)
            .filter(|&o| !cell_is_matched(cell_code(settings, o)))
            .map(|o| self.get_cell(settings, o))
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn cells(&self) -> &[u64; CELLS] {
        &self.cells
    }
}

pub fn aggregate_counts<I>(records: I) -> CountsTable
where
    I: IntoIterator<Item = TrialRecord>,
{
    let mut counts = CountsTable::new();
    for r in records {
        counts.add(r);
    }
    counts
}

/// Empirical conditional frequencies f̃(oqa, oqp | mqa, mqp) restricted to
/// trials with matching responses.
pub fn match_frequencies(counts: &CountsTable) -> Result<ConditionalDistribution2> {
    let mut rows = [[0.0; 4]; SETTINGS];
    for (s, row) in rows.iter_mut().enumerate() {
        let total: u64 = (0..4).map(|o| counts.matched(s, o)).sum();
        if total == 0 {
            return Err(QpvError::Degenerate(format!(
                "settings pair {s} has no matched counts"
            )));
        }
        for (o, v) in row.iter_mut().enumerate() {
            *v = counts.matched(s, o) as f64 / total as f64;
        }
    }
    ConditionalDistribution2::new(rows)
}

/// Decoded file header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialFileHeader {
    pub detector_error: bool,
    pub count: u64,
}

impl TrialFileHeader {
    fn to_bytes(self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4] = FORMAT_VERSION;
        out[5] = if self.detector_error {
            FLAG_DETECTOR_ERROR
        } else {
            0
        };
        out[6..].copy_from_slice(&self.count.to_le_bytes());
        out
    }

    pub fn read_from<R: Read>(src: &mut R) -> Result<Self> {
        let mut buf = [0u8; HEADER_LEN];
        src.read_exact(&mut buf)
            .map_err(|e| QpvError::Format(format!("truncated header: {e}")))?;
        if buf[..4] != MAGIC {
            return Err(QpvError::Format("bad magic".into()));
        }
        if buf[4] != FORMAT_VERSION {
            return Err(QpvError::Format(format!("unsupported version {}", buf[4])));
        }
        if buf[5] & !FLAG_DETECTOR_ERROR != 0 {
            return Err(QpvError::Format(format!(
                "unknown flag bits {:#04x}",
                buf[5]
            )));
        }
        let mut count = [0u8; 8];
        count.copy_from_slice(&buf[6..]);
        Ok(Self {
            detector_error: buf[5] & FLAG_DETECTOR_ERROR != 0,
            count: u64::from_le_bytes(count),
        })
    }
}

/// One nominal one-minute recording interval held in memory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialFile {
    detector_error: bool,
    records: Vec<TrialRecord>,
}

impl TrialFile {
    pub fn new(records: Vec<TrialRecord>, detector_error: bool) -> Self {
        Self {
            detector_error,
            records,
        }
    }

    pub fn detector_error(&self) -> bool {
        self.detector_error
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TrialRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, sink: W) -> Result<TrialFileHeader> {
        write_trials(&self.records, self.detector_error, sink)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<TrialFileHeader> {
        let file = File::create(path)?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_trials(BufReader::new(File::open(path)?))
    }
}

/// Writes the header and packed payload; returns the header written.
pub fn write_trials<W: Write>(
    records: &[TrialRecord],
    detector_error: bool,
    mut sink: W,
) -> Result<TrialFileHeader> {
    let header = TrialFileHeader {
        detector_error,
        count: records.len() as u64,
    };
    sink.write_all(&header.to_bytes())?;
    let mut chunk = Vec::with_capacity(1 << 16);
    for block in records.chunks(1 << 16) {
        chunk.clear();
        chunk.extend(block.iter().map(|r| r.code()));
        sink.write_all(&chunk)?;
    }
    sink.flush()?;
    Ok(header)
}

pub fn read_trials<R: Read>(mut src: R) -> Result<TrialFile> {
    let header = TrialFileHeader::read_from(&mut src)?;
    let count = usize::try_from(header.count)
        .map_err(|_| QpvError::Format("trial count exceeds address space".into()))?;
    let mut payload = vec![0u8; count];
    src.read_exact(&mut payload)
        .map_err(|e| QpvError::Format(format!("payload shorter than {count} trials: {e}")))?;
    let mut extra = [0u8; 1];
    if src.read(&mut extra)? != 0 {
        return Err(QpvError::Format("trailing bytes after payload".into()));
    }
    let records = payload
        .into_iter()
        .map(TrialRecord::from_code)
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialFile::new(records, header.detector_error))
}

/// Counts the first `limit` records of a file payload without materialising it.
pub fn count_prefix<R: Read>(
    mut src: R,
    limit: u64,
) -> Result<(TrialFileHeader, CountsTable, u64)> {
    let header = TrialFileHeader::read_from(&mut src)?;
    let want = header.count.min(limit);
    let mut counts = CountsTable::new();
    let mut remaining = want;
    let mut buf = vec![0u8; 1 << 16];
    while remaining > 0 {
        let take = remaining.min(buf.len() as u64) as usize;
        src.read_exact(&mut buf[..take])
            .map_err(|e| QpvError::Format(format!("payload truncated: {e}")))?;
        for &b in &buf[..take] {
            if b >= CELLS as u8 {
                return Err(QpvError::Format(format!(
                    "record byte {b:#010b} has non-zero high bits"
                )));
            }
            counts.add_code(b, 1);
        }
        remaining -= take as u64;
    }
    Ok((header, counts, want))
}

/// A trial file on disk, read lazily.
#[derive(Clone, Debug)]
pub struct TrialFilePath {
    path: PathBuf,
    header: TrialFileHeader,
}

impl TrialFilePath {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut f = BufReader::new(File::open(&path)?);
        let header = TrialFileHeader::read_from(&mut f)?;
        Ok(Self { path, header })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> TrialFileHeader {
        self.header
    }

    pub fn count_prefix(&self, limit: u64) -> Result<(CountsTable, u64)> {
        let f = BufReader::new(File::open(&self.path)?);
        let (_, counts, used) = count_prefix(f, limit)?;
        Ok((counts, used))
    }
}

/// CSV export, one row per trial.
pub fn write_csv<W: Write>(records: &[TrialRecord], sink: W) -> Result<()> {
    let mut w = BufWriter::new(sink);
    writeln!(w, "mqa,oqa,mqp,zqa,zqb")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.mqa(),
            r.oqa(),
            r.mqp(),
            r.zqa(),
            r.zqb()
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_records() -> Vec<TrialRecord> {
        (0..CELLS as u8)
            .map(|c| TrialRecord::from_code(c).unwrap())
            .collect()
    }

    #[test]
    fn field_encoding() {
        let r = TrialRecord::new(2, 1, 2, 1, 2).unwrap();
        assert_eq!(r.code(), 0b10101);
        assert_eq!(
            (r.mqa(), r.oqa(), r.mqp(), r.zqa(), r.zqb()),
            (2, 1, 2, 1, 2)
        );
        assert!(!r.is_matched());
        assert!(TrialRecord::new(0, 1, 1, 1, 1).is_err());
        assert!(TrialRecord::new(1, 1, 3, 1, 1).is_err());
        assert!(TrialRecord::from_code(32).is_err());
    }

    #[test]
    fn cell_index_helpers_agree() {
        for r in all_records() {
            let s = settings_index(r.mqa(), r.mqp());
            let o = outcome3_index(r.oqa(), r.zqa(), r.zqb());
            assert_eq!(cell_code(s, o), r.code());
            assert_eq!(cell_settings(r.code()), s);
            assert_eq!(cell_outcome3(r.code()), o);
        }
    }

    #[test]
    fn empty_file() {
        let mut buf = Vec::new();
        let h = write_trials(&[], false, &mut buf).unwrap();
        assert_eq!(h.count, 0);
        assert_eq!(buf.len(), HEADER_LEN);
        assert_eq!(&buf[..4], b"QPVT");
        let f = read_trials(&buf[..]).unwrap();
        assert!(f.is_empty());
        assert!(!f.detector_error());
    }

    #[test]
    fn all_low_record_is_zero_byte() {
        let mut buf = Vec::new();
        let r = TrialRecord::new(1, 1, 1, 1, 1).unwrap();
        write_trials(&[r], true, &mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 1);
        assert_eq!(buf[HEADER_LEN], 0b00000);
        assert_eq!(buf[5], 1);
        assert_eq!(&buf[6..14], &1u64.to_le_bytes());
        let f = read_trials(&buf[..]).unwrap();
        assert!(f.detector_error());
        assert_eq!(f.records(), &[r]);
    }

    #[test]
    fn rejects_corrupt_files() {
        let mut buf = Vec::new();
        write_trials(&all_records(), false, &mut buf).unwrap();
        assert!(read_trials(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_trials(&extra[..]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_trials(&bad[..]).is_err());
        let mut high = buf.clone();
        high[HEADER_LEN] = 0x20;
        assert!(read_trials(&high[..]).is_err());
    }

    #[test]
    fn aggregate_one_per_cell() {
        assert_eq!(aggregate_counts(Vec::new()).total(), 0);
        let c = aggregate_counts(all_records());
        assert!(c.cells().iter().all(|&n| n == 1));
        assert_eq!(c.total(), 32);
        for s in 0..SETTINGS {
            assert_eq!(c.settings_total(s), 8);
            assert_eq!(c.mismatched(s), 4);
        }
    }

    #[test]
    fn count_prefix_truncates() {
        let recs = all_records();
        let mut buf = Vec::new();
        write_trials(&recs, false, &mut buf).unwrap();
        let (h, counts, used) = count_prefix(&buf[..], 10).unwrap();
        assert_eq!(h.count, 32);
        assert_eq!(used, 10);
        assert_eq!(counts, aggregate_counts(recs[..10].iter().copied()));
    }

    #[test]
    fn match_frequencies_cases() {
        let uniform = aggregate_counts(all_records());
        let f = match_frequencies(&uniform).unwrap();
        for s in 0..SETTINGS {
            for o in 0..4 {
                assert_eq!(f.prob(s, o), 0.25);
            }
        }

        let mut point = CountsTable::new();
        for s in 0..SETTINGS {
            point.add_code(cell_code(s, outcome3_index(2, 1, 1)), 1);
        }
        let f = match_frequencies(&point).unwrap();
        assert_eq!(f.prob(0, outcome2_index(2, 1)), 1.0);
        assert_eq!(f.prob(0, outcome2_index(1, 1)), 0.0);

        let mut missing = CountsTable::new();
        missing.add_code(cell_code(0, 0), 5);
        assert!(match_frequencies(&missing).is_err());
    }

    #[test]
    fn csv_export() {
        let mut out = Vec::new();
        write_csv(&[TrialRecord::new(1, 2, 1, 2, 2).unwrap()], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "mqa,oqa,mqp,zqa,zqb\n1,2,1,2,2\n"
        );
    }

    #[test]
    fn settings_distribution_validation() {
        assert!(JointSettingsDistribution::new([0.5, 0.5, 0.0, 0.0]).is_err());
        assert!(JointSettingsDistribution::new([0.3, 0.3, 0.3, 0.3]).is_err());
        let d = JointSettingsDistribution::new([0.1, 0.2, 0.3, 0.4]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: JointSettingsDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);
        assert!(serde_json::from_str::<JointSettingsDistribution>("[1,0,0,0]").is_err());
    }
}
