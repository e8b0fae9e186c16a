//! Waveform loading and paired-record assembly.
//!
//! Channels are stored as single-column CSV files (header `amplitude`, one
//! value per line). A file may optionally start with a `# fs_hz=<rate>`
//! comment declaring its sampling rate; when present it is checked against
//! the rate requested by the caller and against the other channel.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Header of the canonical single-channel CSV format.
pub const AMPLITUDE_HEADER: &str = "amplitude";

const FS_COMMENT_PREFIX: &str = "# fs_hz=";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("column {0} not present in file header")]
    BadColumn(String),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("unparseable sample at index {index}: {value:?}")]
    BadSample { index: usize, value: String },
    #[error("signal contains no samples")]
    EmptySignal,
    #[error("sampling rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("sampling rate mismatch: {ecg_hz} Hz (ecg) vs {ppg_hz} Hz (ppg)")]
    SampleRateMismatch { ecg_hz: f64, ppg_hz: f64 },
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A uniformly sampled single-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    fs: f64,
    label: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, fs: f64, label: impl Into<String>) -> Result<Self, IngestError> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(IngestError::BadSampleRate(fs));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(IngestError::NonFiniteSample(index));
        }
        Ok(Self {
            samples,
            fs,
            label: label.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        1000.0 * self.samples.len() as f64 / self.fs
    }

    /// Number of samples spanning `ms` milliseconds, rounded to nearest.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        (ms * self.fs / 1000.0).round().max(0.0) as usize
    }

    pub fn sample_to_ms(&self, index: usize) -> f64 {
        1000.0 * index as f64 / self.fs
    }

    /// Copy with the same rate and label but different samples.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            fs: self.fs,
            label: self.label.clone(),
        }
    }

    fn truncate(&mut self, len: usize) {
        self.samples.truncate(len);
    }

    /// Writes the canonical CSV form, including the `# fs_hz=` comment.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        writeln!(out, "{FS_COMMENT_PREFIX}{}", self.fs)?;
        writeln!(out, "{AMPLITUDE_HEADER}")?;
        for s in &self.samples {
            // `Display` for f64 is shortest round-trip, so reloading is exact.
            writeln!(out, "{s}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Selects the amplitude column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelector {
    Name(String),
    Index(usize),
}

impl Default for ColumnSelector {
    fn default() -> Self {
        ColumnSelector::Name(AMPLITUDE_HEADER.to_string())
    }
}

impl std::fmt::Display for ColumnSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnSelector::Name(name) => write!(f, "{name:?}"),
            ColumnSelector::Index(i) => write!(f, "#{i}"),
        }
    }
}

/// Reads the optional `# fs_hz=` declaration at the top of a channel file.
pub fn declared_fs(path: impl AsRef<Path>) -> Result<Option<f64>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| open_error(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line?;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix(FS_COMMENT_PREFIX) {
            let fs: f64 = rest
                .trim()
                .parse()
                .map_err(|_| IngestError::BadManifest(format!("bad fs_hz comment: {trimmed}")))?;
            return Ok(Some(fs));
        }
        if !trimmed.starts_with('#') {
            break;
        }
    }
    Ok(None)
}

fn open_error(path: &Path, e: std::io::Error) -> IngestError {
    if e.kind() == std::io::ErrorKind::NotFound {
        IngestError::MissingFile(path.to_path_buf())
    } else {
        IngestError::Io(e)
    }
}

/// Loads one channel from a CSV file.
///
/// Sample indices in errors count data rows from zero. The `fs` argument is
/// authoritative; a conflicting `# fs_hz=` comment is reported by
/// [`load_record_pair`], not here.
pub fn load_waveform(
    path: impl AsRef<Path>,
    column: &ColumnSelector,
    fs: f64,
) -> Result<Waveform, IngestError> {
    let path = path.as_ref();
    if !(fs.is_finite() && fs > 0.0) {
        return Err(IngestError::BadSampleRate(fs));
    }
    let file = File::open(path).map_err(|e| open_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let col = match column {
        ColumnSelector::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::BadColumn(column.to_string()))?,
        ColumnSelector::Index(i) if *i < headers.len() => *i,
        ColumnSelector::Index(_) => return Err(IngestError::BadColumn(column.to_string())),
    };

    let mut samples = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record
            .get(col)
            .ok_or_else(|| IngestError::BadColumn(column.to_string()))?;
        let value: f64 = raw.parse().map_err(|_| IngestError::BadSample {
            index,
            value: raw.to_string(),
        })?;
        if !value.is_finite() {
            return Err(IngestError::NonFiniteSample(index));
        }
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(IngestError::EmptySignal);
    }

    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Waveform::new(samples, fs, label)
}

/// Simultaneously recorded ECG and PPG channels, trimmed to equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncedRecord {
    pub record_id: String,
    pub ecg: Waveform,
    pub ppg: Waveform,
}

impl SyncedRecord {
    /// Pairs two channels, trimming both to the shorter length.
    pub fn new(
        record_id: impl Into<String>,
        mut ecg: Waveform,
        mut ppg: Waveform,
    ) -> Result<Self, IngestError> {
        if ecg.fs() != ppg.fs() {
            return Err(IngestError::SampleRateMismatch {
                ecg_hz: ecg.fs(),
                ppg_hz: ppg.fs(),
            });
        }
        let len = ecg.len().min(ppg.len());
        ecg.truncate(len);
        ppg.truncate(len);
        Ok(Self {
            record_id: record_id.into(),
            ecg,
            ppg,
        })
    }

    pub fn fs(&self) -> f64 {
        self.ecg.fs()
    }
}

/// Loads an ECG/PPG pair recorded at `fs`.
pub fn load_record_pair(
    ecg_path: impl AsRef<Path>,
    ppg_path: impl AsRef<Path>,
    fs: f64,
) -> Result<SyncedRecord, IngestError> {
    let ecg_path = ecg_path.as_ref();
    let ppg_path = ppg_path.as_ref();
    let ecg_fs = declared_fs(ecg_path)?;
    let ppg_fs = declared_fs(ppg_path)?;
    let ecg_hz = ecg_fs.unwrap_or(fs);
    let ppg_hz = ppg_fs.unwrap_or(fs);
    if ecg_hz != ppg_hz {
        return Err(IngestError::SampleRateMismatch { ecg_hz, ppg_hz });
    }
    if ecg_hz != fs {
        return Err(IngestError::SampleRateMismatch {
            ecg_hz,
            ppg_hz: fs,
        });
    }

    let column = ColumnSelector::default();
    let ecg = load_waveform(ecg_path, &column, fs)?;
    let ppg = load_waveform(ppg_path, &column, fs)?;
    let record_id = ecg_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SyncedRecord::new(record_id, ecg, ppg)
}

/// One entry of a record manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: String,
    pub ecg_path: PathBuf,
    pub ppg_path: PathBuf,
    pub fs_hz: f64,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<SyncedRecord, IngestError> {
        let mut record = load_record_pair(&self.ecg_path, &self.ppg_path, self.fs_hz)?;
        record.record_id = self.record_id.clone();
        Ok(record)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    One(ManifestEntry),
    Many(Vec<ManifestEntry>),
}

/// Reads a manifest holding either a single record object or an array of
/// them. Relative channel paths are resolved against the manifest directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| open_error(path, e))?;
    let parsed: ManifestFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| IngestError::BadManifest(e.to_string()))?;
    let mut entries = match parsed {
        ManifestFile::One(entry) => vec![entry],
        ManifestFile::Many(entries) => entries,
    };
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for entry in &mut entries {
        if entry.ecg_path.is_relative() {
            entry.ecg_path = base.join(&entry.ecg_path);
        }
        if entry.ppg_path.is_relative() {
            entry.ppg_path = base.join(&entry.ppg_path);
        }
        if !(entry.fs_hz.is_finite() && entry.fs_hz > 0.0) {
            return Err(IngestError::BadSampleRate(entry.fs_hz));
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, entry: &ManifestEntry) -> Result<(), IngestError> {
    let json = serde_json::to_string_pretty(entry)
        .map_err(|e| IngestError::BadManifest(e.to_string()))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn three_rows_at_125_hz() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.csv", "amplitude\n0.0\n0.5\n1.0\n");
        let w = load_waveform(&path, &ColumnSelector::default(), 125.0).unwrap();
        assert_eq!(w.samples(), &[0.0, 0.5, 1.0]);
        assert_eq!(w.duration_ms(), 24.0);
    }

    #[test]
    fn empty_file_is_empty_signal() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.csv", "amplitude\n");
        let err = load_waveform(&path, &ColumnSelector::default(), 125.0).unwrap_err();
        assert!(matches!(err, IngestError::EmptySignal), "{err}");
    }

    #[test]
    fn nan_row_reports_its_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("amplitude\n");
        for i in 0..10 {
            if i == 7 {
                body.push_str("NaN\n");
            } else {
                body.push_str("0.25\n");
            }
        }
        let path = write(dir.path(), "a.csv", &body);
        let err = load_waveform(&path, &ColumnSelector::default(), 125.0).unwrap_err();
        assert!(matches!(err, IngestError::NonFiniteSample(7)), "{err}");
    }

    #[test]
    fn missing_file_and_bad_column() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_waveform(dir.path().join("nope.csv"), &ColumnSelector::default(), 125.0)
            .unwrap_err();
        assert!(matches!(err, IngestError::MissingFile(_)));

        let path = write(dir.path(), "a.csv", "time,amplitude\n0,1.0\n1,2.0\n");
        let err = load_waveform(&path, &ColumnSelector::Name("ppg".into()), 125.0).unwrap_err();
        assert!(matches!(err, IngestError::BadColumn(_)));
        let err = load_waveform(&path, &ColumnSelector::Index(2), 125.0).unwrap_err();
        assert!(matches!(err, IngestError::BadColumn(_)));
        let w = load_waveform(&path, &ColumnSelector::Index(1), 125.0).unwrap();
        assert_eq!(w.samples(), &[1.0, 2.0]);
    }

    #[test]
    fn pair_is_trimmed_to_shorter_channel() {
        let dir = tempfile::tempdir().unwrap();
        let ecg = Waveform::new((0..1000).map(|i| i as f64).collect(), 125.0, "ecg").unwrap();
        let ppg = Waveform::new((0..998).map(|i| -(i as f64)).collect(), 125.0, "ppg").unwrap();
        let ecg_path = dir.path().join("ecg.csv");
        let ppg_path = dir.path().join("ppg.csv");
        ecg.write_csv(&ecg_path).unwrap();
        ppg.write_csv(&ppg_path).unwrap();
        let rec = load_record_pair(&ecg_path, &ppg_path, 125.0).unwrap();
        assert_eq!(rec.ecg.len(), 998);
        assert_eq!(rec.ppg.len(), 998);
        assert_eq!(rec.ecg.samples()[997], 997.0);
        assert_eq!(rec.ppg.samples()[997], -997.0);
    }

    #[test]
    fn identical_files_give_equal_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "x.csv", "amplitude\n1\n2\n3\n");
        let rec = load_record_pair(&path, &path, 250.0).unwrap();
        assert_eq!(rec.ecg.samples(), rec.ppg.samples());
    }

    #[test]
    fn declared_rates_must_agree() {
        let dir = tempfile::tempdir().unwrap();
        let ecg = write(dir.path(), "ecg.csv", "# fs_hz=125\namplitude\n1\n2\n");
        let ppg = write(dir.path(), "ppg.csv", "# fs_hz=250\namplitude\n1\n2\n");
        let err = load_record_pair(&ecg, &ppg, 125.0).unwrap_err();
        assert!(matches!(err, IngestError::SampleRateMismatch { .. }), "{err}");
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "ecg.csv", "amplitude\n1\n2\n3\n");
        write(dir.path(), "ppg.csv", "amplitude\n4\n5\n");
        let manifest = write(
            dir.path(),
            "m.json",
            r#"{"record_id": "r1", "ecg_path": "ecg.csv", "ppg_path": "ppg.csv", "fs_hz": 125}"#,
        );
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 1);
        let rec = entries[0].load().unwrap();
        assert_eq!(rec.record_id, "r1");
        assert_eq!(rec.ecg.len(), 2);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            samples in prop::collection::vec(-1e6f64..1e6, 1..200),
            fs in 1.0f64..2000.0,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("w.csv");
            let w = Waveform::new(samples, fs, "w").unwrap();
            w.write_csv(&path).unwrap();
            let back = load_waveform(&path, &ColumnSelector::default(), fs).unwrap();
            prop_assert_eq!(back.samples(), w.samples());
            prop_assert_eq!(declared_fs(&path).unwrap(), Some(fs));
        }
    }
}
