//! Per-subject sensor files, subject manifests and sample cleaning.
//!
//! A subject file is a CSV with the header `timestamp_s,spo2_pct,hr_bpm` and
//! one sample per row. An empty cell means the sensor failed to record that
//! value. Timestamps are seconds since the start of the stream.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::WINDOW_LEN;

pub const CSV_HEADER: [&str; 3] = ["timestamp_s", "spo2_pct", "hr_bpm"];

/// File name of the subject manifest inside a data directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// `<dir>/<subject_id>.csv`
pub fn subject_path(dir: &Path, subject_id: &str) -> PathBuf {
    dir.join(format!("{subject_id}.csv"))
}

/// One row of a subject file, before cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub timestamp: f64,
    pub spo2: Option<f64>,
    pub hr: Option<f64>,
}

impl RawSample {
    pub fn new(timestamp: f64, spo2: Option<f64>, hr: Option<f64>) -> Self {
        Self {
            timestamp,
            spo2,
            hr,
        }
    }
}

impl From<Sample> for RawSample {
    fn from(s: Sample) -> Self {
        RawSample::new(s.timestamp, Some(s.spo2), Some(s.hr))
    }
}

/// A fully observed sample that passed validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: f64,
    pub spo2: f64,
    pub hr: f64,
}

/// A subject's cleaned stream. Every sample lies inside the validity bounds
/// it was cleaned with and timestamps are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub subject_id: String,
    pub samples: Vec<Sample>,
}

impl SampleSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Demographics attached to a subject file through the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub age: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_hr_override: Option<f64>,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, age: u32) -> Self {
        Self {
            subject_id: subject_id.into(),
            age,
            max_hr_override: None,
        }
    }

    pub fn with_max_hr(mut self, max_hr: f64) -> Self {
        self.max_hr_override = Some(max_hr);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::Validation("empty subject_id".into()));
        }
        if !(1..=120).contains(&self.age) {
            return Err(Error::Validation(format!(
                "subject {}: age {} outside [1, 120]",
                self.subject_id, self.age
            )));
        }
        if let Some(m) = self.max_hr_override {
            if !(100.0..=250.0).contains(&m) {
                return Err(Error::Validation(format!(
                    "subject {}: max_hr_override {m} outside [100, 250]",
                    self.subject_id
                )));
            }
        }
        Ok(())
    }
}

/// Inclusive bounds a sample must satisfy to survive [`clean`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityBounds {
    pub spo2_min: f64,
    pub spo2_max: f64,
    pub hr_min: f64,
    pub hr_max: f64,
}

impl Default for ValidityBounds {
    fn default() -> Self {
        Self {
            spo2_min: 70.0,
            spo2_max: 100.0,
            hr_min: 25.0,
            hr_max: 250.0,
        }
    }
}

impl ValidityBounds {
    fn accepts(&self, spo2: f64, hr: f64) -> bool {
        (self.spo2_min..=self.spo2_max).contains(&spo2) && (self.hr_min..=self.hr_max).contains(&hr)
    }
}

/// Age-predicted maximum heart rate (220 - age) unless the record overrides it.
pub fn max_heart_rate(subject: &SubjectRecord) -> f64 {
    subject
        .max_hr_override
        .unwrap_or_else(|| 220.0 - f64::from(subject.age))
}

/// Parses a subject CSV. Rows come back in file order.
pub fn parse_samples<R: Read>(reader: R) -> Result<Vec<RawSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut out: Vec<RawSample> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }

        let timestamp = parse_cell(&record[0], line, "timestamp_s")?.ok_or(Error::Parse {
            line,
            message: "timestamp_s is missing".into(),
        })?;
        if timestamp < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("negative timestamp {timestamp}"),
            });
        }
        if let Some(prev) = out.last() {
            if timestamp <= prev.timestamp {
                return Err(Error::Validation(format!(
                    "line {line}: timestamp {timestamp} does not increase (previous {})",
                    prev.timestamp
                )));
            }
        }
        let spo2 = parse_cell(&record[1], line, "spo2_pct")?;
        let hr = parse_cell(&record[2], line, "hr_bpm")?;
        out.push(RawSample::new(timestamp, spo2, hr));
    }
    Ok(out)
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            line,
            message: format!("{column}: `{cell}` is not a finite number"),
        }),
    }
}

/// Reads `path` as the raw stream of `subject`.
pub fn parse_subject_file(path: &Path, subject: &SubjectRecord) -> Result<Vec<RawSample>> {
    subject.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_samples(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes samples in the subject-file format. Missing values become empty cells.
pub fn write_samples<W: Write>(writer: W, samples: &[RawSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in samples {
        w.write_record([
            s.timestamp.to_string(),
            s.spo2.map(|v| v.to_string()).unwrap_or_default(),
            s.hr.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<SubjectRecord> = serde_json::from_reader(BufReader::new(file))?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

/// Drops every sample with a missing or out-of-bounds field. Order is kept.
///
/// Fails with [`Error::InsufficientData`] when fewer than one window's worth
/// of samples survive.
pub fn clean(
    subject_id: &str,
    samples: &[RawSample],
    bounds: &ValidityBounds,
) -> Result<SampleSeries> {
    let kept: Vec<Sample> = samples
        .iter()
        .filter_map(|s| match (s.spo2, s.hr) {
            (Some(spo2), Some(hr)) if bounds.accepts(spo2, hr) => Some(Sample {
                timestamp: s.timestamp,
                spo2,
                hr,
            }),
            _ => None,
        })
        .collect();

    if kept.len() < WINDOW_LEN {
        return Err(Error::InsufficientData(format!(
            "subject {subject_id}: {} valid samples, need at least {WINDOW_LEN}",
            kept.len()
        )));
    }
    Ok(SampleSeries {
        subject_id: subject_id.to_string(),
        samples: kept,
    })
}
