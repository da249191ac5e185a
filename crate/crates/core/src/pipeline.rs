//! Raw streams to windows and feature matrices for a whole cohort.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{self, FeatureMatrix, Modality};
use crate::ingest::{self, RawSample, SubjectRecord, ValidityBounds, MANIFEST_FILE};
use crate::windowing::{self, Window, ZonedSample};

/// Cleaned, zoned and windowed stream of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub record: SubjectRecord,
    pub zoned: Vec<ZonedSample>,
    pub windows: Vec<Window>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCohort {
    pub subjects: Vec<PreparedSubject>,
    /// Subjects dropped for lack of data, with the reason.
    pub dropped: Vec<(String, String)>,
}

pub fn prepare_subject(
    record: &SubjectRecord,
    raw: &[RawSample],
    bounds: &ValidityBounds,
    gap_tolerance: f64,
) -> Result<PreparedSubject> {
    let series = ingest::clean(&record.subject_id, raw, bounds)?;
    let max_hr = ingest::max_heart_rate(record);
    let windows = windowing::segment(&series, max_hr, gap_tolerance)?;
    Ok(PreparedSubject {
        record: record.clone(),
        zoned: windowing::zone_series(&series, max_hr),
        windows,
    })
}

/// Prepares every subject. Subjects without a single window are dropped and
/// reported rather than failing the cohort.
pub fn prepare_cohort(
    subjects: &[(SubjectRecord, Vec<RawSample>)],
    bounds: &ValidityBounds,
    gap_tolerance: f64,
) -> Result<PreparedCohort> {
    let mut out = PreparedCohort {
        subjects: Vec::new(),
        dropped: Vec::new(),
    };
    for (record, raw) in subjects {
        match prepare_subject(record, raw, bounds, gap_tolerance) {
            Ok(p) => out.subjects.push(p),
            Err(Error::InsufficientData(reason)) => {
                out.dropped.push((record.subject_id.clone(), reason))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Reads `manifest.json` and every subject file it lists from `dir`.
pub fn load_raw_cohort(dir: &Path) -> Result<Vec<(SubjectRecord, Vec<RawSample>)>> {
    let manifest = ingest::load_manifest(&dir.join(MANIFEST_FILE))?;
    manifest
        .into_iter()
        .map(|rec| {
            let raw =
                ingest::parse_subject_file(&ingest::subject_path(dir, &rec.subject_id), &rec)?;
            Ok((rec, raw))
        })
        .collect()
}

impl PreparedCohort {
    /// Unlabeled feature rows of all subjects, in subject order.
    pub fn feature_matrix(&self, modality: Modality) -> Result<FeatureMatrix> {
        let windows: Vec<Window> = self
            .subjects
            .iter()
            .flat_map(|s| s.windows.iter().cloned())
            .collect();
        features::build_matrix(&windows, modality)
    }

    /// `(subject_id, zoned samples)` pairs for the t-test analysis.
    pub fn zoned(&self) -> Vec<(String, Vec<ZonedSample>)> {
        self.subjects
            .iter()
            .map(|s| (s.record.subject_id.clone(), s.zoned.clone()))
            .collect()
    }
}
