//! Synthetic SpO2/HR cohorts.
//!
//! Each signal is an AR(1) process around a subject baseline. An activity
//! Markov chain lifts HR toward the subject's maximum and pulls SpO2 down a
//! little; both follow the activity level with a first-order lag. Values are
//! clipped to the default validity bounds and rounded to 0.01.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::forest::derive_seed;
use crate::error::{Error, Result};
use crate::ingest::{self, RawSample, SubjectRecord, ValidityBounds, MANIFEST_FILE};

pub const SAMPLE_INTERVAL_S: f64 = 4.0;

/// Intensity of the rest, light, moderate and vigorous activity states.
const INTENSITY: [f64; 4] = [0.0, 0.3, 0.55, 0.8];
/// Per-sample probability of leaving the current activity state.
const SWITCH_PROB: f64 = 0.02;
/// Fraction of the remaining gap to the activity target closed per sample.
const LAG: f64 = 0.2;
/// SpO2 drop in percentage points at full intensity.
const SPO2_DROP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityProfile {
    /// Constant rest.
    Sedentary,
    Mixed,
    Active,
}

impl ActivityProfile {
    /// Entry weights of rest, light, moderate, vigorous.
    fn weights(self) -> [f64; 4] {
        match self {
            ActivityProfile::Sedentary => [1.0, 0.0, 0.0, 0.0],
            ActivityProfile::Mixed => [0.6, 0.25, 0.1, 0.05],
            ActivityProfile::Active => [0.3, 0.3, 0.25, 0.15],
        }
    }
}

impl std::str::FromStr for ActivityProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sedentary" => Ok(ActivityProfile::Sedentary),
            "mixed" => Ok(ActivityProfile::Mixed),
            "active" => Ok(ActivityProfile::Active),
            other => Err(Error::Validation(format!(
                "unknown activity profile `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineLayout {
    /// Independent uniform draws from the ranges.
    Uniform,
    /// Evenly spaced over the ranges. HR baselines are assigned in a seeded
    /// permutation so the two signals do not rank subjects identically.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub spo2_baseline_range: [f64; 2],
    pub hr_baseline_range: [f64; 2],
    pub noise_sigma_spo2: f64,
    pub noise_sigma_hr: f64,
    pub ar_coefficient: f64,
    pub activity_profile: ActivityProfile,
    pub dropout_rate: f64,
    pub baseline_layout: BaselineLayout,
    pub age_range: [u32; 2],
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_subjects: 25,
            duration_s: 1800.0,
            seed: 0,
            spo2_baseline_range: [94.0, 98.0],
            hr_baseline_range: [60.0, 85.0],
            noise_sigma_spo2: 0.5,
            noise_sigma_hr: 2.0,
            ar_coefficient: 0.7,
            activity_profile: ActivityProfile::Mixed,
            dropout_rate: 0.01,
            baseline_layout: BaselineLayout::Uniform,
            age_range: [18, 60],
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            ));
        }
        let [slo, shi] = self.spo2_baseline_range;
        if !(90.0 <= slo && slo <= shi && shi <= 99.0) {
            return bad(format!(
                "spo2_baseline_range [{slo}, {shi}] must lie within [90, 99]"
            ));
        }
        let [hlo, hhi] = self.hr_baseline_range;
        if !(25.0 <= hlo && hlo <= hhi && hhi <= 250.0) {
            return bad(format!(
                "hr_baseline_range [{hlo}, {hhi}] is empty or outside [25, 250]"
            ));
        }
        for (name, s) in [
            ("noise_sigma_spo2", self.noise_sigma_spo2),
            ("noise_sigma_hr", self.noise_sigma_hr),
        ] {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("{name} must be positive, got {s}"));
            }
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return bad(format!(
                "ar_coefficient must lie in [0, 1), got {}",
                self.ar_coefficient
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        let [alo, ahi] = self.age_range;
        if !(1 <= alo && alo <= ahi && ahi <= 120) {
            return bad(format!("age_range [{alo}, {ahi}] must lie within [1, 120]"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s / SAMPLE_INTERVAL_S + 1e-9).floor() as usize
    }
}

/// Baselines on a grid spaced three noise sigmas apart in both signals.
/// Fails when `n` subjects do not fit inside the SpO2 range [90, 99].
pub fn separable_preset(n_subjects: usize, seed: u64) -> Result<CohortSpec> {
    const SEPARATION: f64 = 3.0;
    const SIGMA_SPO2: f64 = 0.12;
    const SIGMA_HR: f64 = 0.5;
    if n_subjects < 2 {
        return Err(Error::Validation(
            "separable preset needs at least 2 subjects".into(),
        ));
    }
    let span = (n_subjects - 1) as f64 * SEPARATION * SIGMA_SPO2;
    if span > 9.0 {
        return Err(Error::Validation(format!(
            "{n_subjects} subjects need an SpO2 span of {span:.2} points, more than the 9 available"
        )));
    }
    let hr_lo = 60.0;
    Ok(CohortSpec {
        n_subjects,
        seed,
        spo2_baseline_range: [94.5 - span / 2.0, 94.5 + span / 2.0],
        hr_baseline_range: [
            hr_lo,
            hr_lo + (n_subjects - 1) as f64 * SEPARATION * SIGMA_HR,
        ],
        noise_sigma_spo2: SIGMA_SPO2,
        noise_sigma_hr: SIGMA_HR,
        ar_coefficient: 0.5,
        activity_profile: ActivityProfile::Sedentary,
        dropout_rate: 0.002,
        baseline_layout: BaselineLayout::Grid,
        ..CohortSpec::default()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub record: SubjectRecord,
    pub spo2_baseline: f64,
    pub hr_baseline: f64,
    pub samples: Vec<RawSample>,
}

fn subject_id(i: usize, n: usize) -> String {
    let width = n.to_string().len().max(2);
    format!("s{:0width$}", i + 1)
}

fn grid(range: [f64; 2], i: usize, n: usize) -> f64 {
    if n == 1 {
        return (range[0] + range[1]) / 2.0;
    }
    range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Stationary AR(1) with marginal standard deviation `sigma`.
struct Ar1 {
    phi: f64,
    innovation: Normal<f64>,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Ar1 {
        let state = Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
        Ar1 {
            phi,
            innovation: Normal::new(0.0, sigma * (1.0 - phi * phi).sqrt()).expect("positive sigma"),
            state,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let out = self.state;
        self.state = self.phi * self.state + self.innovation.sample(rng);
        out
    }
}

fn pick_state(weights: &[f64; 4], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    0
}

fn generate_subject(spec: &CohortSpec, i: usize, spo2_base: f64, hr_base: f64) -> SyntheticSubject {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
    let age = rng.random_range(spec.age_range[0]..=spec.age_range[1]);
    let record = SubjectRecord::new(subject_id(i, spec.n_subjects), age);
    let max_hr = ingest::max_heart_rate(&record);
    let bounds = ValidityBounds::default();

    let weights = spec.activity_profile.weights();
    let mut state = pick_state(&weights, &mut rng);
    let mut level = INTENSITY[state];
    let mut spo2_noise = Ar1::new(spec.ar_coefficient, spec.noise_sigma_spo2, &mut rng);
    let mut hr_noise = Ar1::new(spec.ar_coefficient, spec.noise_sigma_hr, &mut rng);

    let samples = (0..spec.n_samples())
        .map(|k| {
            if rng.random::<f64>() < SWITCH_PROB {
                state = pick_state(&weights, &mut rng);
            }
            level += LAG * (INTENSITY[state] - level);
            let hr_target = hr_base + level * (0.95 * max_hr - hr_base);
            let hr =
                round2((hr_target + hr_noise.next(&mut rng)).clamp(bounds.hr_min, bounds.hr_max));
            let spo2 = round2(
                (spo2_base - SPO2_DROP * level + spo2_noise.next(&mut rng))
                    .clamp(bounds.spo2_min, bounds.spo2_max),
            );
            let spo2_missing = rng.random::<f64>() < spec.dropout_rate;
            let hr_missing = rng.random::<f64>() < spec.dropout_rate;
            RawSample::new(
                k as f64 * SAMPLE_INTERVAL_S,
                (!spo2_missing).then_some(spo2),
                (!hr_missing).then_some(hr),
            )
        })
        .collect();

    SyntheticSubject {
        record,
        spo2_baseline: spo2_base,
        hr_baseline: hr_base,
        samples,
    }
}

/// Generates every subject of `spec`. Deterministic in `spec.seed`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticSubject>> {
    spec.validate()?;
    let n = spec.n_subjects;
    let baselines: Vec<(f64, f64)> = match spec.baseline_layout {
        BaselineLayout::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
            (0..n)
                .map(|_| {
                    let [slo, shi] = spec.spo2_baseline_range;
                    let [hlo, hhi] = spec.hr_baseline_range;
                    (
                        slo + (shi - slo) * rng.random::<f64>(),
                        hlo + (hhi - hlo) * rng.random::<f64>(),
                    )
                })
                .collect()
        }
        BaselineLayout::Grid => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
            let mut hr_order: Vec<usize> = (0..n).collect();
            hr_order.shuffle(&mut rng);
            (0..n)
                .map(|i| {
                    (
                        grid(spec.spo2_baseline_range, i, n),
                        grid(spec.hr_baseline_range, hr_order[i], n),
                    )
                })
                .collect()
        }
    };
    Ok((0..n)
        .into_par_iter()
        .map(|i| generate_subject(spec, i, baselines[i].0, baselines[i].1))
        .collect())
}

/// Writes `<dir>/<subject_id>.csv` per subject plus `<dir>/manifest.json`.
pub fn write_cohort(dir: &Path, subjects: &[SyntheticSubject]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in subjects {
        let path = ingest::subject_path(dir, &s.record.subject_id);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        ingest::write_samples(BufWriter::new(file), &s.samples)?;
    }
    let manifest: Vec<&SubjectRecord> = subjects.iter().map(|s| &s.record).collect();
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_autocorrelation(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        cov / var
    }

    #[test]
    fn sample_counts_and_dropout() {
        let spec = CohortSpec {
            n_subjects: 2,
            duration_s: 400.0,
            dropout_rate: 0.0,
            ..CohortSpec::default()
        };
        let c = generate_cohort(&spec).unwrap();
        assert_eq!(c.len(), 2);
        for s in &c {
            assert_eq!(s.samples.len(), 100);
            assert!(s.samples.iter().all(|r| r.spo2.is_some() && r.hr.is_some()));
            assert!(s
                .samples
                .windows(2)
                .all(|w| w[1].timestamp - w[0].timestamp == 4.0));
        }
    }

    #[test]
    fn values_respect_bounds() {
        let spec = CohortSpec {
            n_subjects: 4,
            activity_profile: ActivityProfile::Active,
            noise_sigma_spo2: 3.0,
            ..CohortSpec::default()
        };
        let b = ValidityBounds::default();
        for s in generate_cohort(&spec).unwrap() {
            for r in &s.samples {
                if let Some(v) = r.spo2 {
                    assert!((b.spo2_min..=b.spo2_max).contains(&v));
                }
                if let Some(v) = r.hr {
                    assert!((b.hr_min..=b.hr_max).contains(&v));
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = CohortSpec {
            n_subjects: 3,
            duration_s: 800.0,
            seed: 11,
            ..CohortSpec::default()
        };
        assert_eq!(
            generate_cohort(&spec).unwrap(),
            generate_cohort(&spec).unwrap()
        );
        let other = CohortSpec {
            seed: 12,
            ..spec.clone()
        };
        assert_ne!(
            generate_cohort(&spec).unwrap(),
            generate_cohort(&other).unwrap()
        );
    }

    #[test]
    fn ar_autocorrelation_matches_coefficient() {
        let spec = CohortSpec {
            n_subjects: 1,
            duration_s: 4.0 * 20_000.0,
            ar_coefficient: 0.6,
            activity_profile: ActivityProfile::Sedentary,
            dropout_rate: 0.0,
            noise_sigma_hr: 2.0,
            ..CohortSpec::default()
        };
        let s = &generate_cohort(&spec).unwrap()[0];
        let hr: Vec<f64> = s.samples.iter().map(|r| r.hr.unwrap()).collect();
        let spo2: Vec<f64> = s.samples.iter().map(|r| r.spo2.unwrap()).collect();
        assert!((lag1_autocorrelation(&hr) - 0.6).abs() < 0.1);
        assert!((lag1_autocorrelation(&spo2) - 0.6).abs() < 0.1);
    }

    #[test]
    fn separable_grid_spacing() {
        let spec = separable_preset(2, 0).unwrap();
        let c = generate_cohort(&spec).unwrap();
        let gap = (c[1].spo2_baseline - c[0].spo2_baseline).abs();
        assert!((gap - 3.0 * spec.noise_sigma_spo2).abs() < 1e-12);

        let spec = separable_preset(25, 0).unwrap();
        let mut base: Vec<f64> = generate_cohort(&spec)
            .unwrap()
            .iter()
            .map(|s| s.hr_baseline)
            .collect();
        base.sort_by(f64::total_cmp);
        assert!(base
            .windows(2)
            .all(|w| w[1] - w[0] >= 3.0 * spec.noise_sigma_hr - 1e-9));
        assert!(separable_preset(27, 0).is_err());
        assert!(separable_preset(1, 0).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = CohortSpec {
            spo2_baseline_range: [89.0, 95.0],
            ..CohortSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = CohortSpec {
            ar_coefficient: 1.0,
            ..CohortSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cohort_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec {
            n_subjects: 2,
            duration_s: 200.0,
            ..CohortSpec::default()
        };
        let c = generate_cohort(&spec).unwrap();
        write_cohort(dir.path(), &c).unwrap();
        let manifest = ingest::load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.len(), 2);
        for (rec, s) in manifest.iter().zip(&c) {
            let back =
                ingest::parse_subject_file(&ingest::subject_path(dir.path(), &rec.subject_id), rec)
                    .unwrap();
            assert_eq!(back, s.samples);
        }
    }
}
