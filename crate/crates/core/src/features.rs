//! Window-level statistical features and labeled feature matrices.
//!
//! Every signal window yields the same 21 statistics. Moments use the
//! population (1/n) convention, quartiles interpolate linearly between order
//! statistics (the first quartile of n sorted values sits at position
//! (n-1)/4), and kurtosis is excess kurtosis. Ratios whose denominator is zero
//! are reported as 0 so that every value stays finite.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::{Window, WINDOW_LEN};

pub const N_STATS: usize = 21;

pub const STAT_NAMES: [&str; N_STATS] = [
    "mean",
    "median",
    "std",
    "variance",
    "coeff_variance",
    "range",
    "coeff_range",
    "q1",
    "q3",
    "max",
    "iqr",
    "coeff_iqr",
    "mean_abs_dev",
    "median_abs_dev",
    "energy",
    "power",
    "rms",
    "rss",
    "snr",
    "skewness",
    "kurtosis",
];

pub const REP_ZONE_COLUMN: &str = "rep_zone";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    values: [f64; N_STATS],
}

impl FeatureVector {
    pub fn values(&self) -> &[f64; N_STATS] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        STAT_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        STAT_NAMES.iter().copied().zip(self.values.iter().copied())
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Linear interpolation between order statistics of an ascending slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The 21 statistics of one window. `x` must hold exactly [`WINDOW_LEN`] finite values.
pub fn stat_features(x: &[f64]) -> Result<FeatureVector> {
    if x.len() != WINDOW_LEN {
        return Err(Error::Contract(format!(
            "stat_features needs {WINDOW_LEN} values, got {}",
            x.len()
        )));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("non-finite sample {bad}")));
    }

    let n = x.len() as f64;
    let sorted = sorted_copy(x);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let constant = min == max;

    let mean = x.iter().sum::<f64>() / n;
    let median = quantile_sorted(&sorted, 0.5);
    let variance = if constant {
        0.0
    } else {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    };
    let std = variance.sqrt();
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let range = max - min;
    let iqr = q3 - q1;
    let mean_abs_dev = if constant {
        0.0
    } else {
        x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n
    };
    let abs_dev = sorted_copy(&x.iter().map(|v| (v - median).abs()).collect::<Vec<_>>());
    let median_abs_dev = quantile_sorted(&abs_dev, 0.5);
    let energy = x.iter().map(|v| v * v).sum::<f64>();
    let power = energy / n;

    let (skewness, kurtosis) = if std == 0.0 {
        (0.0, 0.0)
    } else {
        let m3 = x.iter().map(|v| ((v - mean) / std).powi(3)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| ((v - mean) / std).powi(4)).sum::<f64>() / n;
        (m3, m4 - 3.0)
    };
    let (coeff_variance, snr) = if std == 0.0 {
        (0.0, 0.0)
    } else {
        (ratio(std, mean), mean / std)
    };

    Ok(FeatureVector {
        values: [
            mean,
            median,
            std,
            variance,
            coeff_variance,
            range,
            ratio(range, max + min),
            q1,
            q3,
            max,
            iqr,
            ratio(iqr, q3 + q1),
            mean_abs_dev,
            median_abs_dev,
            energy,
            power,
            power.sqrt(),
            energy.sqrt(),
            snr,
            skewness,
            kurtosis,
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Hr,
    Spo2,
    HrSpo2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Hr, Modality::Spo2, Modality::HrSpo2];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Hr => "hr",
            Modality::Spo2 => "spo2",
            Modality::HrSpo2 => "hr_spo2",
        }
    }

    /// Column count of a matrix built for this modality.
    pub fn width(self) -> usize {
        match self {
            Modality::Hr | Modality::Spo2 => N_STATS + 1,
            Modality::HrSpo2 => 2 * N_STATS + 1,
        }
    }

    pub fn column_names(self) -> Vec<String> {
        let prefixed = |p: &'static str| STAT_NAMES.iter().map(move |n| format!("{p}_{n}"));
        let mut cols: Vec<String> = match self {
            Modality::Hr => prefixed("hr").collect(),
            Modality::Spo2 => prefixed("spo2").collect(),
            Modality::HrSpo2 => prefixed("hr").chain(prefixed("spo2")).collect(),
        };
        cols.push(REP_ZONE_COLUMN.to_string());
        cols
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hr" => Ok(Modality::Hr),
            "spo2" => Ok(Modality::Spo2),
            "hr_spo2" => Ok(Modality::HrSpo2),
            other => Err(Error::Validation(format!("unknown modality `{other}`"))),
        }
    }
}

/// Valid = the enrolled user (positive class); imposter = anybody else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Valid,
    Imposter,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Valid => "valid",
            Label::Imposter => "imposter",
        }
    }

    pub fn is_valid(self) -> bool {
        self == Label::Valid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub subject_id: String,
    pub window_idx: usize,
    pub label: Option<Label>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub modality: Modality,
    pub column_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn values(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    /// Labels of all rows. Fails on an unlabeled row.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.rows
            .iter()
            .map(|r| {
                r.label.ok_or_else(|| {
                    Error::Contract(format!(
                        "row {}/{} has no label",
                        r.subject_id, r.window_idx
                    ))
                })
            })
            .collect()
    }

    pub fn with_rows(&self, rows: Vec<FeatureRow>) -> FeatureMatrix {
        FeatureMatrix {
            modality: self.modality,
            column_names: self.column_names.clone(),
            rows,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        self.with_rows(indices.iter().map(|&i| self.rows[i].clone()).collect())
    }

    pub fn filter_label(&self, label: Label) -> FeatureMatrix {
        self.with_rows(
            self.rows
                .iter()
                .filter(|r| r.label == Some(label))
                .cloned()
                .collect(),
        )
    }

    /// Rows of one subject, in stored order.
    pub fn subject_rows(&self, subject_id: &str) -> FeatureMatrix {
        self.with_rows(
            self.rows
                .iter()
                .filter(|r| r.subject_id == subject_id)
                .cloned()
                .collect(),
        )
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in &self.rows {
            if ids.last() != Some(&r.subject_id) && !ids.contains(&r.subject_id) {
                ids.push(r.subject_id.clone());
            }
        }
        ids
    }

    /// CSV with header `subject_id,window_idx,label,<columns...>`. Unlabeled rows
    /// leave the label cell empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "subject_id".to_string(),
            "window_idx".into(),
            "label".into(),
        ];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.subject_id.clone(),
                r.window_idx.to_string(),
                r.label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            ];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Reads a matrix written by [`FeatureMatrix::write_csv`]. The modality is
    /// recovered from the column-name prefixes.
    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureMatrix> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4 || header[..3] != ["subject_id", "window_idx", "label"] {
            return Err(Error::Parse {
                line: 1,
                message: "feature CSV must start with subject_id,window_idx,label".into(),
            });
        }
        let column_names = header[3..].to_vec();
        let has = |p: &str| column_names.iter().any(|c| c.starts_with(p));
        let modality = match (has("hr_"), has("spo2_")) {
            (true, true) => Modality::HrSpo2,
            (true, false) => Modality::Hr,
            (false, true) => Modality::Spo2,
            (false, false) => {
                return Err(Error::Parse {
                    line: 1,
                    message: "no hr_/spo2_ feature columns".into(),
                })
            }
        };

        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |m: String| Error::Parse { line, message: m };
            let window_idx = rec[1]
                .parse()
                .map_err(|_| bad(format!("bad window_idx `{}`", &rec[1])))?;
            let label = match &rec[2] {
                "" => None,
                "valid" => Some(Label::Valid),
                "imposter" => Some(Label::Imposter),
                other => return Err(bad(format!("bad label `{other}`"))),
            };
            let values = rec
                .iter()
                .skip(3)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| bad(format!("bad value `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(FeatureRow {
                subject_id: rec[0].to_string(),
                window_idx,
                label,
                values,
            });
        }
        Ok(FeatureMatrix {
            modality,
            column_names,
            rows,
        })
    }
}

/// One unlabeled row per window. HR columns precede SpO2 columns in the
/// combined modality and the representative zone is always last.
pub fn build_matrix(windows: &[Window], modality: Modality) -> Result<FeatureMatrix> {
    if windows.is_empty() {
        return Err(Error::Contract(
            "build_matrix needs at least one window".into(),
        ));
    }
    let rows = windows
        .iter()
        .map(|w| {
            let mut values = Vec::with_capacity(modality.width());
            if matches!(modality, Modality::Hr | Modality::HrSpo2) {
                values.extend_from_slice(stat_features(&w.hr())?.values());
            }
            if matches!(modality, Modality::Spo2 | Modality::HrSpo2) {
                values.extend_from_slice(stat_features(&w.spo2())?.values());
            }
            values.push(f64::from(w.rep_zone.get()));
            Ok(FeatureRow {
                subject_id: w.subject_id.clone(),
                window_idx: w.index,
                label: None,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        modality,
        column_names: modality.column_names(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::{Zone, ZonedSample};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn feat(x: &[f64], name: &str) -> f64 {
        stat_features(x).unwrap().get(name).unwrap()
    }

    #[test]
    fn constant_window() {
        let x = [96.0; 10];
        let f = stat_features(&x).unwrap();
        for (name, want) in [
            ("mean", 96.0),
            ("std", 0.0),
            ("range", 0.0),
            ("snr", 0.0),
            ("skewness", 0.0),
            ("kurtosis", 0.0),
            ("coeff_variance", 0.0),
            ("iqr", 0.0),
            ("coeff_iqr", 0.0),
        ] {
            assert_eq!(f.get(name).unwrap(), want, "{name}");
        }
        // constant values without an exact binary representation
        let g = stat_features(&[96.3; 10]).unwrap();
        assert_eq!(g.get("std").unwrap(), 0.0);
        assert_eq!(g.get("skewness").unwrap(), 0.0);
        assert!(g.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn alternating_window() {
        let x = [3.0, 4.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0];
        assert_eq!(feat(&x, "mean"), 3.5);
        assert_eq!(feat(&x, "energy"), 125.0);
        assert_eq!(feat(&x, "power"), 12.5);
        assert_eq!(feat(&x, "rms"), 12.5f64.sqrt());
        assert_eq!(feat(&x, "rss"), 125f64.sqrt());
        assert_eq!(feat(&x, "range"), 1.0);
        assert_relative_eq!(feat(&x, "coeff_range"), 1.0 / 7.0, max_relative = 1e-15);
    }

    #[test]
    fn ramp_window_matches_frozen_reference() {
        // reference values computed with numpy/scipy (population moments,
        // linear-interpolation percentiles, Fisher kurtosis)
        let x: Vec<f64> = (60..70).map(f64::from).collect();
        let want = [
            ("mean", 64.5),
            ("median", 64.5),
            ("std", 2.8722813232690143),
            ("variance", 8.25),
            ("coeff_variance", 0.04453149338401573),
            ("range", 9.0),
            ("coeff_range", 0.06976744186046512),
            ("q1", 62.25),
            ("q3", 66.75),
            ("max", 69.0),
            ("iqr", 4.5),
            ("coeff_iqr", 0.03488372093023256),
            ("mean_abs_dev", 2.5),
            ("median_abs_dev", 2.5),
            ("energy", 41685.0),
            ("power", 4168.5),
            ("rms", 64.56392181396666),
            ("rss", 204.16904760516468),
            ("snr", 22.45601761828502),
            ("skewness", 0.0),
            ("kurtosis", -1.2242424242424244),
        ];
        let f = stat_features(&x).unwrap();
        for (name, v) in want {
            assert_relative_eq!(
                f.get(name).unwrap(),
                v,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn wrong_length_is_contract_error() {
        assert!(matches!(stat_features(&[1.0; 9]), Err(Error::Contract(_))));
        assert!(matches!(stat_features(&[1.0; 11]), Err(Error::Contract(_))));
        let mut x = [1.0; 10];
        x[3] = f64::NAN;
        assert!(matches!(stat_features(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_denominators_are_zero() {
        // mean 0 with spread: coeff_variance would divide by zero
        let x = [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let f = stat_features(&x).unwrap();
        assert_eq!(f.get("coeff_variance").unwrap(), 0.0);
        assert_eq!(f.get("coeff_range").unwrap(), 0.0);
        assert_eq!(f.get("coeff_iqr").unwrap(), 0.0);
        assert!(f.values().iter().all(|v| v.is_finite()));
    }

    fn window(hr: f64, spo2: f64) -> Window {
        let samples: Vec<ZonedSample> = (0..10)
            .map(|i| ZonedSample {
                timestamp: 4.0 * i as f64,
                spo2: spo2 + (i % 3) as f64,
                hr: hr + i as f64,
                zone: Zone::new(2).unwrap(),
            })
            .collect();
        Window {
            subject_id: "s".into(),
            index: 0,
            samples,
            rep_zone: Zone::new(2).unwrap(),
        }
    }

    #[test]
    fn matrix_shapes() {
        let w = window(120.0, 95.0);
        let m = build_matrix(std::slice::from_ref(&w), Modality::Hr).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (1, 22));
        assert_eq!(m.column_names[0], "hr_mean");
        assert_eq!(m.column_names[21], "rep_zone");
        assert_eq!(m.rows[0].values[21], 2.0);

        let m = build_matrix(std::slice::from_ref(&w), Modality::HrSpo2).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (1, 43));
        assert_eq!(m.column_names[21], "spo2_mean");
        assert_eq!(m.rows[0].values[0], 124.5);

        let m = build_matrix(&[w.clone(), w], Modality::Spo2).unwrap();
        assert_eq!(m.rows[0].values, m.rows[1].values);
        assert!(matches!(
            build_matrix(&[], Modality::Hr),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let mut m =
            build_matrix(&[window(120.0, 95.0), window(80.0, 97.0)], Modality::HrSpo2).unwrap();
        m.rows[1].label = Some(Label::Imposter);
        m.rows[1].window_idx = 1;
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("subject_id,window_idx,label,hr_mean,"));
        assert_eq!(FeatureMatrix::read_csv(buf.as_slice()).unwrap(), m);
    }

    fn near(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn values() -> impl Strategy<Value = Vec<f64>> {
        (
            40.0..180.0f64,
            0.5..10.0f64,
            prop::collection::vec(-1.0..1.0f64, WINDOW_LEN),
        )
            .prop_map(|(base, spread, u)| u.iter().map(|v| base + spread * v).collect())
    }

    proptest! {
        #[test]
        fn shift_moves_location_only(x in values(), c in -20.0..20.0f64) {
            let f = stat_features(&x).unwrap();
            let g = stat_features(&x.iter().map(|v| v + c).collect::<Vec<_>>()).unwrap();
            for name in ["std", "variance", "range", "iqr", "mean_abs_dev", "median_abs_dev", "skewness", "kurtosis"] {
                prop_assert!(near(g.get(name).unwrap(), f.get(name).unwrap(), 1e-7), "{name}");
            }
            for name in ["mean", "median", "q1", "q3", "max"] {
                prop_assert!(near(g.get(name).unwrap(), f.get(name).unwrap() + c, 1e-12), "{name}");
            }
        }

        #[test]
        fn positive_scale(x in values(), c in 0.1..10.0f64) {
            let f = stat_features(&x).unwrap();
            let g = stat_features(&x.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
            for name in ["mean", "median", "std", "range", "q1", "q3", "max", "iqr", "mean_abs_dev", "median_abs_dev"] {
                prop_assert!(near(g.get(name).unwrap(), c * f.get(name).unwrap(), 1e-10), "{name}");
            }
            for name in ["variance", "energy"] {
                prop_assert!(near(g.get(name).unwrap(), c * c * f.get(name).unwrap(), 1e-10), "{name}");
            }
            for name in ["coeff_variance", "coeff_range", "coeff_iqr", "snr", "skewness", "kurtosis"] {
                prop_assert!(near(g.get(name).unwrap(), f.get(name).unwrap(), 1e-9), "{name}");
            }
        }
    }
}
