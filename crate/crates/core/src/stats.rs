//! Welch two-sample t-tests of mean SpO2 between subjects, zone by zone.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::{Zone, ZonedSample};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// ln Γ(x) for x > 0 (Lanczos, g = 7, nine terms; ~1e-15 relative).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b), for a, b > 0 and x in [0, 1].
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t cumulative distribution with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * regularized_incomplete_beta(dof / (dof + t * t), 0.5 * dof, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability P(|T| >= |t|).
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(dof / (dof + t * t), 0.5 * dof, 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_stat: f64,
    pub dof: f64,
    pub p_value: f64,
    pub reject: bool,
}

fn mean_and_sample_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.iter().all(|v| *v == x[0]) {
        return (x[0], 0.0);
    }
    let ss = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

/// Welch's unequal-variance t-test, two-sided.
///
/// With both sample variances zero the test degenerates: equal means give
/// t = 0 and p = 1, different means give an infinite t and p = 0.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(format!(
            "welch_t_test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_and_sample_var(a);
    let (mb, vb) = mean_and_sample_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;

    let (t_stat, dof, p_value) = if se2 == 0.0 {
        let dof = na + nb - 2.0;
        if ma == mb {
            (0.0, dof, 1.0)
        } else {
            let t = if ma > mb {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            (t, dof, 0.0)
        }
    } else {
        let t = (ma - mb) / se2.sqrt();
        let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        (t, dof, student_t_two_sided_p(t, dof))
    };
    Ok(TTestResult {
        t_stat,
        dof,
        p_value,
        reject: p_value < alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    OneVsRest,
    Pairwise,
}

impl fmt::Display for ComparisonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComparisonMode::OneVsRest => "one_vs_rest",
            ComparisonMode::Pairwise => "pairwise",
        })
    }
}

impl FromStr for ComparisonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_vs_rest" => Ok(ComparisonMode::OneVsRest),
            "pairwise" => Ok(ComparisonMode::Pairwise),
            other => Err(Error::Validation(format!(
                "unknown comparison mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneCounts {
    pub comparisons: usize,
    pub rejections: usize,
}

/// Rejection fractions per zone and overall. Zones without a single feasible
/// comparison are absent and do not count toward `overall`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub mode: ComparisonMode,
    pub alpha: f64,
    pub per_zone: BTreeMap<Zone, f64>,
    pub overall: f64,
    pub counts: BTreeMap<Zone, ZoneCounts>,
}

impl RejectionSummary {
    /// Plot data: `zone,comparisons,rejections,fraction`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["zone", "comparisons", "rejections", "fraction"])?;
        for (zone, c) in &self.counts {
            w.write_record([
                zone.to_string(),
                c.comparisons.to_string(),
                c.rejections.to_string(),
                self.per_zone[zone].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// SpO2 values of one subject, grouped by zone.
fn spo2_by_zone(samples: &[ZonedSample]) -> BTreeMap<Zone, Vec<f64>> {
    let mut out: BTreeMap<Zone, Vec<f64>> = BTreeMap::new();
    for s in samples {
        out.entry(s.zone).or_default().push(s.spo2);
    }
    out
}

/// Runs every per-zone comparison across `subjects` (id, zoned samples).
///
/// `OneVsRest` tests each subject against the pooled samples of all others in
/// the same zone; `Pairwise` tests every unordered pair. Comparisons where
/// either side has fewer than 2 samples are skipped.
pub fn rejection_summary(
    subjects: &[(String, Vec<ZonedSample>)],
    mode: ComparisonMode,
    alpha: f64,
) -> Result<RejectionSummary> {
    if subjects.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let grouped: Vec<BTreeMap<Zone, Vec<f64>>> =
        subjects.iter().map(|(_, s)| spo2_by_zone(s)).collect();
    let empty: Vec<f64> = Vec::new();
    let get = |i: usize, z: Zone| grouped[i].get(&z).unwrap_or(&empty);

    let mut counts: BTreeMap<Zone, ZoneCounts> = BTreeMap::new();
    for zone in Zone::all() {
        let mut c = ZoneCounts::default();
        match mode {
            ComparisonMode::OneVsRest => {
                for i in 0..subjects.len() {
                    let own = get(i, zone);
                    let rest: Vec<f64> = (0..subjects.len())
                        .filter(|&j| j != i)
                        .flat_map(|j| get(j, zone).iter().copied())
                        .collect();
                    if own.len() >= 2 && rest.len() >= 2 {
                        c.comparisons += 1;
                        c.rejections += usize::from(welch_t_test(own, &rest, alpha)?.reject);
                    }
                }
            }
            ComparisonMode::Pairwise => {
                for i in 0..subjects.len() {
                    for j in i + 1..subjects.len() {
                        let (a, b) = (get(i, zone), get(j, zone));
                        if a.len() >= 2 && b.len() >= 2 {
                            c.comparisons += 1;
                            c.rejections += usize::from(welch_t_test(a, b, alpha)?.reject);
                        }
                    }
                }
            }
        }
        if c.comparisons > 0 {
            counts.insert(zone, c);
        }
    }

    if counts.is_empty() {
        let lacking: Vec<String> = Zone::all().map(|z| z.to_string()).collect();
        return Err(Error::InsufficientData(format!(
            "no zone has two subjects with >= 2 SpO2 samples (zones lacking data: {})",
            lacking.join(", ")
        )));
    }

    let per_zone = counts
        .iter()
        .map(|(z, c)| (*z, c.rejections as f64 / c.comparisons as f64))
        .collect();
    let (total, rejected) = counts
        .values()
        .fold((0, 0), |(t, r), c| (t + c.comparisons, r + c.rejections));
    Ok(RejectionSummary {
        mode,
        alpha,
        per_zone,
        overall: rejected as f64 / total as f64,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(ln_gamma(0.1), 2.252_712_651_734_206, epsilon = 1e-13);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1-x)^b
        for &x in &[0.01, 0.2, 0.5, 0.77, 0.99] {
            assert_abs_diff_eq!(regularized_incomplete_beta(x, 1.0, 1.0), x, epsilon = 1e-14);
            assert_abs_diff_eq!(
                regularized_incomplete_beta(x, 3.5, 1.0),
                x.powf(3.5),
                epsilon = 1e-13
            );
            assert_abs_diff_eq!(
                regularized_incomplete_beta(x, 1.0, 2.5),
                1.0 - (1.0 - x).powf(2.5),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn t_cdf_against_cauchy() {
        // dof = 1 is the Cauchy distribution
        for &t in &[-10.0, -1.0, 0.0, 0.3, 2.0, 50.0] {
            let want = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert_abs_diff_eq!(student_t_cdf(t, 1.0), want, epsilon = 1e-13);
        }
    }

    #[test]
    fn welch_examples() {
        let r = welch_t_test(&[95.0, 96.0, 97.0, 96.0], &[95.0, 96.0, 97.0, 96.0], 0.05).unwrap();
        assert_eq!((r.t_stat, r.p_value, r.reject), (0.0, 1.0, false));

        let r = welch_t_test(
            &[94.0, 95.0, 96.0, 97.0, 98.0],
            &[90.0, 91.0, 92.0, 93.0, 94.0],
            0.05,
        )
        .unwrap();
        assert_abs_diff_eq!(r.t_stat, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.dof, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 0.003949772803445322, epsilon = 1e-10);
        assert!(r.reject);

        let r = welch_t_test(&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], 0.05).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.reject);
        assert_eq!(r.t_stat, f64::NEG_INFINITY);

        let r = welch_t_test(&[3.0, 3.0], &[3.0, 3.0, 3.0], 0.05).unwrap();
        assert_eq!((r.t_stat, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn welch_too_small() {
        assert!(matches!(
            welch_t_test(&[1.0], &[1.0, 2.0], 0.05),
            Err(Error::Contract(_))
        ));
    }

    fn zs(zone: u8, values: &[f64]) -> Vec<ZonedSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| ZonedSample {
                timestamp: 4.0 * i as f64,
                spo2: v,
                hr: 70.0,
                zone: Zone::new(zone).unwrap(),
            })
            .collect()
    }

    #[test]
    fn identical_subjects_never_rejected() {
        let vals = [95.0, 96.0, 97.0, 96.0, 95.5];
        let subjects = vec![
            ("a".to_string(), zs(1, &vals)),
            ("b".to_string(), zs(1, &vals)),
        ];
        for mode in [ComparisonMode::Pairwise, ComparisonMode::OneVsRest] {
            let s = rejection_summary(&subjects, mode, 0.05).unwrap();
            assert_eq!(s.overall, 0.0);
            assert_eq!(s.per_zone.len(), 1);
            assert_eq!(s.per_zone[&Zone::new(1).unwrap()], 0.0);
        }
    }

    #[test]
    fn separated_subjects_rejected_and_sparse_zones_skipped() {
        let mut a = zs(2, &[95.0, 95.2, 94.9, 95.1]);
        a.extend(zs(4, &[93.0])); // one sample: zone 4 skipped
        let b = zs(2, &[98.0, 98.1, 97.9, 98.2]);
        let subjects = vec![("a".to_string(), a), ("b".to_string(), b)];
        let s = rejection_summary(&subjects, ComparisonMode::Pairwise, 0.05).unwrap();
        assert_eq!(s.overall, 1.0);
        assert_eq!(s.counts.len(), 1);
        assert_eq!(
            s.counts[&Zone::new(2).unwrap()],
            ZoneCounts {
                comparisons: 1,
                rejections: 1
            }
        );

        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["mode"], "pairwise");
        assert_eq!(json["per_zone"]["2"], 1.0);
    }

    #[test]
    fn no_feasible_comparison() {
        let subjects = vec![
            ("a".to_string(), zs(1, &[95.0])),
            ("b".to_string(), zs(2, &[96.0, 97.0])),
        ];
        let err = rejection_summary(&subjects, ComparisonMode::Pairwise, 0.05).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    proptest! {
        #[test]
        fn swap_negates_t_keeps_p(
            a in prop::collection::vec(80.0f64..100.0, 2..20),
            b in prop::collection::vec(80.0f64..100.0, 2..20),
        ) {
            let ab = welch_t_test(&a, &b, 0.05).unwrap();
            let ba = welch_t_test(&b, &a, 0.05).unwrap();
            prop_assert_eq!(ab.t_stat, -ba.t_stat);
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab.p_value));
            prop_assert_eq!(ab.reject, ab.p_value < 0.05);
        }

        #[test]
        fn larger_gap_never_raises_p(
            a in prop::collection::vec(-1.0f64..1.0, 3..15),
            b in prop::collection::vec(-1.0f64..1.0, 3..15),
            gap in 0.0f64..3.0,
            extra in 0.0f64..3.0,
        ) {
            let shift = |d: f64| a.iter().map(|v| v + d).collect::<Vec<_>>();
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            // start from a configuration where a is already above b
            let base = (mb - ma).max(0.0) + gap;
            let p1 = welch_t_test(&shift(base), &b, 0.05).unwrap().p_value;
            let p2 = welch_t_test(&shift(base + extra), &b, 0.05).unwrap().p_value;
            prop_assert!(p2 <= p1 + 1e-12);
        }
    }
}
