//! Heart-rate zones and fixed-length windows.
//!
//! Zones 1 to 5 cover 50-100% of the subject's maximum heart rate in 10%
//! bands; zone 0 holds everything below 50%. Each band is half-open `[lo, hi)`
//! except zone 5, which also absorbs readings above the maximum.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SampleSeries;

/// Samples per window (40 s at the nominal 4 s cadence).
pub const WINDOW_LEN: usize = 10;

/// Largest gap between successive samples that a window may span.
pub const DEFAULT_GAP_TOLERANCE_S: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Zone(u8);

impl Zone {
    pub const MAX: u8 = 5;

    pub fn new(z: u8) -> Option<Zone> {
        (z <= Self::MAX).then_some(Zone(z))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Zone> {
        (0..=Self::MAX).map(Zone)
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZonedSample {
    pub timestamp: f64,
    pub spo2: f64,
    pub hr: f64,
    pub zone: Zone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub subject_id: String,
    pub index: usize,
    pub samples: Vec<ZonedSample>,
    pub rep_zone: Zone,
}

impl Window {
    pub fn hr(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.hr).collect()
    }

    pub fn spo2(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.spo2).collect()
    }

    pub fn t_start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.timestamp)
    }

    pub fn t_end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.timestamp)
    }
}

/// Maps a heart rate to its zone relative to `max_hr` (which must be positive).
pub fn assign_zone(hr: f64, max_hr: f64) -> Zone {
    debug_assert!(max_hr > 0.0);
    let r = hr / max_hr;
    let z = if r < 0.5 {
        0
    } else if r < 0.6 {
        1
    } else if r < 0.7 {
        2
    } else if r < 0.8 {
        3
    } else if r < 0.9 {
        4
    } else {
        5
    };
    Zone(z)
}

/// Most frequent zone; ties go to the lowest zone.
pub fn majority_zone(zones: &[Zone]) -> Zone {
    let mut counts = [0usize; Zone::MAX as usize + 1];
    for z in zones {
        counts[z.0 as usize] += 1;
    }
    let mut best = 0;
    for (z, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = z;
        }
    }
    Zone(best as u8)
}

pub fn zone_series(series: &SampleSeries, max_hr: f64) -> Vec<ZonedSample> {
    series
        .samples
        .iter()
        .map(|s| ZonedSample {
            timestamp: s.timestamp,
            spo2: s.spo2,
            hr: s.hr,
            zone: assign_zone(s.hr, max_hr),
        })
        .collect()
}

/// Greedy left-to-right split into non-overlapping runs of [`WINDOW_LEN`]
/// samples. A gap larger than `gap_tolerance` restarts the run in progress;
/// a short tail is dropped.
pub fn segment(series: &SampleSeries, max_hr: f64, gap_tolerance: f64) -> Result<Vec<Window>> {
    if max_hr <= 0.0 {
        return Err(Error::Contract(format!(
            "max_hr must be positive, got {max_hr}"
        )));
    }
    let zoned = zone_series(series, max_hr);
    let mut windows = Vec::new();
    let mut current: Vec<ZonedSample> = Vec::with_capacity(WINDOW_LEN);

    for s in zoned {
        if let Some(prev) = current.last() {
            if s.timestamp - prev.timestamp > gap_tolerance {
                current.clear();
            }
        }
        current.push(s);
        if current.len() == WINDOW_LEN {
            let zones: Vec<Zone> = current.iter().map(|s| s.zone).collect();
            windows.push(Window {
                subject_id: series.subject_id.clone(),
                index: windows.len(),
                rep_zone: majority_zone(&zones),
                samples: std::mem::replace(&mut current, Vec::with_capacity(WINDOW_LEN)),
            });
        }
    }

    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "subject {}: no gap-free run of {WINDOW_LEN} samples",
            series.subject_id
        )));
    }
    Ok(windows)
}

/// Debug dump: `subject_id,window_idx,rep_zone,t_start,t_end`.
pub fn write_window_dump<W: Write>(writer: W, windows: &[Window]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "window_idx", "rep_zone", "t_start", "t_end"])?;
    for win in windows {
        w.write_record([
            win.subject_id.clone(),
            win.index.to_string(),
            win.rep_zone.to_string(),
            win.t_start().to_string(),
            win.t_end().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Sample;
    use proptest::prelude::*;

    fn zones(v: &[u8]) -> Vec<Zone> {
        v.iter().map(|&z| Zone(z)).collect()
    }

    fn series(points: &[(f64, f64)]) -> SampleSeries {
        SampleSeries {
            subject_id: "s".into(),
            samples: points
                .iter()
                .map(|&(t, hr)| Sample {
                    timestamp: t,
                    spo2: 96.0,
                    hr,
                })
                .collect(),
        }
    }

    #[test]
    fn zone_examples() {
        assert_eq!(assign_zone(130.0, 200.0), Zone(2));
        assert_eq!(assign_zone(95.0, 200.0), Zone(0));
        assert_eq!(assign_zone(200.0, 200.0), Zone(5));
        assert_eq!(assign_zone(230.0, 200.0), Zone(5));
    }

    #[test]
    fn zone_boundaries_are_half_open() {
        assert_eq!(assign_zone(100.0, 200.0), Zone(1));
        assert_eq!(assign_zone(120.0, 200.0), Zone(2));
        assert_eq!(assign_zone(140.0, 200.0), Zone(3));
        assert_eq!(assign_zone(160.0, 200.0), Zone(4));
        assert_eq!(assign_zone(180.0, 200.0), Zone(5));
        assert_eq!(assign_zone(179.999, 200.0), Zone(4));
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            majority_zone(&zones(&[2, 2, 2, 2, 2, 3, 3, 3, 3, 3])),
            Zone(2)
        );
        assert_eq!(
            majority_zone(&zones(&[1, 1, 1, 1, 1, 1, 1, 1, 1, 5])),
            Zone(1)
        );
        assert_eq!(
            majority_zone(&zones(&[0, 0, 0, 1, 1, 1, 1, 2, 2, 2])),
            Zone(1)
        );
    }

    #[test]
    fn segment_drops_tail() {
        let pts: Vec<_> = (0..25).map(|i| (4.0 * i as f64, 70.0)).collect();
        let w = segment(&series(&pts), 200.0, DEFAULT_GAP_TOLERANCE_S).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].t_start(), 0.0);
        assert_eq!(w[1].t_start(), 40.0);
        assert_eq!(w[1].t_end(), 76.0);
        assert_eq!(w[1].index, 1);
    }

    #[test]
    fn segment_gap_restarts() {
        let mut pts: Vec<_> = (0..5).map(|i| (4.0 * i as f64, 70.0)).collect();
        pts.extend((0..5).map(|i| (76.0 + 4.0 * i as f64, 70.0)));
        let err = segment(&series(&pts), 200.0, DEFAULT_GAP_TOLERANCE_S).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));

        // a gap in the middle of a longer stream only costs the partial run
        let mut pts: Vec<_> = (0..5).map(|i| (4.0 * i as f64, 70.0)).collect();
        pts.extend((0..10).map(|i| (100.0 + 4.0 * i as f64, 70.0)));
        let w = segment(&series(&pts), 200.0, DEFAULT_GAP_TOLERANCE_S).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].t_start(), 100.0);
    }

    #[test]
    fn segment_rep_zone() {
        let pts: Vec<_> = (0..10).map(|i| (4.0 * i as f64, 130.0)).collect();
        let w = segment(&series(&pts), 200.0, DEFAULT_GAP_TOLERANCE_S).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].rep_zone, Zone(2));
    }

    #[test]
    fn window_dump_format() {
        let pts: Vec<_> = (0..10).map(|i| (4.0 * i as f64, 130.0)).collect();
        let w = segment(&series(&pts), 200.0, DEFAULT_GAP_TOLERANCE_S).unwrap();
        let mut buf = Vec::new();
        write_window_dump(&mut buf, &w).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "subject_id,window_idx,rep_zone,t_start,t_end\ns,0,2,0,36\n"
        );
    }

    proptest! {
        #[test]
        fn zone_monotone(a in 0.0f64..300.0, b in 0.0f64..300.0, max in 100.0f64..250.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(assign_zone(lo, max) <= assign_zone(hi, max));
        }

        #[test]
        fn majority_is_a_member(v in prop::collection::vec(0u8..=5, WINDOW_LEN)) {
            let z = zones(&v);
            let m = majority_zone(&z);
            prop_assert!(z.contains(&m));
            let count = |x: Zone| z.iter().filter(|&&y| y == x).count();
            for other in Zone::all() {
                prop_assert!(count(other) < count(m) || (count(other) == count(m) && other >= m));
            }
        }

        #[test]
        fn windows_disjoint_ordered_contiguous(
            steps in prop::collection::vec(prop_oneof![8 => Just(4.0f64), 1 => Just(5.5), 1 => Just(30.0)], 10..200),
            hrs in prop::collection::vec(40.0f64..200.0, 200),
        ) {
            let mut t = 0.0;
            let pts: Vec<_> = steps.iter().enumerate().map(|(i, dt)| { t += dt; (t, hrs[i]) }).collect();
            if let Ok(ws) = segment(&series(&pts), 190.0, DEFAULT_GAP_TOLERANCE_S) {
                let mut last_end = f64::NEG_INFINITY;
                for w in &ws {
                    prop_assert_eq!(w.samples.len(), WINDOW_LEN);
                    prop_assert!(w.t_start() > last_end);
                    last_end = w.t_end();
                    for pair in w.samples.windows(2) {
                        prop_assert!(pair[1].timestamp - pair[0].timestamp <= DEFAULT_GAP_TOLERANCE_S);
                    }
                    let zs: Vec<Zone> = w.samples.iter().map(|s| s.zone).collect();
                    prop_assert_eq!(w.rep_zone, majority_zone(&zs));
                }
            }
        }
    }
}
