use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::HistogramParams;
use crate::error::{Error, Result};
use crate::imaging::DropEvent;
use crate::tracking::CountedBubble;

/// Fixed-width histogram; bin `k` covers `[origin + k·width, origin + (k+1)·width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub origin: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins aligned to multiples of `bin_width`, spanning the data.
    pub fn build(values: &[f64], bin_width: f64) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Self { origin: 0.0, bin_width, counts: Vec::new() };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = (lo / bin_width).floor() as i64;
        let last = (hi / bin_width).floor() as i64;
        let mut counts = vec![0u64; (last - first + 1) as usize];
        for v in finite {
            let k = ((v / bin_width).floor() as i64 - first).clamp(0, counts.len() as i64 - 1);
            counts[k as usize] += 1;
        }
        Self { origin: first as f64 * bin_width, bin_width, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, unit: &str) -> std::io::Result<()> {
        writeln!(w, "lower_{unit},upper_{unit},count")?;
        for (k, c) in self.counts.iter().enumerate() {
            let lo = self.origin + k as f64 * self.bin_width;
            writeln!(w, "{},{},{}", lo, lo + self.bin_width, c)?;
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Self { mean, std }
    }
}

/// Processing counters that explain the headline numbers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub frames: [usize; 2],
    pub black_frames: [usize; 2],
    pub pairs: usize,
    pub clock_offset_us: f64,
    pub clock_drift_us_per_s: f64,
    pub drops: Vec<DropEvent>,
    pub detections: [usize; 2],
    pub matched: usize,
    pub reconstruction_failures: usize,
    pub tracks: usize,
    /// Camera-1 frame indices where a reconstructed bubble came from a merged outline.
    pub merged_frames: Vec<u64>,
    pub self_calibration: Option<SelfCalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCalSummary {
    pub observations: usize,
    pub epipolar_before_px: f64,
    pub epipolar_after_px: f64,
    pub converged: bool,
}

/// Bubble-stream characterization. Volumes in ml, velocities in cm/s, diameters in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub start_time_us: i64,
    pub duration_s: f64,
    pub bubble_count: usize,
    pub total_volume_ml: f64,
    pub flow_rate_ml_s: f64,
    pub equivalent_diameter_mm: Summary,
    pub diameter_histogram_mm: Histogram,
    pub volume_histogram_ml: Histogram,
    pub rise_velocity_cm_s: Summary,
    pub velocity_histogram_cm_s: Histogram,
    pub merged_bubbles: usize,
    pub bubbles: Vec<CountedBubble>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

/// Counted bubbles plus the observed time span; the input of `aggregate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountedDump {
    #[serde(default)]
    pub start_time_us: i64,
    pub duration_s: f64,
    pub bubbles: Vec<CountedBubble>,
}

/// Totals, means, spreads and histograms over the counted bubbles.
pub fn aggregate(counted: &[CountedBubble], duration_s: f64, bins: &HistogramParams) -> Result<StreamReport> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Config(format!("observed duration must be positive, got {duration_s}")));
    }
    bins.validate()?;
    let d: Vec<f64> = counted.iter().map(|b| b.equivalent_diameter_mm).collect();
    let vol_ml: Vec<f64> = counted.iter().map(|b| b.volume_mm3 / 1000.0).collect();
    let vel: Vec<f64> = counted.iter().map(|b| b.rise_velocity_cm_s).collect();
    let total_volume_ml = vol_ml.iter().sum::<f64>();
    Ok(StreamReport {
        start_time_us: 0,
        duration_s,
        bubble_count: counted.len(),
        total_volume_ml,
        flow_rate_ml_s: total_volume_ml / duration_s,
        equivalent_diameter_mm: Summary::of(&d),
        diameter_histogram_mm: Histogram::build(&d, bins.diameter_bin_mm),
        volume_histogram_ml: Histogram::build(&vol_ml, bins.volume_bin_ml),
        rise_velocity_cm_s: Summary::of(&vel),
        velocity_histogram_cm_s: Histogram::build(&vel, bins.velocity_bin_cm_s),
        merged_bubbles: counted.iter().filter(|b| b.merged).count(),
        bubbles: counted.to_vec(),
        diagnostics: None,
    })
}

impl StreamReport {
    pub fn write_bubble_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "track_id,frame_index,crossing_time_s,equivalent_diameter_mm,volume_ml,rise_velocity_cm_s,x_mm,y_mm,z_mm,merged"
        )?;
        for b in &self.bubbles {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                b.track_id,
                b.frame_index,
                b.crossing_time_s,
                b.equivalent_diameter_mm,
                b.volume_mm3 / 1000.0,
                b.rise_velocity_cm_s,
                b.center_mm[0],
                b.center_mm[1],
                b.center_mm[2],
                b.merged
            )?;
        }
        Ok(())
    }

    /// `report.json`, `bubbles.csv` and one CSV per histogram.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self)? + "\n";
        write_file(&dir.join("report.json"), json.as_bytes())?;
        let mut buf = Vec::new();
        self.write_bubble_csv(&mut buf).expect("write to memory");
        write_file(&dir.join("bubbles.csv"), &buf)?;
        for (name, h, unit) in [
            ("diameter_histogram.csv", &self.diameter_histogram_mm, "mm"),
            ("volume_histogram.csv", &self.volume_histogram_ml, "ml"),
            ("velocity_histogram.csv", &self.velocity_histogram_cm_s, "cm_s"),
        ] {
            let mut buf = Vec::new();
            h.write_csv(&mut buf, unit).expect("write to memory");
            write_file(&dir.join(name), &buf)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn bubble(id: u64, d: f64, vel: f64) -> CountedBubble {
        CountedBubble {
            track_id: id,
            frame_index: id * 10,
            crossing_time_s: id as f64,
            equivalent_diameter_mm: d,
            volume_mm3: PI / 6.0 * d * d * d,
            rise_velocity_cm_s: vel,
            center_mm: [0.0, 0.0, 300.0],
            merged: false,
        }
    }

    fn bins() -> HistogramParams {
        HistogramParams::default()
    }

    #[test]
    fn two_millimeter_bubble_volume() {
        let r = aggregate(&[bubble(1, 2.0, 25.0)], 1.0, &bins()).unwrap();
        assert!((r.total_volume_ml * 1000.0 - 4.18879).abs() < 1e-5);
        assert_eq!(r.bubble_count, 1);
        assert_eq!(r.equivalent_diameter_mm, Summary { mean: 2.0, std: 0.0 });
    }

    #[test]
    fn one_and_two_ml_over_three_seconds() {
        let d_of = |ml: f64| (6.0 * ml * 1000.0 / PI).cbrt();
        let r = aggregate(&[bubble(1, d_of(1.0), 20.0), bubble(2, d_of(2.0), 30.0)], 3.0, &bins()).unwrap();
        assert!((r.total_volume_ml - 3.0).abs() < 1e-12);
        assert!((r.flow_rate_ml_s - 1.0).abs() < 1e-12);
        assert!((r.rise_velocity_cm_s.mean - 25.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_gives_empty_report() {
        let r = aggregate(&[], 10.0, &bins()).unwrap();
        assert_eq!(r.bubble_count, 0);
        assert_eq!(r.flow_rate_ml_s, 0.0);
        assert!(r.diameter_histogram_mm.counts.is_empty() && r.velocity_histogram_cm_s.counts.is_empty());
        assert!(aggregate(&[], 0.0, &bins()).is_err());
    }

    #[test]
    fn histogram_bins_are_aligned() {
        let h = Histogram::build(&[5.1, 5.2, 5.26, 6.0], 0.25);
        assert_eq!(h.origin, 5.0);
        assert_eq!(h.counts, vec![2, 1, 0, 0, 1]);
        let mut out = Vec::new();
        h.write_csv(&mut out, "mm").unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("lower_mm,upper_mm,count\n5,5.25,2\n"));
    }

    #[test]
    fn report_schema_fixture() {
        // a stream of 370 bubbles totalling 40.33 ml over 62.4 s
        let d = (6.0 * 40.33 / 370.0 * 1000.0 / PI).cbrt();
        let bubbles: Vec<_> = (0..370).map(|i| bubble(i, d, 26.21)).collect();
        let r = aggregate(&bubbles, 62.4, &bins()).unwrap();
        assert!((r.total_volume_ml - 40.33).abs() < 1e-9);
        assert!((r.flow_rate_ml_s - 40.33 / 62.4).abs() < 1e-12);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in [
            "bubble_count",
            "total_volume_ml",
            "flow_rate_ml_s",
            "equivalent_diameter_mm",
            "diameter_histogram_mm",
            "volume_histogram_ml",
            "rise_velocity_cm_s",
            "velocity_histogram_cm_s",
            "bubbles",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["bubble_count"], 370);
        assert!(v["equivalent_diameter_mm"].get("mean").is_some() && v["equivalent_diameter_mm"].get("std").is_some());
    }

    proptest::proptest! {
        #[test]
        fn report_invariants(ds in proptest::collection::vec((1.0f64..12.0, 5.0f64..40.0), 0..60), dur in 0.5f64..500.0) {
            let counted: Vec<_> = ds.iter().enumerate().map(|(i, &(d, v))| bubble(i as u64, d, v)).collect();
            let r = aggregate(&counted, dur, &bins()).unwrap();
            proptest::prop_assert!((r.flow_rate_ml_s - r.total_volume_ml / dur).abs() <= 1e-9 * r.flow_rate_ml_s.abs().max(1e-300));
            proptest::prop_assert_eq!(r.diameter_histogram_mm.total(), r.bubble_count as u64);
            proptest::prop_assert_eq!(r.volume_histogram_ml.total(), r.bubble_count as u64);
            proptest::prop_assert_eq!(r.velocity_histogram_cm_s.total(), r.bubble_count as u64);
            let table_vol: f64 = r.bubbles.iter().map(|b| b.volume_mm3 / 1000.0).sum();
            proptest::prop_assert!((r.total_volume_ml - table_vol).abs() <= 1e-12 * table_vol.max(1.0));
            if !counted.is_empty() {
                let mean = r.bubbles.iter().map(|b| b.equivalent_diameter_mm).sum::<f64>() / counted.len() as f64;
                proptest::prop_assert!((r.equivalent_diameter_mm.mean - mean).abs() <= 1e-9 * mean);
            }
        }
    }
}
