use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameMeta};
use crate::error::{Error, Result};
use crate::geometry::CameraId;

/// Frames whose sampled diagonal pixels are all below this value are black frames.
pub const BLACK_THRESHOLD: u8 = 8;

/// True when every pixel sampled along both image diagonals is `< BLACK_THRESHOLD`.
pub fn is_black_frame(frame: &Frame) -> bool {
    let (w, h) = (frame.width, frame.height);
    let n = w.max(h);
    (0..n).all(|s| {
        let (u, v) = if n == 1 { (0, 0) } else { (s * (w - 1) / (n - 1), s * (h - 1) / (n - 1)) };
        frame.get(u, v) < BLACK_THRESHOLD && frame.get(w - 1 - u, v) < BLACK_THRESHOLD
    })
}

/// Indices of the black frames in a sequence.
pub fn detect_black_frames<'a>(seq: impl IntoIterator<Item = &'a Frame>) -> Vec<u64> {
    seq.into_iter().filter(|f| is_black_frame(f)).map(|f| f.meta.index).collect()
}

/// Timing of one camera's sequence: every frame and which of them are black.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedSequence {
    pub frames: Vec<FrameMeta>,
    pub black: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereoPair {
    pub left: FrameMeta,
    pub right: FrameMeta,
    /// Camera-1 clock.
    pub pair_time_us: i64,
}

/// Frames missing from one camera's sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEvent {
    pub camera: CameraId,
    /// Last saved index before the gap.
    pub after_index: u64,
    pub missing: u64,
    /// Frame of the other camera that lost its partner, if it exists.
    pub counterpart_index: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub pairs: Vec<StereoPair>,
    /// Mean of `t2 − t1` over the black-frame anchors, µs.
    pub offset_us: f64,
    /// Linear clock drift between the anchors, µs per second.
    pub drift_us_per_s: f64,
    pub frame_interval_us: f64,
    pub anchors: usize,
    pub drops: Vec<DropEvent>,
    /// Index difference `i1 − i2` at each anchor; it only changes across a drop.
    pub counter_differences: Vec<i64>,
}

struct Anchor {
    t1: i64,
    offset: f64,
    counter_diff: i64,
}

fn median_interval(seqs: [&TimedSequence; 2]) -> Option<f64> {
    let mut d: Vec<i64> = seqs
        .iter()
        .flat_map(|s| s.frames.windows(2).map(|w| w[1].timestamp_us - w[0].timestamp_us))
        .collect();
    if d.is_empty() {
        return None;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable(mid);
    Some(*m as f64)
}

fn black_times(seq: &TimedSequence) -> Vec<FrameMeta> {
    let mut black = seq.black.clone();
    black.sort_unstable();
    seq.frames.iter().filter(|f| black.binary_search(&f.index).is_ok()).copied().collect()
}

fn nearest(sorted: &[i64], target: f64) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let pos = sorted.partition_point(|&t| (t as f64) < target);
    let mut best = None;
    for cand in [pos.wrapping_sub(1), pos] {
        if cand < sorted.len() {
            let d = (sorted[cand] as f64 - target).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((cand, d));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Pairs the frames of two independently clocked sequences.
///
/// Black frames of the two cameras are matched as mutual nearest neighbours in raw time,
/// which requires the clock offset to be below half the black-frame period. The offset is
/// interpolated linearly between those anchors so slow drift is followed. Every frame of
/// sequence 1 is paired with the sequence-2 frame nearest to its offset-corrected time;
/// pairs off by more than half a frame interval are dropped and each frame is used once.
pub fn synchronize(seq1: &TimedSequence, seq2: &TimedSequence) -> Result<SyncResult> {
    let b1 = black_times(seq1);
    let b2 = black_times(seq2);
    if b1.is_empty() || b2.is_empty() {
        return Err(Error::Unsynchronizable(format!(
            "black frames: {} in camera 1, {} in camera 2",
            b1.len(),
            b2.len()
        )));
    }
    let dt = median_interval([seq1, seq2])
        .ok_or_else(|| Error::Unsynchronizable("sequences too short to estimate the frame interval".into()))?;

    let bt1: Vec<i64> = b1.iter().map(|f| f.timestamp_us).collect();
    let bt2: Vec<i64> = b2.iter().map(|f| f.timestamp_us).collect();
    let mut anchors = Vec::new();
    for (i, f1) in b1.iter().enumerate() {
        let Some(j) = nearest(&bt2, f1.timestamp_us as f64) else { continue };
        if nearest(&bt1, bt2[j] as f64) == Some(i) {
            anchors.push(Anchor {
                t1: f1.timestamp_us,
                offset: (bt2[j] - f1.timestamp_us) as f64,
                counter_diff: f1.index as i64 - b2[j].index as i64,
            });
        }
    }
    if anchors.is_empty() {
        return Err(Error::Unsynchronizable("no black frame has a partner in the other camera".into()));
    }
    let offset_at = |t1: i64| -> f64 {
        let k = anchors.partition_point(|a| a.t1 <= t1);
        if k == 0 {
            anchors[0].offset
        } else if k == anchors.len() {
            anchors[k - 1].offset
        } else {
            let (a, b) = (&anchors[k - 1], &anchors[k]);
            let s = (t1 - a.t1) as f64 / (b.t1 - a.t1) as f64;
            a.offset + s * (b.offset - a.offset)
        }
    };

    let t2: Vec<i64> = seq2.frames.iter().map(|f| f.timestamp_us).collect();
    // best claim on every seq2 frame: (residual, seq1 position)
    let mut claims: Vec<Option<(f64, usize)>> = vec![None; t2.len()];
    for (i, f1) in seq1.frames.iter().enumerate() {
        let target = f1.timestamp_us as f64 + offset_at(f1.timestamp_us);
        let Some(j) = nearest(&t2, target) else { continue };
        let r = (t2[j] as f64 - target).abs();
        if r > dt / 2.0 {
            continue;
        }
        if claims[j].is_none_or(|(br, bi)| r < br || (r == br && i < bi)) {
            claims[j] = Some((r, i));
        }
    }
    let mut pairs: Vec<StereoPair> = claims
        .iter()
        .enumerate()
        .filter_map(|(j, c)| {
            c.map(|(_, i)| StereoPair {
                left: seq1.frames[i],
                right: seq2.frames[j],
                pair_time_us: seq1.frames[i].timestamp_us,
            })
        })
        .collect();
    pairs.sort_by_key(|p| p.left.index);

    let mut drops = Vec::new();
    for (camera, seq, other) in [(CameraId::One, seq1, seq2), (CameraId::Two, seq2, seq1)] {
        let other_t: Vec<i64> = other.frames.iter().map(|f| f.timestamp_us).collect();
        for w in seq.frames.windows(2) {
            let gap = (w[1].timestamp_us - w[0].timestamp_us) as f64;
            if gap > 1.5 * dt {
                let missing = ((gap / dt).round() as u64).saturating_sub(1).max(1);
                let expected = w[0].timestamp_us as f64 + dt;
                // map the missing frame's time into the other camera's clock
                let to_other = match camera {
                    CameraId::One => expected + offset_at(expected as i64),
                    CameraId::Two => expected - offset_at((expected - anchors[0].offset) as i64),
                };
                let counterpart_index = nearest(&other_t, to_other)
                    .filter(|&k| (other_t[k] as f64 - to_other).abs() <= dt / 2.0)
                    .map(|k| other.frames[k].index);
                drops.push(DropEvent { camera, after_index: w[0].index, missing, counterpart_index });
            }
        }
    }

    let offset_us = anchors.iter().map(|a| a.offset).sum::<f64>() / anchors.len() as f64;
    let drift_us_per_s = if anchors.len() >= 2 {
        let (a, b) = (&anchors[0], &anchors[anchors.len() - 1]);
        (b.offset - a.offset) / ((b.t1 - a.t1) as f64 * 1e-6)
    } else {
        0.0
    };
    Ok(SyncResult {
        pairs,
        offset_us,
        drift_us_per_s,
        frame_interval_us: dt,
        anchors: anchors.len(),
        drops,
        counter_differences: anchors.iter().map(|a| a.counter_diff).collect(),
    })
}
