use std::collections::VecDeque;

use super::frame::Frame;
use crate::error::{Error, Result};
use crate::geometry::Intrinsics;

/// Default sliding-window length in frames.
pub const DEFAULT_WINDOW: usize = 301;

/// Per-pixel median over a multiset of frames, updated incrementally.
///
/// Each pixel keeps a 256-bin histogram, its current (lower) median and the
/// number of samples strictly below it. Adding or removing a frame moves each
/// median by as many bins as needed, so a sliding window costs O(pixels) per
/// step in the usual case where intensities change little.
pub struct SlidingMedian {
    len: usize,
    count: usize,
    /// `hist[value * len + pixel]`
    hist: Vec<u16>,
    median: Vec<u8>,
    below: Vec<u16>,
}

impl SlidingMedian {
    pub fn new(pixels: usize) -> Self {
        Self { len: pixels, count: 0, hist: vec![0; 256 * pixels], median: vec![0; pixels], below: vec![0; pixels] }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Lower median of the current samples, per pixel. All zero while empty.
    pub fn median(&self) -> &[u8] {
        &self.median
    }

    pub fn add(&mut self, pixels: &[u8]) {
        assert_eq!(pixels.len(), self.len);
        assert!(self.count < u16::MAX as usize, "window too long");
        self.count += 1;
        let k = (self.count - 1) / 2;
        for (p, &x) in pixels.iter().enumerate() {
            self.hist[x as usize * self.len + p] += 1;
            if x < self.median[p] {
                self.below[p] += 1;
            }
            self.rebalance(p, k);
        }
    }

    pub fn remove(&mut self, pixels: &[u8]) {
        assert_eq!(pixels.len(), self.len);
        assert!(self.count > 0);
        self.count -= 1;
        let k = self.count.saturating_sub(1) / 2;
        for (p, &x) in pixels.iter().enumerate() {
            self.hist[x as usize * self.len + p] -= 1;
            if x < self.median[p] {
                self.below[p] -= 1;
            }
            if self.count > 0 {
                self.rebalance(p, k);
            }
        }
        if self.count == 0 {
            self.median.fill(0);
            self.below.fill(0);
        }
    }

    /// Removes `old` and adds `new` in one pass; the window length is unchanged.
    pub fn replace(&mut self, old: &[u8], new: &[u8]) {
        assert!(old.len() == self.len && new.len() == self.len);
        assert!(self.count > 0);
        let k = (self.count - 1) / 2;
        for p in 0..self.len {
            let (o, n) = (old[p], new[p]);
            if o == n {
                continue;
            }
            self.hist[o as usize * self.len + p] -= 1;
            self.hist[n as usize * self.len + p] += 1;
            let m = self.median[p];
            if (o < m) == (n < m) && o != m && n != m {
                continue;
            }
            if o < m {
                self.below[p] -= 1;
            }
            if n < m {
                self.below[p] += 1;
            }
            self.rebalance(p, k);
        }
    }

    /// Restores `below ≤ k < below + hist[median]`.
    #[inline]
    fn rebalance(&mut self, p: usize, k: usize) {
        let mut m = self.median[p] as usize;
        let mut below = self.below[p] as usize;
        while below > k {
            m -= 1;
            below -= self.hist[m * self.len + p] as usize;
        }
        while below + self.hist[m * self.len + p] as usize <= k {
            below += self.hist[m * self.len + p] as usize;
            m += 1;
        }
        self.median[p] = m as u8;
        self.below[p] = below as u16;
    }
}

/// Per-pixel lower median of a set of equally sized frames.
pub fn median_background(window: &[Frame]) -> Result<Frame> {
    let first = window.first().ok_or_else(|| Error::DimensionMismatch("empty background window".into()))?;
    if let Some(bad) = window.iter().find(|f| !f.same_size(first)) {
        return Err(Error::DimensionMismatch(format!(
            "window mixes {}×{} and {}×{} frames",
            first.width, first.height, bad.width, bad.height
        )));
    }
    let k = (window.len() - 1) / 2;
    let mut column = vec![0u8; window.len()];
    let mut out = Frame::filled(first.meta, first.width, first.height, 0);
    for (p, o) in out.pixels.iter_mut().enumerate() {
        for (c, f) in column.iter_mut().zip(window) {
            *c = f.pixels[p];
        }
        *o = *column.select_nth_unstable(k).1;
    }
    Ok(out)
}

/// First frame of the window used for frame `i` of `n`: centered where possible,
/// pinned to the sequence ends otherwise.
pub fn window_start(i: usize, n: usize, window: usize) -> usize {
    let w = window.min(n);
    i.saturating_sub(window / 2).min(n - w)
}

/// Feeds every frame to `f` together with its sliding-window median background.
///
/// Frames are read once, in order, with at most `window` of them buffered. The
/// sequence length is discovered when the iterator ends, so the last `window / 2`
/// frames share the final window.
pub fn for_each_with_background<I, F>(frames: I, window: usize, mut f: F) -> Result<()>
where
    I: IntoIterator<Item = Result<Frame>>,
    F: FnMut(&Frame, &[u8]) -> Result<()>,
{
    if window == 0 {
        return Err(Error::Config("background window must be positive".into()));
    }
    let half = window / 2;
    let mut source = frames.into_iter();
    let mut median: Option<SlidingMedian> = None;
    let mut buf: VecDeque<Frame> = VecDeque::new();
    let mut buf_start = 0usize;
    let mut read_end = 0usize;
    let mut total: Option<usize> = None;
    let mut i = 0usize;
    loop {
        let want = (i + half + 1).max(window);
        while total.is_none() && read_end < want {
            match source.next() {
                Some(frame) => {
                    let frame = frame?;
                    if let Some(first) = buf.front() {
                        if !frame.same_size(first) {
                            return Err(Error::DimensionMismatch(format!(
                                "frame {} is {}×{}, sequence is {}×{}",
                                frame.meta.index, frame.width, frame.height, first.width, first.height
                            )));
                        }
                    }
                    let m = median.get_or_insert_with(|| SlidingMedian::new(frame.pixels.len()));
                    // drop the frame leaving the window in the same pass when possible
                    let start = if read_end >= window { read_end + 1 - window } else { 0 };
                    if start > buf_start && buf_start < i {
                        let old = buf.pop_front().expect("buffered");
                        m.replace(&old.pixels, &frame.pixels);
                        buf_start += 1;
                    } else {
                        m.add(&frame.pixels);
                    }
                    buf.push_back(frame);
                    read_end += 1;
                }
                None => total = Some(read_end),
            }
        }
        let n = total.unwrap_or(usize::MAX);
        if i >= n {
            return Ok(());
        }
        let s = if total.is_some() { window_start(i, n, window) } else { i.saturating_sub(half) };
        let m = median.as_mut().expect("at least one frame read");
        while buf_start < s {
            let old = buf.pop_front().expect("buffered");
            m.remove(&old.pixels);
            buf_start += 1;
        }
        f(&buf[i - buf_start], m.median())?;
        i += 1;
    }
}

/// Inverse lens mapping as a precomputed bilinear lookup: for every ideal pixel
/// the raw pixel it came from.
pub struct Undistorter {
    width: usize,
    height: usize,
    /// `None` when the intrinsics carry no distortion.
    map: Option<Vec<Sample>>,
}

#[derive(Clone, Copy)]
struct Sample {
    /// Top-left source pixel, or `u32::MAX` outside the raw image.
    origin: u32,
    /// Bilinear weights of the four neighbours in 1/65536, summing to 65536.
    w: [u32; 4],
}

const WEIGHT_ONE: f64 = 65536.0;

impl Sample {
    const OUTSIDE: Sample = Sample { origin: u32::MAX, w: [0; 4] };

    fn new(origin: usize, fx: f64, fy: f64) -> Self {
        let q = |x: f64| (x * WEIGHT_ONE) as u32;
        let (w01, w10, w11) = (q(fx * (1.0 - fy)), q((1.0 - fx) * fy), q(fx * fy));
        let w00 = WEIGHT_ONE as u32 - w01 - w10 - w11;
        Sample { origin: origin as u32, w: [w00, w01, w10, w11] }
    }
}

impl Undistorter {
    pub fn new(intrinsics: &Intrinsics, width: usize, height: usize) -> Self {
        if intrinsics.is_distortion_free() {
            return Self { width, height, map: None };
        }
        let mut map = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let raw = intrinsics.distort_pixel(nalgebra::Point2::new(u as f64, v as f64));
                let (x0, y0) = (raw.x.floor(), raw.y.floor());
                let inside = x0 >= 0.0 && y0 >= 0.0 && x0 + 1.0 < width as f64 && y0 + 1.0 < height as f64;
                let edge = (raw.x - (width - 1) as f64).abs() < 1e-9 || (raw.y - (height - 1) as f64).abs() < 1e-9;
                map.push(if inside || edge && raw.x >= 0.0 && raw.y >= 0.0 && raw.x <= (width - 1) as f64 && raw.y <= (height - 1) as f64 {
                    let (xi, yi) = ((x0 as usize).min(width - 2), (y0 as usize).min(height - 2));
                    Sample::new(yi * width + xi, raw.x - xi as f64, raw.y - yi as f64)
                } else {
                    Sample::OUTSIDE
                });
            }
        }
        Self { width, height, map: Some(map) }
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_none()
    }

    /// Resamples a raw image into ideal pixel coordinates. Pixels that map outside
    /// the raw image become 0.
    pub fn apply(&self, raw: &[u8], out: &mut [u8]) {
        assert!(raw.len() == self.width * self.height && out.len() == raw.len());
        let Some(map) = &self.map else {
            out.copy_from_slice(raw);
            return;
        };
        let w = self.width;
        for (o, s) in out.iter_mut().zip(map) {
            if s.origin == u32::MAX {
                *o = 0;
                continue;
            }
            let i = s.origin as usize;
            let acc = raw[i] as u32 * s.w[0] + raw[i + 1] as u32 * s.w[1] + raw[i + w] as u32 * s.w[2] + raw[i + w + 1] as u32 * s.w[3];
            *o = ((acc + (1 << 15)) >> 16) as u8;
        }
    }
}

/// Absolute difference to the background, resampled into ideal pixels.
pub fn remove_background(frame: &Frame, background: &[u8], undistorter: &Undistorter) -> Result<Frame> {
    if background.len() != frame.pixels.len() || undistorter.width != frame.width || undistorter.height != frame.height {
        return Err(Error::DimensionMismatch(format!(
            "frame {}×{} against background of {} pixels and undistortion map {}×{}",
            frame.width,
            frame.height,
            background.len(),
            undistorter.width,
            undistorter.height
        )));
    }
    let diff: Vec<u8> = frame.pixels.iter().zip(background).map(|(&a, &b)| a.abs_diff(b)).collect();
    let mut out = Frame::filled(frame.meta, frame.width, frame.height, 0);
    undistorter.apply(&diff, &mut out.pixels);
    Ok(out)
}
