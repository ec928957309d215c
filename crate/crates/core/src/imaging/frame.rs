use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraId;

/// Identity and timing of a frame without its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameMeta {
    pub camera: CameraId,
    /// Per-camera counter of saved frames.
    pub index: u64,
    /// Camera clock, microseconds since the epoch.
    pub timestamp_us: i64,
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub meta: FrameMeta,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(meta: FrameMeta, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!("empty frame {width}×{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}×{height} frame",
                pixels.len()
            )));
        }
        Ok(Self { meta, width, height, pixels })
    }

    pub fn filled(meta: FrameMeta, width: usize, height: usize, value: u8) -> Self {
        Self { meta, width, height, pixels: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.pixels[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: u8) {
        self.pixels[v * self.width + u] = value;
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// `<camera_id>_<index:08d>_<timestamp_us:016d>.pgm`
pub fn frame_file_name(meta: &FrameMeta) -> String {
    format!("{}_{:08}_{:016}.pgm", meta.camera.number(), meta.index, meta.timestamp_us)
}

pub fn parse_frame_file_name(name: &str) -> Option<FrameMeta> {
    let stem = name.strip_suffix(".pgm")?;
    let mut parts = stem.split('_');
    let cam = parts.next()?;
    let index = parts.next()?;
    let ts = parts.next()?;
    if parts.next().is_some() || index.len() != 8 || ts.len() != 16 {
        return None;
    }
    Some(FrameMeta {
        camera: CameraId::from_number(cam.parse().ok()?)?,
        index: index.parse().ok()?,
        timestamp_us: ts.parse().ok()?,
    })
}

/// Frames of one camera found in `dir`, ordered by index.
pub fn list_sequence(dir: &Path, camera: CameraId) -> Result<Vec<(FrameMeta, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(meta) = name.to_str().and_then(parse_frame_file_name) else { continue };
        if meta.camera == camera {
            out.push((meta, entry.path()));
        }
    }
    out.sort_by_key(|(m, _)| m.index);
    for w in out.windows(2) {
        if w[1].0.timestamp_us <= w[0].0.timestamp_us {
            return Err(Error::Format {
                what: "frame sequence",
                detail: format!("timestamps not increasing at camera {} index {}", camera.number(), w[1].0.index),
            });
        }
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", frame.width, frame.height).map_err(|e| Error::io(path, e))?;
    w.write_all(&frame.pixels).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a binary 8-bit PGM. `meta` is attached as given.
pub fn read_pgm(path: &Path, meta: FrameMeta) -> Result<Frame> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, meta).map_err(|detail| Error::Format { what: "PGM", detail: format!("{}: {detail}", path.display()) })
}

pub fn decode_pgm(bytes: &[u8], meta: FrameMeta) -> std::result::Result<Frame, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let width: usize = token()?.parse().map_err(|_| "bad width")?;
    let height: usize = token()?.parse().map_err(|_| "bad height")?;
    let maxval: u32 = token()?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("only 8-bit PGM supported, maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).ok_or("missing raster")?;
    if data.len() < width * height {
        return Err(format!("raster has {} bytes, expected {}", data.len(), width * height));
    }
    Frame::new(meta, width, height, data[..width * height].to_vec()).map_err(|e| e.to_string())
}
