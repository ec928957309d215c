use std::path::{Path, PathBuf};

use super::frame::{list_sequence, read_pgm, Frame, FrameMeta};
use crate::error::{Error, Result};
use crate::geometry::CameraId;

pub type FrameIter<'a> = Box<dyn Iterator<Item = Result<Frame>> + Send + 'a>;

/// Where the two camera sequences come from.
pub trait FrameSource: Sync {
    /// Frames of one camera, in index order.
    fn frames(&self, camera: CameraId) -> Result<FrameIter<'_>>;

    fn frame_count(&self, camera: CameraId) -> Result<usize>;
}

/// PGM sequences on disk, one directory per camera (may be the same directory).
pub struct DirectorySource {
    dirs: [PathBuf; 2],
    lists: [Vec<(FrameMeta, PathBuf)>; 2],
}

impl DirectorySource {
    pub fn open(dir1: &Path, dir2: &Path) -> Result<Self> {
        let l1 = list_sequence(dir1, CameraId::One)?;
        let l2 = list_sequence(dir2, CameraId::Two)?;
        for (list, dir, cam) in [(&l1, dir1, 1), (&l2, dir2, 2)] {
            if list.is_empty() {
                return Err(Error::Format {
                    what: "frame sequence",
                    detail: format!("no camera-{cam} frames in {}", dir.display()),
                });
            }
        }
        Ok(Self { dirs: [dir1.to_path_buf(), dir2.to_path_buf()], lists: [l1, l2] })
    }

    pub fn dir(&self, camera: CameraId) -> &Path {
        &self.dirs[camera.number() as usize - 1]
    }

    pub fn metas(&self, camera: CameraId) -> Vec<FrameMeta> {
        self.lists[camera.number() as usize - 1].iter().map(|(m, _)| *m).collect()
    }
}

impl FrameSource for DirectorySource {
    fn frames(&self, camera: CameraId) -> Result<FrameIter<'_>> {
        let list = &self.lists[camera.number() as usize - 1];
        Ok(Box::new(list.iter().map(|(meta, path)| read_pgm(path, *meta))))
    }

    fn frame_count(&self, camera: CameraId) -> Result<usize> {
        Ok(self.lists[camera.number() as usize - 1].len())
    }
}

/// Frames held in memory; mainly for tests and bindings.
pub struct MemorySource {
    pub cam1: Vec<Frame>,
    pub cam2: Vec<Frame>,
}

impl FrameSource for MemorySource {
    fn frames(&self, camera: CameraId) -> Result<FrameIter<'_>> {
        let v = match camera {
            CameraId::One => &self.cam1,
            CameraId::Two => &self.cam2,
        };
        Ok(Box::new(v.iter().cloned().map(Ok)))
    }

    fn frame_count(&self, camera: CameraId) -> Result<usize> {
        Ok(match camera {
            CameraId::One => self.cam1.len(),
            CameraId::Two => self.cam2.len(),
        })
    }
}
