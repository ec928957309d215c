//! Frame sequences, black-frame synchronization, background removal and 2D bubble detection.

mod background;
mod detect;
mod frame;
mod source;
mod sync;

pub use background::{
    for_each_with_background, median_background, remove_background, window_start, SlidingMedian, Undistorter,
    DEFAULT_WINDOW,
};
pub use detect::{
    convex_hull, detect_bubbles, hull_gap, otsu_threshold, polygon_perimeter, write_detections, BBox, BubbleDetection,
    DetectParams,
};
pub use frame::{
    decode_pgm, frame_file_name, list_sequence, parse_frame_file_name, read_pgm, write_pgm, Frame, FrameMeta,
};
pub use source::{DirectorySource, FrameIter, FrameSource, MemorySource};
pub use sync::{
    detect_black_frames, is_black_frame, synchronize, DropEvent, StereoPair, SyncResult, TimedSequence,
    BLACK_THRESHOLD,
};
