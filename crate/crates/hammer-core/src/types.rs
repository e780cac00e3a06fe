//! Small domain types shared across modules.

use crate::error::{Error, Result};

/// Inclusive frame span `[start, end]` with `end > start`.
///
/// Spans of a single frame are not representable; every constructor
/// rejects `end <= start` as a data error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    start: usize,
    end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end <= start {
            return Err(Error::input(alloc::format!(
                "segment end {end} must be strictly greater than start {start}"
            )));
        }
        Ok(Segment { start, end })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    /// Number of frames covered, counting both endpoints.
    pub fn len_frames(&self) -> usize {
        self.end - self.start + 1
    }
}

/// Per-frame boundary label: begin, end, or outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beo {
    B,
    E,
    O,
}

impl Beo {
    /// Class index used by the frame-wise 3-way loss variant.
    pub fn class_index(self) -> usize {
        match self {
            Beo::B => 0,
            Beo::E => 1,
            Beo::O => 2,
        }
    }
}
