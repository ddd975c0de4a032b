use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate channels per joint (x, y, z).
pub const COORDS: usize = 3;

/// Capture metadata used for subject / camera / setup splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CaptureInfo {
    pub subject_id: u32,
    pub camera_id: u32,
    pub setup_id: u32,
}

/// Raw 3-D joint coordinates of one recording.
///
/// Layout is `[3, frames, joints, persons]`, row-major. A person that is not
/// present in a frame is stored as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    coords: Vec<f64>,
    frames: usize,
    joints: usize,
    persons: usize,
    pub label: usize,
    pub info: CaptureInfo,
}

impl SkeletonSequence {
    pub fn zeros(frames: usize, joints: usize, persons: usize, label: usize) -> Result<Self> {
        Self::from_coords(vec![0.0; COORDS * frames * joints * persons], frames, joints, persons, label)
    }

    pub fn from_coords(coords: Vec<f64>, frames: usize, joints: usize, persons: usize, label: usize) -> Result<Self> {
        if frames == 0 || joints == 0 || persons == 0 {
            return Err(Error::Format(format!(
                "sequence needs at least one frame, joint and person (got {frames}, {joints}, {persons})"
            )));
        }
        let n = COORDS * frames * joints * persons;
        if coords.len() != n {
            return Err(Error::Format(format!("expected {n} coordinates, got {}", coords.len())));
        }
        Ok(Self {
            coords,
            frames,
            joints,
            persons,
            label,
            info: CaptureInfo::default(),
        })
    }

    pub fn with_info(mut self, info: CaptureInfo) -> Self {
        self.info = info;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn persons(&self) -> usize {
        self.persons
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    #[inline]
    fn idx(&self, c: usize, t: usize, v: usize, m: usize) -> usize {
        ((c * self.frames + t) * self.joints + v) * self.persons + m
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, v: usize, m: usize) -> f64 {
        self.coords[self.idx(c, t, v, m)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, v: usize, m: usize, value: f64) {
        let i = self.idx(c, t, v, m);
        self.coords[i] = value;
    }

    /// Joint position `[x, y, z]`.
    pub fn joint(&self, t: usize, v: usize, m: usize) -> [f64; 3] {
        [self.get(0, t, v, m), self.get(1, t, v, m), self.get(2, t, v, m)]
    }

    pub fn set_joint(&mut self, t: usize, v: usize, m: usize, p: [f64; 3]) {
        for (c, value) in p.into_iter().enumerate() {
            self.set(c, t, v, m, value);
        }
    }

    /// True when person `m` is zero in every frame.
    pub fn is_person_empty(&self, m: usize) -> bool {
        (0..COORDS).all(|c| (0..self.frames).all(|t| (0..self.joints).all(|v| self.get(c, t, v, m) == 0.0)))
    }

    /// Single-person sequence holding person `m`.
    pub fn person(&self, m: usize) -> Self {
        let mut out = Self::zeros(self.frames, self.joints, 1, self.label).expect("non-empty");
        out.info = self.info;
        for c in 0..COORDS {
            for t in 0..self.frames {
                for v in 0..self.joints {
                    out.set(c, t, v, 0, self.get(c, t, v, m));
                }
            }
        }
        out
    }

    /// Rebuilds the sequence with frames taken from `src_frames`.
    pub fn select_frames(&self, src_frames: &[usize]) -> Self {
        let mut out = Self::zeros(src_frames.len(), self.joints, self.persons, self.label).expect("non-empty");
        out.info = self.info;
        for c in 0..COORDS {
            for (t, &s) in src_frames.iter().enumerate() {
                let from = self.idx(c, s, 0, 0);
                let to = out.idx(c, t, 0, 0);
                let len = self.joints * self.persons;
                out.coords[to..to + len].copy_from_slice(&self.coords[from..from + len]);
            }
        }
        out
    }
}
