//! `.sttd` interchange files.
//!
//! ```text
//! header length   u32 LE
//! header          UTF-8 JSON object (see `Header`)
//! coords          f64 LE, layout [3, frames, joints, persons]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sequence::{CaptureInfo, SkeletonSequence, COORDS};

pub const STTD_VERSION: u32 = 1;
pub const STTD_EXTENSION: &str = "sttd";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    channels: usize,
    frames: usize,
    joints: usize,
    persons: usize,
    label: usize,
    subject_id: u32,
    camera_id: u32,
    setup_id: u32,
    dtype: String,
}

pub fn to_sttd_bytes(seq: &SkeletonSequence) -> Vec<u8> {
    let header = Header {
        version: STTD_VERSION,
        channels: COORDS,
        frames: seq.frames(),
        joints: seq.joints(),
        persons: seq.persons(),
        label: seq.label,
        subject_id: seq.info.subject_id,
        camera_id: seq.info.camera_id,
        setup_id: seq.info.setup_id,
        dtype: "f64".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(4 + json.len() + 8 * seq.coords().len());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in seq.coords() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_sttd_bytes(bytes: &[u8]) -> Result<SkeletonSequence> {
    let len = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| Error::Format("sttd: missing header length".into()))?;
    let json = bytes
        .get(4..4 + len)
        .ok_or_else(|| Error::Format("sttd: truncated header".into()))?;
    let h: Header = serde_json::from_slice(json)?;
    if h.version != STTD_VERSION {
        return Err(Error::Format(format!("sttd: unsupported version {}", h.version)));
    }
    if h.channels != COORDS || h.dtype != "f64" {
        return Err(Error::Format(format!(
            "sttd: expected 3 f64 channels, got {} {}",
            h.channels, h.dtype
        )));
    }
    let blob = &bytes[4 + len..];
    let n = COORDS * h.frames * h.joints * h.persons;
    if blob.len() != 8 * n {
        return Err(Error::Format(format!("sttd: expected {} coordinate bytes, found {}", 8 * n, blob.len())));
    }
    let coords = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(SkeletonSequence::from_coords(coords, h.frames, h.joints, h.persons, h.label)?.with_info(CaptureInfo {
        subject_id: h.subject_id,
        camera_id: h.camera_id,
        setup_id: h.setup_id,
    }))
}

pub fn write_sttd(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    std::fs::write(path, to_sttd_bytes(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_sttd(path: &Path) -> Result<SkeletonSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_sttd_bytes(&bytes)
}
