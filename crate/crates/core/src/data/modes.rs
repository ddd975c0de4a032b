use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sequence::{SkeletonSequence, COORDS};

/// Parent map of a skeleton forest. Roots are their own parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SkeletonTopology {
    parent: Vec<usize>,
}

/// Standard 25-joint NTU skeleton, zero-based. Joint 20 (spine) is the root.
pub const NTU25_PARENTS: [usize; 25] = [
    1, 20, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 20, 22, 7, 24, 11,
];

impl SkeletonTopology {
    pub fn new(parent: Vec<usize>) -> Result<Self> {
        let v0 = parent.len();
        if v0 == 0 {
            return Err(Error::Config("topology has no joints".into()));
        }
        if let Some((v, &p)) = parent.iter().enumerate().find(|(_, &p)| p >= v0) {
            return Err(Error::Config(format!("joint {v} has parent {p}, outside 0..{v0}")));
        }
        for start in 0..v0 {
            let mut v = start;
            for _ in 0..v0 {
                if parent[v] == v {
                    break;
                }
                v = parent[v];
            }
            if parent[v] != v {
                return Err(Error::Config(format!("parent map has a cycle through joint {start}")));
            }
        }
        Ok(Self { parent })
    }

    pub fn ntu25() -> Self {
        Self::new(NTU25_PARENTS.to_vec()).expect("valid")
    }

    /// Joints `0 - 1 - ... - (v0-1)` rooted at 0.
    pub fn chain(v0: usize) -> Self {
        Self::new((0..v0).map(|v| v.saturating_sub(1)).collect()).expect("valid")
    }

    /// Topology for `v0` joints when no file is given.
    pub fn default_for(v0: usize) -> Self {
        if v0 == 25 {
            Self::ntu25()
        } else {
            Self::chain(v0)
        }
    }

    /// Reads a JSON array of parent indices.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn joints(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, v: usize) -> usize {
        self.parent[v]
    }

    pub fn is_root(&self, v: usize) -> bool {
        self.parent[v] == v
    }
}

impl TryFrom<Vec<usize>> for SkeletonTopology {
    type Error = Error;

    fn try_from(parent: Vec<usize>) -> Result<Self> {
        Self::new(parent)
    }
}

impl From<SkeletonTopology> for Vec<usize> {
    fn from(t: SkeletonTopology) -> Self {
        t.parent
    }
}

/// Input representation fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    #[default]
    Joint,
    Bone,
    Motion,
}

impl DataMode {
    pub const ALL: [DataMode; 3] = [DataMode::Joint, DataMode::Bone, DataMode::Motion];

    pub fn name(self) -> &'static str {
        match self {
            DataMode::Joint => "joint",
            DataMode::Bone => "bone",
            DataMode::Motion => "motion",
        }
    }

    pub fn apply(self, seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
        match self {
            DataMode::Joint => Ok(seq.clone()),
            DataMode::Bone => to_bone_mode(seq, topo),
            DataMode::Motion => Ok(to_motion_mode(seq)),
        }
    }
}

impl std::fmt::Display for DataMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(DataMode::Joint),
            "bone" => Ok(DataMode::Bone),
            "motion" => Ok(DataMode::Motion),
            _ => Err(Error::Config(format!("unknown mode `{s}` (expected joint, bone or motion)"))),
        }
    }
}

/// Joint position minus parent position; roots become zero.
pub fn to_bone_mode(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    if topo.joints() != seq.joints() {
        return Err(Error::Config(format!(
            "topology has {} joints, sequence has {}",
            topo.joints(),
            seq.joints()
        )));
    }
    let mut out = seq.clone();
    for c in 0..COORDS {
        for t in 0..seq.frames() {
            for v in 0..seq.joints() {
                let p = topo.parent(v);
                for m in 0..seq.persons() {
                    out.set(c, t, v, m, seq.get(c, t, v, m) - seq.get(c, t, p, m));
                }
            }
        }
    }
    Ok(out)
}

/// Forward frame difference; the last frame is zero.
pub fn to_motion_mode(seq: &SkeletonSequence) -> SkeletonSequence {
    let mut out = seq.clone();
    let last = seq.frames() - 1;
    for c in 0..COORDS {
        for t in 0..seq.frames() {
            for v in 0..seq.joints() {
                for m in 0..seq.persons() {
                    let d = if t < last {
                        seq.get(c, t + 1, v, m) - seq.get(c, t, v, m)
                    } else {
                        0.0
                    };
                    out.set(c, t, v, m, d);
                }
            }
        }
    }
    out
}
