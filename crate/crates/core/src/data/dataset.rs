use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::modes::{DataMode, SkeletonTopology};
use super::sequence::{CaptureInfo, SkeletonSequence, COORDS};
use super::sttd::{read_sttd, STTD_EXTENSION};
use super::tuples::replay_pad;

/// Training subjects of the cross-subject protocol.
pub const XSUB_TRAIN_SUBJECTS: [u32; 20] = [1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    XSub,
    XView,
    XSet,
}

impl Split {
    pub fn is_train(self, info: &CaptureInfo) -> bool {
        match self {
            Split::XSub => XSUB_TRAIN_SUBJECTS.contains(&info.subject_id),
            Split::XView => info.camera_id == 2 || info.camera_id == 3,
            Split::XSet => info.setup_id.is_multiple_of(2),
        }
    }

    /// `(train, eval)` partition preserving input order.
    pub fn partition(self, seqs: Vec<SkeletonSequence>) -> (Vec<SkeletonSequence>, Vec<SkeletonSequence>) {
        seqs.into_iter().partition(|s| self.is_train(&s.info))
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x-sub" | "xsub" => Ok(Split::XSub),
            "x-view" | "xview" => Ok(Split::XView),
            "x-set" | "xset" => Ok(Split::XSet),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected x-sub, x-view or x-set)"))),
        }
    }
}

/// Pads to `t0` frames, then derives `mode`.
pub fn prepare(seq: &SkeletonSequence, t0: usize, mode: DataMode, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    mode.apply(&replay_pad(seq, t0)?, topo)
}

/// Stacks equally shaped sequences into `[B, 3, T, V0, M]`.
pub fn batch_tensor<T: Real>(seqs: &[&SkeletonSequence]) -> Result<Tensor<T>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::invalid("batch_tensor", "empty batch"))?;
    let dims = (first.frames(), first.joints(), first.persons());
    let mut data = Vec::with_capacity(seqs.len() * first.coords().len());
    for s in seqs {
        if (s.frames(), s.joints(), s.persons()) != dims {
            return Err(Error::shape(
                "batch_tensor",
                "sequence [T, V0, M]",
                format!("{dims:?}"),
                format!("{:?}", (s.frames(), s.joints(), s.persons())),
            ));
        }
        data.extend(s.coords().iter().map(|&v| T::of(v)));
    }
    Tensor::new(vec![seqs.len(), COORDS, dims.0, dims.1, dims.2], data)
}

/// All `.sttd` files directly under `dir`, in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == STTD_EXTENSION))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_sttd(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info(subject_id: u32, camera_id: u32, setup_id: u32) -> CaptureInfo {
        CaptureInfo {
            subject_id,
            camera_id,
            setup_id,
        }
    }

    #[test]
    fn split_rules() {
        assert!(Split::XSub.is_train(&info(1, 1, 1)));
        assert!(!Split::XSub.is_train(&info(3, 1, 1)));
        assert!(Split::XView.is_train(&info(3, 2, 1)));
        assert!(!Split::XView.is_train(&info(1, 1, 1)));
        assert!(Split::XSet.is_train(&info(3, 1, 2)));
        assert!(!Split::XSet.is_train(&info(3, 1, 17)));
        assert_eq!("x-view".parse::<Split>().unwrap(), Split::XView);
    }

    #[test]
    fn batch_layout() {
        let mut a = SkeletonSequence::zeros(2, 3, 2, 0).unwrap();
        a.set(2, 1, 0, 1, 5.0);
        let b = SkeletonSequence::zeros(2, 3, 2, 1).unwrap();
        let t = batch_tensor::<f32>(&[&b, &a]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2, 3, 2]);
        assert_eq!(t.at(&[1, 2, 1, 0, 1]), 5.0);
        let c = SkeletonSequence::zeros(3, 3, 2, 0).unwrap();
        assert!(batch_tensor::<f64>(&[&a, &c]).is_err());
    }

    #[test]
    fn prepare_pads_before_mode() {
        let vals: Vec<f64> = (0..3 * 2).map(f64::from).collect();
        let s = SkeletonSequence::from_coords(vals, 2, 1, 1, 0).unwrap();
        let topo = SkeletonTopology::chain(1);
        let m = prepare(&s, 4, DataMode::Motion, &topo).unwrap();
        // frames 0,1,0,1 differenced, last frame zero
        assert_eq!(m.coords(), &[1.0, -1.0, 1.0, 0.0, 1.0, -1.0, 1.0, 0.0, 1.0, -1.0, 1.0, 0.0]);
    }
}
