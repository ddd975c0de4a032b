//! Skeleton captures: parsing, length normalization, input modes, tuple
//! partitioning and synthetic data.

mod dataset;
mod modes;
pub mod ntu;
mod sequence;
pub mod sttd;
mod synthetic;
mod tuples;

pub use dataset::{batch_tensor, load_dir, prepare, Split, XSUB_TRAIN_SUBJECTS};
pub use modes::{to_bone_mode, to_motion_mode, DataMode, SkeletonTopology, NTU25_PARENTS};
pub use ntu::{parse_ntu_name, parse_skeleton_file, to_skeleton_text, MAX_PERSONS};
pub use sequence::{CaptureInfo, SkeletonSequence, COORDS};
pub use sttd::{read_sttd, write_sttd};
pub use synthetic::{class_gap, make_synthetic_dataset};
pub use tuples::{check_tuple_len, partition_tuples, replay_indices, replay_pad, unpartition, TupleTensor};
