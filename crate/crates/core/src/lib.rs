//! Skeleton action recognition with self-attention over the joints of short
//! runs of consecutive frames, built on a small reverse-mode autodiff runtime.

pub mod data;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
