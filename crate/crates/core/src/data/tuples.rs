use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::sequence::SkeletonSequence;

/// Frames of a `[C, T0, V0]` array grouped into `T0 / n` tuples of `n` frames,
/// each tuple flattened frame-major into `n * V0` joints.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleTensor<T: Real> {
    data: Tensor<T>,
    n: usize,
}

impl<T: Real> TupleTensor<T> {
    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<T> {
        self.data
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of tuples.
    pub fn tuples(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn joints_per_frame(&self) -> usize {
        self.data.shape()[2] / self.n
    }
}

/// Checks that `n` splits `t0` frames into whole tuples.
pub fn check_tuple_len(t0: usize, n: usize) -> Result<()> {
    if n == 0 || !t0.is_multiple_of(n) {
        return Err(Error::Config(format!(
            "tuple length n={n} must divide the sequence length T0={t0} (choose n from the divisors of {t0})"
        )));
    }
    Ok(())
}

/// `out[c, t, f*V0 + v] = x[c, t*n + f, v]`.
pub fn partition_tuples<T: Real>(x: &Tensor<T>, n: usize) -> Result<TupleTensor<T>> {
    let &[c, t0, v0] = x.shape() else {
        return Err(Error::invalid("partition_tuples", format!("expected [C, T0, V0], got {:?}", x.shape())));
    };
    check_tuple_len(t0, n)?;
    // frame-major flattening leaves the row-major buffer unchanged
    let data = x.clone().reshape(&[c, t0 / n, n * v0])?;
    Ok(TupleTensor { data, n })
}

/// Inverse of [`partition_tuples`].
pub fn unpartition<T: Real>(x: &TupleTensor<T>) -> Tensor<T> {
    let &[c, t, v] = x.data.shape() else {
        unreachable!("tuple tensors are rank 3")
    };
    x.data.clone().reshape(&[c, t * x.n, v / x.n]).expect("same element count")
}

/// Source frame for each of `t0` output frames: replay when short, uniform
/// subsampling when long.
pub fn replay_indices(t_raw: usize, t0: usize) -> Vec<usize> {
    if t_raw >= t0 {
        (0..t0).map(|i| i * t_raw / t0).collect()
    } else {
        (0..t0).map(|i| i % t_raw).collect()
    }
}

/// Brings a sequence to exactly `t0` frames.
pub fn replay_pad(seq: &SkeletonSequence, t0: usize) -> Result<SkeletonSequence> {
    if t0 == 0 {
        return Err(Error::Config("target length T0 must be positive".into()));
    }
    if seq.frames() == t0 {
        return Ok(seq.clone());
    }
    Ok(seq.select_frames(&replay_indices(seq.frames(), t0)))
}
