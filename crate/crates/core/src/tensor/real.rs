//! Scalar element types.
//!
//! Training runs in `f32`; gradient checks and reproducibility runs use `f64`.
//! In `f64` every reduction whose operand order depends on a data axis (batch
//! norm statistics, matrix contractions) is correctly rounded, so the result
//! does not depend on the order the terms arrive in.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

/// On-disk element tag used by checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element type usable by the tape.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const DTYPE: DType;

    /// Whether reductions are correctly rounded (order independent).
    const EXACT_REDUCTIONS: bool;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Sum of a slice.
    fn sum_slice(xs: &[Self]) -> Self;

    /// Inner product of two equal-length slices.
    fn dot(a: &[Self], b: &[Self]) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;
    const EXACT_REDUCTIONS: bool = false;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn sum_slice(xs: &[Self]) -> Self {
        xs.iter().map(|&x| x as f64).sum::<f64>() as f32
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        // Eight independent lanes so the loop vectorises; the lane order is
        // fixed, so the result is still deterministic.
        let mut acc = [0f32; 8];
        let chunks = a.len() / 8;
        for c in 0..chunks {
            let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
            for l in 0..8 {
                acc[l] += xa[l] * xb[l];
            }
        }
        let mut tail = 0f32;
        for i in chunks * 8..a.len() {
            tail += a[i] * b[i];
        }
        ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;
    const EXACT_REDUCTIONS: bool = true;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn sum_slice(xs: &[Self]) -> Self {
        fsum(xs.iter().copied())
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        fsum(a.iter().zip(b).map(|(x, y)| x * y))
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Correctly rounded sum of `f64` values (Shewchuk's non-overlapping
/// partials with a final half-way correction). Non-finite inputs fall back
/// to plain summation so infinities and NaNs propagate as usual.
pub fn fsum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut partials: SmallVec<[f64; 16]> = SmallVec::new();
    let mut special = 0.0f64;
    let mut has_special = false;
    for mut x in iter {
        if !x.is_finite() {
            special += x;
            has_special = true;
            continue;
        }
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            // Intermediate overflow; give up on exactness.
            special += x;
            has_special = true;
            partials.truncate(i);
            continue;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if has_special {
        return special + partials.iter().sum::<f64>();
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push the
    // residual past the half-way point.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}
