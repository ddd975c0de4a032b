//! Raw loops behind the differentiable ops.
//!
//! Everything here works on flat row-major slices. Each output element is
//! produced by a fixed sequence of operations, so results are bit-for-bit
//! reproducible regardless of how callers schedule work.

#![allow(clippy::needless_range_loop)]

use super::real::Real;

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad.0 - self.kh) / self.stride.0 + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad.1 - self.kw) / self.stride.1 + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == (1, 1) && self.pad == (0, 0)
    }

    /// Output rows `oh` for which kernel row `ki` lands inside the input.
    fn valid_range(len_in: usize, len_out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
        // Need 0 <= o*stride + k - pad < len_in.
        let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
        let hi = if len_in + pad > k {
            ((len_in + pad - k - 1) / stride + 1).min(len_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let out_plane = ho * wo;
    let in_plane = g.h * g.w;
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * in_plane..(b + 1) * g.c_in * in_plane];
        let ob = &mut out[b * g.c_out * out_plane..(b + 1) * g.c_out * out_plane];
        for co in 0..g.c_out {
            let orow = &mut ob[co * out_plane..(co + 1) * out_plane];
            let b0 = bias.map_or(T::zero(), |bs| bs[co]);
            orow.iter_mut().for_each(|o| *o = b0);
            if g.is_pointwise() {
                for ci in 0..g.c_in {
                    let wv = w[co * g.c_in + ci];
                    let xrow = &xb[ci * in_plane..(ci + 1) * in_plane];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o = *o + wv * xv;
                    }
                }
                continue;
            }
            for ci in 0..g.c_in {
                let xp = &xb[ci * in_plane..(ci + 1) * in_plane];
                for ki in 0..g.kh {
                    let (oh0, oh1) = ConvGeom::valid_range(g.h, ho, ki, g.stride.0, g.pad.0);
                    for kj in 0..g.kw {
                        let wv = w[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                        let (ow0, ow1) = ConvGeom::valid_range(g.w, wo, kj, g.stride.1, g.pad.1);
                        for oh in oh0..oh1 {
                            let ih = oh * g.stride.0 + ki - g.pad.0;
                            let xr = &xp[ih * g.w..(ih + 1) * g.w];
                            let or = &mut orow[oh * wo..(oh + 1) * wo];
                            if g.stride.1 == 1 {
                                let off = ow0 + kj - g.pad.1;
                                for (o, &xv) in or[ow0..ow1].iter_mut().zip(&xr[off..off + (ow1 - ow0)]) {
                                    *o = *o + wv * xv;
                                }
                            } else {
                                for ow in ow0..ow1 {
                                    let iw = ow * g.stride.1 + kj - g.pad.1;
                                    or[ow] = or[ow] + wv * xr[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of a convolution.
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let out_plane = ho * wo;
    let in_plane = g.h * g.w;

    if let Some(db) = db {
        for co in 0..g.c_out {
            let mut acc = T::zero();
            for b in 0..g.batch {
                let off = (b * g.c_out + co) * out_plane;
                acc = acc + T::sum_slice(&dy[off..off + out_plane]);
            }
            db[co] = db[co] + acc;
        }
    }

    if let Some(dw) = dw {
        for co in 0..g.c_out {
            for ci in 0..g.c_in {
                for ki in 0..g.kh {
                    let (oh0, oh1) = ConvGeom::valid_range(g.h, ho, ki, g.stride.0, g.pad.0);
                    for kj in 0..g.kw {
                        let (ow0, ow1) = ConvGeom::valid_range(g.w, wo, kj, g.stride.1, g.pad.1);
                        let mut acc = T::zero();
                        for b in 0..g.batch {
                            let dyp = &dy[(b * g.c_out + co) * out_plane..][..out_plane];
                            let xp = &x[(b * g.c_in + ci) * in_plane..][..in_plane];
                            if g.is_pointwise() {
                                acc = acc + T::dot(dyp, xp);
                                continue;
                            }
                            for oh in oh0..oh1 {
                                let ih = oh * g.stride.0 + ki - g.pad.0;
                                if g.stride.1 == 1 {
                                    let off = ow0 + kj - g.pad.1;
                                    let n = ow1 - ow0;
                                    acc = acc
                                        + T::dot(
                                            &dyp[oh * wo + ow0..oh * wo + ow1],
                                            &xp[ih * g.w + off..ih * g.w + off + n],
                                        );
                                } else {
                                    for ow in ow0..ow1 {
                                        let iw = ow * g.stride.1 + kj - g.pad.1;
                                        acc = acc + dyp[oh * wo + ow] * xp[ih * g.w + iw];
                                    }
                                }
                            }
                        }
                        let idx = ((co * g.c_in + ci) * g.kh + ki) * g.kw + kj;
                        dw[idx] = dw[idx] + acc;
                    }
                }
            }
        }
    }

    if let Some(dx) = dx {
        for b in 0..g.batch {
            for ci in 0..g.c_in {
                let dxp = &mut dx[(b * g.c_in + ci) * in_plane..][..in_plane];
                for co in 0..g.c_out {
                    let dyp = &dy[(b * g.c_out + co) * out_plane..][..out_plane];
                    if g.is_pointwise() {
                        let wv = w[co * g.c_in + ci];
                        for (d, &gy) in dxp.iter_mut().zip(dyp) {
                            *d = *d + wv * gy;
                        }
                        continue;
                    }
                    for ki in 0..g.kh {
                        let (oh0, oh1) = ConvGeom::valid_range(g.h, ho, ki, g.stride.0, g.pad.0);
                        for kj in 0..g.kw {
                            let wv = w[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                            let (ow0, ow1) = ConvGeom::valid_range(g.w, wo, kj, g.stride.1, g.pad.1);
                            for oh in oh0..oh1 {
                                let ih = oh * g.stride.0 + ki - g.pad.0;
                                if g.stride.1 == 1 {
                                    let off = ih * g.w + ow0 + kj - g.pad.1;
                                    let n = ow1 - ow0;
                                    for (d, &gy) in dxp[off..off + n].iter_mut().zip(&dyp[oh * wo + ow0..oh * wo + ow1]) {
                                        *d = *d + wv * gy;
                                    }
                                } else {
                                    for ow in ow0..ow1 {
                                        let iw = ow * g.stride.1 + kj - g.pad.1;
                                        let d = &mut dxp[ih * g.w + iw];
                                        *d = *d + wv * dyp[oh * wo + ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[M,N] = a[M,K] · b[K,N]` for one batch entry.
pub fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if T::EXACT_REDUCTIONS {
        let bt = transpose2(b, k, n);
        for i in 0..m {
            let ar = &a[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = T::dot(ar, &bt[j * k..(j + 1) * k]);
            }
        }
    } else {
        out.iter_mut().for_each(|o| *o = T::zero());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o = *o + av * bv;
                }
            }
        }
    }
}

/// Accumulates `da += dc · bᵀ` and `db += aᵀ · dc` for one batch entry.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Real>(
    a: &[T],
    b: &[T],
    dc: &[T],
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
    m: usize,
    k: usize,
    n: usize,
) {
    if let Some(da) = da {
        for i in 0..m {
            let dr = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                da[i * k + p] = da[i * k + p] + T::dot(dr, &b[p * n..(p + 1) * n]);
            }
        }
    }
    if let Some(db) = db {
        if T::EXACT_REDUCTIONS {
            let at = transpose2(a, m, k);
            let dct = transpose2(dc, m, n);
            for p in 0..k {
                for j in 0..n {
                    db[p * n + j] = db[p * n + j] + T::dot(&at[p * m..(p + 1) * m], &dct[j * m..(j + 1) * m]);
                }
            }
        } else {
            for i in 0..m {
                let dr = &dc[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    for (d, &g) in db[p * n..(p + 1) * n].iter_mut().zip(dr) {
                        *d = *d + av * g;
                    }
                }
            }
        }
    }
}

fn transpose2<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}
