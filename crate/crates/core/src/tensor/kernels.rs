//! Raw slice kernels behind the tape ops.
//!
//! Parallel kernels split work so that every output element is produced by
//! exactly one task with a fixed summation order; results are bit-identical
//! regardless of thread count.

use rayon::prelude::*;

use super::Real;

/// Geometry of a 1-D convolution or pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub length: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1dGeometry {
    pub fn out_length(&self) -> usize {
        (self.length + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

pub fn conv1d_forward<T: Real>(x: &[T], w: &[T], g: &Conv1dGeometry) -> Vec<T> {
    let lout = g.out_length();
    let in_sample = g.in_channels * g.length;
    let out_sample = g.out_channels * lout;
    let mut out = vec![T::zero(); g.batch * out_sample];
    out.par_chunks_mut(out_sample)
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = &x[n * in_sample..(n + 1) * in_sample];
            for co in 0..g.out_channels {
                let out_row = &mut out_n[co * lout..(co + 1) * lout];
                for ci in 0..g.in_channels {
                    let x_row = &x_n[ci * g.length..(ci + 1) * g.length];
                    let w_row = &w[(co * g.in_channels + ci) * g.kernel..][..g.kernel];
                    for (k, &wk) in w_row.iter().enumerate() {
                        let (lo_start, lo_end) = valid_range(g, k, lout);
                        for lo in lo_start..lo_end {
                            let li = lo * g.stride + k - g.padding;
                            out_row[lo] = out_row[lo] + wk * x_row[li];
                        }
                    }
                }
            }
        });
    out
}

pub fn conv1d_backward_input<T: Real>(grad_out: &[T], w: &[T], g: &Conv1dGeometry) -> Vec<T> {
    let lout = g.out_length();
    let in_sample = g.in_channels * g.length;
    let out_sample = g.out_channels * lout;
    let mut gx = vec![T::zero(); g.batch * in_sample];
    gx.par_chunks_mut(in_sample)
        .enumerate()
        .for_each(|(n, gx_n)| {
            let go_n = &grad_out[n * out_sample..(n + 1) * out_sample];
            for co in 0..g.out_channels {
                let go_row = &go_n[co * lout..(co + 1) * lout];
                for ci in 0..g.in_channels {
                    let gx_row = &mut gx_n[ci * g.length..(ci + 1) * g.length];
                    let w_row = &w[(co * g.in_channels + ci) * g.kernel..][..g.kernel];
                    for (k, &wk) in w_row.iter().enumerate() {
                        let (lo_start, lo_end) = valid_range(g, k, lout);
                        for lo in lo_start..lo_end {
                            let li = lo * g.stride + k - g.padding;
                            gx_row[li] = gx_row[li] + wk * go_row[lo];
                        }
                    }
                }
            }
        });
    gx
}

pub fn conv1d_backward_weight<T: Real>(grad_out: &[T], x: &[T], g: &Conv1dGeometry) -> Vec<T> {
    let lout = g.out_length();
    let in_sample = g.in_channels * g.length;
    let out_sample = g.out_channels * lout;
    let w_per_out = g.in_channels * g.kernel;
    let mut gw = vec![T::zero(); g.out_channels * w_per_out];
    gw.par_chunks_mut(w_per_out)
        .enumerate()
        .for_each(|(co, gw_co)| {
            for n in 0..g.batch {
                let go_row = &grad_out[n * out_sample + co * lout..][..lout];
                for ci in 0..g.in_channels {
                    let x_row = &x[n * in_sample + ci * g.length..][..g.length];
                    for k in 0..g.kernel {
                        let (lo_start, lo_end) = valid_range(g, k, lout);
                        let mut acc = T::zero();
                        for lo in lo_start..lo_end {
                            acc = acc + go_row[lo] * x_row[lo * g.stride + k - g.padding];
                        }
                        gw_co[ci * g.kernel + k] = gw_co[ci * g.kernel + k] + acc;
                    }
                }
            }
        });
    gw
}

/// Output positions `lo` for which tap `k` lands inside the unpadded input.
fn valid_range(g: &Conv1dGeometry, k: usize, lout: usize) -> (usize, usize) {
    // need 0 <= lo*stride + k - padding < length
    let start = if k >= g.padding {
        0
    } else {
        (g.padding - k).div_ceil(g.stride)
    };
    let end = if g.length + g.padding > k {
        ((g.length + g.padding - k - 1) / g.stride + 1).min(lout)
    } else {
        0
    };
    (start, end.max(start))
}

/// Max pooling over `[rows, length]` rows; out-of-range window positions are
/// ignored. Ties go to the lowest index. Returns values and argmax indices
/// into each row.
pub fn maxpool1d_forward<T: Real>(
    x: &[T],
    rows: usize,
    length: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Vec<T>, Vec<usize>) {
    let lout = (length + 2 * padding - kernel) / stride + 1;
    let mut out = Vec::with_capacity(rows * lout);
    let mut arg = Vec::with_capacity(rows * lout);
    for r in 0..rows {
        let row = &x[r * length..(r + 1) * length];
        for lo in 0..lout {
            let lo_pos = (lo * stride) as isize - padding as isize;
            let mut best: Option<(usize, T)> = None;
            for k in 0..kernel {
                let p = lo_pos + k as isize;
                if p < 0 || p as usize >= length {
                    continue;
                }
                let v = row[p as usize];
                match best {
                    Some((_, b)) if v <= b => {}
                    _ => best = Some((p as usize, v)),
                }
            }
            let (idx, v) = best.expect("pool window overlaps the input");
            out.push(v);
            arg.push(r * length + idx);
        }
    }
    (out, arg)
}

/// `y = x W^T + b` for `x: [n, f_in]`, `w: [f_out, f_in]`.
pub fn linear_forward<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, f_in: usize) -> Vec<T> {
    let f_out = b.len();
    let mut out = vec![T::zero(); n * f_out];
    out.par_chunks_mut(f_out).enumerate().for_each(|(i, row)| {
        let xi = &x[i * f_in..(i + 1) * f_in];
        for (o, slot) in row.iter_mut().enumerate() {
            let wo = &w[o * f_in..(o + 1) * f_in];
            *slot = dot(xi, wo) + b[o];
        }
    });
    out
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(l: usize, k: usize, stride: usize, padding: usize) -> Conv1dGeometry {
        Conv1dGeometry {
            batch: 1,
            in_channels: 1,
            length: l,
            out_channels: 1,
            kernel: k,
            stride,
            padding,
        }
    }

    #[test]
    fn valid_range_covers_padding() {
        let g = geom(5, 3, 2, 1);
        assert_eq!(g.out_length(), 3);
        // tap 0 hits input at 2*lo - 1: lo=1,2
        assert_eq!(valid_range(&g, 0, 3), (1, 3));
        assert_eq!(valid_range(&g, 1, 3), (0, 3));
        // tap 2 hits 2*lo + 1: lo = 0, 1
        assert_eq!(valid_range(&g, 2, 3), (0, 2));
    }

    #[test]
    fn maxpool_with_padding() {
        let (v, a) = maxpool1d_forward(&[1.0f64, 5.0, 2.0, 0.0], 1, 4, 3, 2, 1);
        assert_eq!(v, vec![5.0, 5.0]);
        assert_eq!(a, vec![1, 1]);
    }
}
