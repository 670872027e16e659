//! Inner-loop numeric kernels shared by the tape operations.
//!
//! Determinism contract: every kernel computes each output element with a
//! fixed sequential reduction order, and parallelism only ever splits work
//! across *disjoint output regions*. Identical inputs therefore produce
//! bit-identical outputs regardless of thread count.

use super::Element;
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// Dot product with eight independent accumulators so LLVM can vectorize
/// the lanes. The lane split is fixed, so results are reproducible.
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let base = i * 8;
        for lane in 0..8 {
            acc[lane] = acc[lane] + a[base + lane] * b[base + lane];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    ((pairs[0] + pairs[2]) + (pairs[1] + pairs[3])) + tail
}

pub fn add_assign<T: Element>(out: &mut [T], rhs: &[T]) {
    debug_assert_eq!(out.len(), rhs.len());
    for (o, &r) in out.iter_mut().zip(rhs) {
        *o += r;
    }
}

pub fn axpy<T: Element>(alpha: T, x: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn matmul_nn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    // Pack bᵀ so each output element is a contiguous·contiguous dot.
    let mut bt = vec![T::zero(); n * k];
    for row in 0..k {
        for col in 0..n {
            bt[col * k + row] = b[row * n + col];
        }
    }
    matmul_nt(a, &bt, m, k, n)
}

/// `out[m,n] = a[m,k] · bt[n,k]ᵀ` (`bt` holds the transposed right factor).
pub fn matmul_nt<T: Element>(a: &[T], bt: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(bt.len(), n * k);
    let mut out = vec![T::zero(); m * n];
    let fill_row = |i: usize, out_row: &mut [T]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, slot) in out_row.iter_mut().enumerate() {
            *slot = dot(a_row, &bt[j * k..(j + 1) * k]);
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            fill_row(i, row);
        }
    }
    out
}

/// `out[m,n] = a[k,m]ᵀ · b[k,n]` (`a` holds the transposed left factor).
pub fn matmul_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    let fill_row = |i: usize, out_row: &mut [T]| {
        for l in 0..k {
            axpy(a[l * m + i], &b[l * n..(l + 1) * n], out_row);
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| fill_row(i, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            fill_row(i, row);
        }
    }
    out
}

/// Unfolds one image for a 3×3, stride-1, zero-pad-1 convolution into a
/// `[ci*9, h*w]` column matrix.
pub fn im2col3x3<T: Element>(x: &[T], ci: usize, h: usize, w: usize, col: &mut [T]) {
    debug_assert_eq!(x.len(), ci * h * w);
    debug_assert_eq!(col.len(), ci * 9 * h * w);
    let plane = h * w;
    for c in 0..ci {
        let img = &x[c * plane..(c + 1) * plane];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &mut col[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        row[y * w..(y + 1) * w].iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &img[sy as usize * w..(sy as usize + 1) * w];
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        row[y * w + xo] = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3x3`]: scatter-adds a column matrix back onto the
/// image gradient.
pub fn col2im3x3_add<T: Element>(col: &[T], ci: usize, h: usize, w: usize, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), ci * h * w);
    debug_assert_eq!(col.len(), ci * 9 * h * w);
    let plane = h * w;
    for c in 0..ci {
        let img = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &col[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        img[sy as usize * w + sx as usize] += row[y * w + xo];
                    }
                }
            }
        }
    }
}

/// Gathers dilated taps for a 1-D convolution over `[batch, steps, feat]`
/// input (row-major, batch optional as leading dim). Output row `(b, t)`
/// holds the `kernel` input frames `x[b, t + j*dilation - pad_left, :]`,
/// tap-major; out-of-range frames are zero.
pub fn causal_taps<T: Element>(
    x: &[T],
    batch: usize,
    steps: usize,
    feat: usize,
    kernel: usize,
    dilation: usize,
    pad_left: usize,
) -> Vec<T> {
    debug_assert_eq!(x.len(), batch * steps * feat);
    let mut taps = vec![T::zero(); batch * steps * kernel * feat];
    for b in 0..batch {
        let seq = &x[b * steps * feat..(b + 1) * steps * feat];
        for t in 0..steps {
            let row = &mut taps[(b * steps + t) * kernel * feat..][..kernel * feat];
            for j in 0..kernel {
                let src = t as isize + (j * dilation) as isize - pad_left as isize;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let src = src as usize;
                row[j * feat..(j + 1) * feat].copy_from_slice(&seq[src * feat..(src + 1) * feat]);
            }
        }
    }
    taps
}

/// Adjoint of [`causal_taps`].
pub fn causal_taps_scatter_add<T: Element>(
    dtaps: &[T],
    batch: usize,
    steps: usize,
    feat: usize,
    kernel: usize,
    dilation: usize,
    pad_left: usize,
    dx: &mut [T],
) {
    debug_assert_eq!(dx.len(), batch * steps * feat);
    debug_assert_eq!(dtaps.len(), batch * steps * kernel * feat);
    for b in 0..batch {
        let dseq = &mut dx[b * steps * feat..(b + 1) * steps * feat];
        for t in 0..steps {
            let row = &dtaps[(b * steps + t) * kernel * feat..][..kernel * feat];
            for j in 0..kernel {
                let src = t as isize + (j * dilation) as isize - pad_left as isize;
                if src < 0 || src >= steps as isize {
                    continue;
                }
                let src = src as usize;
                add_assign(
                    &mut dseq[src * feat..(src + 1) * feat],
                    &row[j * feat..(j + 1) * feat],
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64) * 0.3 - 5.0).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let m = 5;
        let k = 7;
        let n = 4;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.01 - 0.1).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.02 + 0.3).collect();
        let nn = matmul_nn(&a, &b, m, k, n);
        // bt[n,k]
        let mut bt = vec![0.0; n * k];
        for r in 0..k {
            for c in 0..n {
                bt[c * k + r] = b[r * n + c];
            }
        }
        let nt = matmul_nt(&a, &bt, m, k, n);
        // at[k,m]
        let mut at = vec![0.0; k * m];
        for r in 0..m {
            for c in 0..k {
                at[c * m + r] = a[r * k + c];
            }
        }
        let tn = matmul_tn(&at, &b, m, k, n);
        for i in 0..m * n {
            assert!((nn[i] - nt[i]).abs() < 1e-12);
            assert!((nn[i] - tn[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_roundtrip_counts_overlaps() {
        // col2im(im2col(x)) multiplies each pixel by the number of kernel
        // windows that cover it (9 in the interior for a 3x3 kernel).
        let (ci, h, w) = (1, 5, 5);
        let x: Vec<f64> = (0..ci * h * w).map(|i| i as f64 + 1.0).collect();
        let mut col = vec![0.0; ci * 9 * h * w];
        im2col3x3(&x, ci, h, w, &mut col);
        let mut back = vec![0.0; ci * h * w];
        col2im3x3_add(&col, ci, h, w, &mut back);
        assert_eq!(back[2 * w + 2], 9.0 * x[2 * w + 2]);
        assert_eq!(back[0], 4.0 * x[0]); // corner covered by 4 windows
    }

    #[test]
    fn causal_taps_reach_back_by_dilation() {
        // steps=4, feat=1, k=2, dilation=2, pad_left=(k-1)*2=2.
        let x = vec![10.0f64, 20.0, 30.0, 40.0];
        let taps = causal_taps(&x, 1, 4, 1, 2, 2, 2);
        // row t = [x[t-2], x[t]]
        assert_eq!(taps, vec![0.0, 10.0, 0.0, 20.0, 10.0, 30.0, 20.0, 40.0]);
    }
}
