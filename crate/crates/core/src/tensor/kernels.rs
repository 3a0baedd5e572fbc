//! Dense kernels shared by the forward and backward passes.

use super::array::Real;

/// `c (+)= op(a) · op(b)` with `op(a)` of shape `m×k` and `op(b)` of shape `k×n`.
///
/// `trans_a` means `a` is stored `k×m`; `trans_b` means `b` is stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the length assertions above cover every address touched for
    // these row-major/transposed layouts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a same-padded, stride-1 2-D convolution over NCHW input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
    pub fn cols(&self) -> usize {
        self.n * self.h * self.w
    }
}

/// Unfolds `x` into a `[c·k·k, n·h·w]` patch matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: ConvGeom) -> Vec<T> {
    let (hw, pad) = (g.h * g.w, g.pad() as isize);
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.rows() * ncols];
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let src = &x[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                    for i in 0..g.h {
                        let si = i as isize + ki as isize - pad;
                        if si < 0 || si >= g.h as isize {
                            continue;
                        }
                        let base = n * hw + i * g.w;
                        for j in 0..g.w {
                            let sj = j as isize + kj as isize - pad;
                            if sj >= 0 && sj < g.w as isize {
                                dst[base + j] = src[si as usize * g.w + sj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im<T: Real>(cols: &[T], g: ConvGeom, dx: &mut [T]) {
    let (hw, pad) = (g.h * g.w, g.pad() as isize);
    let ncols = g.cols();
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..g.n {
                    let dst = &mut dx[(n * g.c + c) * hw..(n * g.c + c + 1) * hw];
                    for i in 0..g.h {
                        let si = i as isize + ki as isize - pad;
                        if si < 0 || si >= g.h as isize {
                            continue;
                        }
                        let base = n * hw + i * g.w;
                        for j in 0..g.w {
                            let sj = j as isize + kj as isize - pad;
                            if sj >= 0 && sj < g.w as isize {
                                dst[si as usize * g.w + sj as usize] =
                                    dst[si as usize * g.w + sj as usize] + src[base + j];
                            }
                        }
                    }
                }
            }
        }
    }
}
