//! Dense 4-D activations with channel-major storage.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A batch of `n` feature maps with `c` channels of `h×w` pixels.
///
/// Logical indexing is `(n, c, h, w)` like any NCHW tensor, but memory is
/// laid out channel-major (`C×N×H×W`): all samples of channel `c` occupy
/// one contiguous run of `n·h·w` values. For single-channel images the two
/// layouts coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    /// Wraps channel-major data.
    pub fn from_cnhw(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(alloc::format!(
                "{} values for a {}x{}x{}x{} tensor",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// Builds a tensor from conventional NCHW-ordered data.
    pub fn from_nchw(n: usize, c: usize, h: usize, w: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(alloc::format!(
                "{} values for a {}x{}x{}x{} tensor",
                data.len(),
                n,
                c,
                h,
                w
            )));
        }
        let hw = h * w;
        let mut out = Self::zeros(n, c, h, w);
        for i in 0..n {
            for ch in 0..c {
                let src = &data[(i * c + ch) * hw..][..hw];
                out.data[(ch * n + i) * hw..][..hw].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// Copies out in conventional NCHW order.
    pub fn to_nchw(&self) -> Vec<f64> {
        let hw = self.h * self.w;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.n {
            for ch in 0..self.c {
                out[(i * self.c + ch) * hw..][..hw]
                    .copy_from_slice(&self.data[(ch * self.n + i) * hw..][..hw]);
            }
        }
        out
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// All samples of one channel, `n·h·w` values.
    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.n * self.h * self.w;
        &self.data[c * len..][..len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.n * self.h * self.w;
        &mut self.data[c * len..][..len]
    }

    /// One sample's `h·w` plane within a channel.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[(c * self.n + n) * hw..][..hw]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c ← alpha·a·b + beta·c` for row-major `m×k` and `k×n` operands given
/// by explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, rsa, csa));
    assert!(b.len() >= span(k, n, rsb, csb));
    assert!(c.len() >= span(m, n, rsc, csc));
    // SAFETY: strides are non-negative and the asserted spans keep every
    // access inside the slices; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
