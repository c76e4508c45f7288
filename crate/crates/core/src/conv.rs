//! 2-D cross-correlation kernels (no kernel flip) via im2col and GEMM.
//!
//! `out[o, y, x] = bias[o] + sum_{c, i, j} kernel[o, c, i, j] * in[c, y*s + i - p, x*s + j - p]`
//! with zero padding outside the input.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Validates the geometry and derives the output extents.
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        bias: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let &[cin, h, w] = input else {
            return Err(Error::shape("conv2d", "input rank", 3, input.len()));
        };
        let &[cout, kcin, kh, kw] = kernel else {
            return Err(Error::shape("conv2d", "kernel rank", 4, kernel.len()));
        };
        if kcin != cin {
            return Err(Error::shape("conv2d", "kernel in_channels", cin, kcin));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", "kernel width", kh, kw));
        }
        if bias != [cout] {
            return Err(Error::shape(
                "conv2d",
                "bias length",
                format!("[{cout}]"),
                format!("{bias:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride", ">= 1", 0));
        }
        if kh > h + 2 * padding {
            return Err(Error::shape(
                "conv2d",
                "height",
                format!(">= {} (kernel minus padding)", kh.saturating_sub(2 * padding)),
                h,
            ));
        }
        if kw > w + 2 * padding {
            return Err(Error::shape(
                "conv2d",
                "width",
                format!(">= {} (kernel minus padding)", kw.saturating_sub(2 * padding)),
                w,
            ));
        }
        Ok(ConvGeometry {
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unrolls input patches into a `(C*k*k) x (H'*W')` row-major matrix.
fn im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let positions = oh * ow;
    let mut cols = vec![0.0; g.patch_len() * positions];
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..k {
            for j in 0..k {
                let row = (c * k + i) * k + j;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..ow {
                        let x = (ox * g.stride + j) as isize - g.padding as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[oy * ow + ox] = src[x as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds an unrolled patch matrix back onto the input grid.
fn col2im(g: &ConvGeometry, cols: &[f64], out: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let positions = oh * ow;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..k {
            for j in 0..k {
                let row = (c * k + i) * k + j;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let y = (oy * g.stride + i) as isize - g.padding as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..ow {
                        let x = (ox * g.stride + j) as isize - g.padding as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[x as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = a (m x k) * b (k x n)` with explicit strides, overwriting `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the assertion above bounds every index reachable through the
    // given strides, which describe dense row- or column-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let cols = im2col(g, input);
    let (m, k, n) = (g.out_channels, g.patch_len(), g.positions());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, kernel, (k, 1), &cols, (n, 1), &mut out);
    for (row, &b) in out.chunks_exact_mut(n).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
    out
}

pub struct ConvGrads {
    pub input: Vec<f64>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of the cross-correlation given the upstream gradient `d_out`.
pub fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
) -> ConvGrads {
    let cols = im2col(g, input);
    let (m, k, n) = (g.out_channels, g.patch_len(), g.positions());

    // dK = dY (m x n) * cols^T (n x k)
    let mut d_kernel = vec![0.0; m * k];
    gemm(m, n, k, d_out, (n, 1), &cols, (1, n), &mut d_kernel);

    // dcols = K^T (k x m) * dY (m x n)
    let mut d_cols = vec![0.0; k * n];
    gemm(k, m, n, kernel, (1, k), d_out, (n, 1), &mut d_cols);
    let mut d_input = vec![0.0; g.in_channels * g.height * g.width];
    col2im(g, &d_cols, &mut d_input);

    let d_bias = d_out.chunks_exact(n).map(|row| row.iter().sum()).collect();
    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extents() {
        let g = ConvGeometry::new(&[2, 7, 9], &[4, 2, 3, 3], &[4], 2, 1).unwrap();
        assert_eq!((g.out_height(), g.out_width()), (4, 5));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let err = ConvGeometry::new(&[1, 2, 8], &[1, 1, 5, 5], &[1], 1, 1).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let err = ConvGeometry::new(&[3, 8, 8], &[1, 2, 3, 3], &[1], 1, 1).unwrap_err();
        assert!(err.to_string().contains("in_channels"), "{err}");
    }
}
