//! im2col-based convolution kernels shared by the forward and backward passes.
//!
//! Convolution weights are laid out `[out_ch, in_ch, k, k]`; transposed
//! convolution weights are `[in_ch, out_ch, k, k]`, so a convolution and the
//! transposed convolution sharing one weight buffer are exact adjoints.

/// Output extent of a strided convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_len(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    ((input - 1) * stride + kernel + output_padding).checked_sub(2 * padding)
}

/// Geometry of the "large" image side of a convolution: a `channels x height x width`
/// image swept by a `kernel x kernel` window producing `out_h x out_w` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sweep {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Sweep {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds `image` into a `[rows, positions]` column matrix.
    pub fn im2col(&self, image: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.rows() * p];
        let k = self.kernel;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let out_row = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                *v = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Folds a `[rows, positions]` column matrix back, summing overlapping contributions.
    pub fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let p = self.positions();
        let k = self.kernel;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane
                            [iy as usize * self.width..(iy as usize + 1) * self.width];
                        let in_row = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        for (ox, v) in in_row.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = beta * c + op(a) * op(b)` where `op` optionally transposes a row-major operand.
/// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds row-major matrices of the asserted sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
