//! Stride-1 2-D convolution and dense kernels on top of `sgemm`.
//!
//! Convolutions lower each image to an `(C·k·k) × (Ho·Wo)` column matrix and
//! multiply by the `O × (C·k·k)` weight matrix.

use matrixmultiply::sgemm;

/// Geometry of one stride-1 convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub padding: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.padding + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.padding + 1 - self.kernel
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// `C = alpha·A·B + beta·C` on row/column strided slices.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the slice bounds above cover every index touched by sgemm.
    unsafe {
        sgemm(
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, img: &[f32], col: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let p = g.padding as isize;
    for c in 0..g.in_ch {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                // valid output columns: 0 <= ox + kj - p < width
                let lo = (p - kj as isize).clamp(0, ow as isize) as usize;
                let hi = (g.width as isize + p - kj as isize).clamp(0, ow as isize) as usize;
                for oy in 0..oh {
                    let iy = oy as isize + ki as isize - p;
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize || lo >= hi {
                        out.fill(0.0);
                        continue;
                    }
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let src_start = iy as usize * g.width + (lo as isize + kj as isize - p) as usize;
                    out[lo..hi].copy_from_slice(&plane[src_start..src_start + (hi - lo)]);
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f32], img: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let p = g.padding as isize;
    for c in 0..g.in_ch {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                let lo = (p - kj as isize).clamp(0, ow as isize) as usize;
                let hi = (g.width as isize + p - kj as isize).clamp(0, ow as isize) as usize;
                if lo >= hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy as isize + ki as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_start = iy as usize * g.width + (lo as isize + kj as isize - p) as usize;
                    let dst = &mut plane[dst_start..dst_start + (hi - lo)];
                    for (d, s) in dst.iter_mut().zip(&src[oy * ow + lo..oy * ow + hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batch laid out as `[B, C, H, W]`.
pub(crate) fn conv_forward(g: &ConvGeom, batch: usize, input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * cols;
    let mut out = vec![0.0f32; batch * out_len];
    let mut col = vec![0.0f32; rows * cols];
    for b in 0..batch {
        im2col(g, &input[b * in_len..(b + 1) * in_len], &mut col);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        for (o, chunk) in dst.chunks_mut(cols).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(g.out_ch, rows, cols, weight, rows, 1, &col, cols, 1, 1.0, dst);
    }
    out
}

/// Gradients of a convolution. Returns `(d_input, d_weight, d_bias)`; the
/// input gradient is skipped when `want_input` is false and parameter
/// gradients are skipped when `want_params` is false.
#[allow(clippy::type_complexity)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    want_input: bool,
    want_params: bool,
) -> (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * cols;
    let mut d_input = want_input.then(|| vec![0.0f32; batch * in_len]);
    let mut d_params = want_params.then(|| (vec![0.0f32; g.out_ch * rows], vec![0.0f32; g.out_ch]));
    let mut col = vec![0.0f32; rows * cols];
    for b in 0..batch {
        let dout = &grad_out[b * out_len..(b + 1) * out_len];
        if let Some((dw, db)) = d_params.as_mut() {
            im2col(g, &input[b * in_len..(b + 1) * in_len], &mut col);
            gemm(g.out_ch, cols, rows, dout, cols, 1, &col, 1, cols, 1.0, dw);
            for (o, chunk) in dout.chunks(cols).enumerate() {
                db[o] += chunk.iter().sum::<f32>();
            }
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(rows, g.out_ch, cols, weight, 1, rows, dout, cols, 1, 0.0, &mut col);
            col2im(g, &col, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (d_input, d_params)
}

/// `y = x·Wᵀ + b` with `x: [B, I]`, `W: [O, I]`.
pub(crate) fn dense_forward(batch: usize, inp: usize, outp: usize, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * outp];
    for row in y.chunks_mut(outp) {
        row.copy_from_slice(bias);
    }
    gemm(batch, inp, outp, x, inp, 1, w, 1, inp, 1.0, &mut y);
    y
}

#[allow(clippy::type_complexity)]
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    batch: usize,
    inp: usize,
    outp: usize,
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    want_input: bool,
    want_params: bool,
) -> (Option<Vec<f32>>, Option<(Vec<f32>, Vec<f32>)>) {
    let d_input = want_input.then(|| {
        let mut dx = vec![0.0f32; batch * inp];
        gemm(batch, outp, inp, dy, outp, 1, w, inp, 1, 0.0, &mut dx);
        dx
    });
    let d_params = want_params.then(|| {
        let mut dw = vec![0.0f32; outp * inp];
        gemm(outp, batch, inp, dy, 1, outp, x, inp, 1, 0.0, &mut dw);
        let mut db = vec![0.0f32; outp];
        for row in dy.chunks(outp) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        (dw, db)
    });
    (d_input, d_params)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive_conv(g: &ConvGeom, batch: usize, x: &[f32], w: &[f32], bias: &[f32]) -> Vec<f32> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let k = g.kernel;
        let mut out = vec![0.0f32; batch * g.out_ch * oh * ow];
        for b in 0..batch {
            for o in 0..g.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[o] as f64;
                        for c in 0..g.in_ch {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = oy as isize + ki as isize - g.padding as isize;
                                    let ix = ox as isize + kj as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let xv = x[((b * g.in_ch + c) * g.height + iy as usize) * g.width + ix as usize];
                                    let wv = w[((o * g.in_ch + c) * k + ki) * k + kj];
                                    acc += (xv * wv) as f64;
                                }
                            }
                        }
                        out[((b * g.out_ch + o) * oh + oy) * ow + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        (0..n)
            .map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 8) % 1000) as f32 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn matches_nested_loop_oracle() {
        for &(k, p, h, w) in &[(3, 1, 5, 6), (5, 2, 7, 7), (5, 0, 9, 8), (3, 0, 4, 4)] {
            let g = ConvGeom { in_ch: 2, out_ch: 3, kernel: k, padding: p, height: h, width: w };
            let x = pseudo(2 * 2 * h * w, 7);
            let wt = pseudo(3 * 2 * k * k, 11);
            let b = vec![0.1, -0.2, 0.3];
            let fast = conv_forward(&g, 2, &x, &wt, &b);
            let slow = naive_conv(&g, 2, &x, &wt, &b);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-5, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom { in_ch: 2, out_ch: 1, kernel: 3, padding: 1, height: 4, width: 5 };
        let x = pseudo(2 * 4 * 5, 3);
        let y = pseudo(g.col_rows() * g.col_cols(), 5);
        let mut col = vec![0.0; y.len()];
        im2col(&g, &x, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn dense_matches_manual_product() {
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        let w = [0.5, -1.0, 2.0, 1.0, 1.0, 1.0];
        let y = dense_forward(2, 3, 2, &x, &w, &[0.0, 1.0]);
        assert_eq!(y, vec![4.5, 7.0, -1.0, 0.5]);
    }
}
