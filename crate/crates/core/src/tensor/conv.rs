//! 2D convolution, its transpose, and the 1D variant, lowered to GEMM via
//! im2col. Batch samples are processed independently (in parallel when a
//! thread pool is available); weight gradients are reduced in sample order so
//! results do not depend on the thread count.

use rayon::prelude::*;

use super::{reshape, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and (for transposed convolution) extra output rows
/// and columns, as `(height, width)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub output_padding: (usize, usize),
}

impl Conv2dGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            stride,
            padding,
            output_padding: (0, 0),
        }
    }

    pub fn with_output_padding(mut self, output_padding: (usize, usize)) -> Self {
        self.output_padding = output_padding;
        self
    }

    /// Output size of a forward convolution along one axis.
    pub fn conv_out(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        (len + 2 * pad - kernel) / stride + 1
    }

    /// Output size of a transposed convolution along one axis.
    pub fn transpose_out(len: usize, kernel: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
        ((len - 1) * stride + kernel + out_pad).saturating_sub(2 * pad)
    }
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self::new((1, 1), (0, 0))
    }
}

/// Window layout shared by im2col / col2im: a `(c, h, w)` image scanned by a
/// `(kh, kw)` kernel, producing `(ho, wo)` positions.
#[derive(Debug, Clone, Copy)]
struct Patches {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Patches {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    /// Valid output-x range `[lo, hi)` for kernel column `kx`.
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pw { 0 } else { (self.pw - kx).div_ceil(self.sw) };
        let hi = if self.w + self.pw > kx {
            ((self.w + self.pw - kx - 1) / self.sw + 1).min(self.wo)
        } else {
            0
        };
        let lo = lo.min(self.wo);
        (lo, hi.max(lo))
    }

    fn im2col(&self, img: &[f32], col: &mut [f32]) {
        let cols = self.cols();
        for ci in 0..self.c {
            let plane = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let (xlo, xhi) = self.x_range(kx);
                    for oy in 0..self.ho {
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        out[..xlo].fill(0.0);
                        out[xhi..].fill(0.0);
                        if self.sw == 1 {
                            let ix0 = xlo + kx - self.pw;
                            out[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                out[ox] = src[ox * self.sw + kx - self.pw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-adds columns back into
    /// the image.
    fn col2im(&self, col: &[f32], img: &mut [f32]) {
        let cols = self.cols();
        for ci in 0..self.c {
            let plane = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    let (xlo, xhi) = self.x_range(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + ky) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let s = &src[oy * self.wo..(oy + 1) * self.wo];
                        for ox in xlo..xhi {
                            dst[ox * self.sw + kx - self.pw] += s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C = op(A)·op(B) + beta·C` on row-major buffers, where `op` optionally
/// transposes. `A` is `m×k` after `op`, `B` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe row-major
    // matrices of the stated dimensions inside those slices.
    unsafe {
        matrixmultiply::sgemm(
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

fn dims4(what: &str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(format!("{what} must be 4-D, got {:?}", t.shape()))),
    }
}

fn check_bias(bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::shape(format!(
            "bias {:?} does not match {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

fn check_geometry(geom: &Conv2dGeometry) -> Result<()> {
    if geom.stride.0 == 0 || geom.stride.1 == 0 {
        return Err(Error::param(format!("stride {:?} must be positive", geom.stride)));
    }
    Ok(())
}

fn add_bias(out: &mut [f32], bias: Option<&Tensor>, plane: usize) {
    if let Some(b) = bias {
        let b = b.data();
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.iter().cycle()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(g: &[f32], channels: usize, plane: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        acc[i % channels] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn sum_partials(parts: Vec<Vec<f32>>, len: usize) -> Vec<f32> {
    let mut total = vec![0.0f32; len];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    total
}

/// `[N, Cin, H, W] ⋆ [Cout, Cin, kh, kw] -> [N, Cout, H', W']`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geom: Conv2dGeometry,
) -> Result<Tensor> {
    let [n, cin, h, w] = dims4("conv2d input", input)?;
    let [cout, wcin, kh, kw] = dims4("conv2d weight", weight)?;
    if cin != wcin {
        return Err(Error::shape(format!(
            "conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    check_geometry(&geom)?;
    check_bias(bias, cout)?;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(Error::shape(format!(
            "conv2d: padded input {:?} (padding {:?}) smaller than kernel {:?}",
            input.shape(),
            geom.padding,
            weight.shape()
        )));
    }
    let ho = Conv2dGeometry::conv_out(h, kh, sh, ph);
    let wo = Conv2dGeometry::conv_out(w, kw, sw, pw);
    let p = Patches { c: cin, h, w, kh, kw, sh, sw, ph, pw, ho, wo };
    let (k, cols) = (p.rows(), p.cols());
    let in_plane = cin * h * w;
    let out_plane = cout * cols;

    let mut out = vec![0.0f32; n * out_plane];
    {
        let xs = input.data();
        let xs: &[f32] = &xs;
        let ws = weight.data();
        let ws: &[f32] = &ws;
        out.par_chunks_mut(out_plane)
            .zip(xs.par_chunks(in_plane))
            .for_each_init(
                || vec![0.0f32; if p.is_identity() { 0 } else { k * cols }],
                |col, (dst, img)| {
                    let col: &[f32] = if p.is_identity() {
                        img
                    } else {
                        p.im2col(img, col);
                        col
                    };
                    gemm(cout, k, cols, ws, false, col, false, 0.0, dst);
                },
            );
    }
    add_bias(&mut out, bias, cols);

    let (xc, wc, bc) = (input.clone(), weight.clone(), bias.cloned());
    let mut parents = vec![input, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Tensor::from_op(out, vec![n, cout, ho, wo], &parents, move |g| {
        xc.accumulate_with(|| {
            let ws = wc.data();
            let ws: &[f32] = &ws;
            let mut gx = vec![0.0f32; n * in_plane];
            gx.par_chunks_mut(in_plane)
                .zip(g.par_chunks(out_plane))
                .for_each_init(
                    || vec![0.0f32; k * cols],
                    |col, (dst, gs)| {
                        if p.is_identity() {
                            gemm(k, cout, cols, ws, true, gs, false, 0.0, dst);
                        } else {
                            gemm(k, cout, cols, ws, true, gs, false, 0.0, col);
                            p.col2im(col, dst);
                        }
                    },
                );
            gx
        });
        wc.accumulate_with(|| {
            let xs = xc.data();
            let xs: &[f32] = &xs;
            let parts: Vec<Vec<f32>> = xs
                .par_chunks(in_plane)
                .zip(g.par_chunks(out_plane))
                .map(|(img, gs)| {
                    let mut gw = vec![0.0f32; cout * k];
                    if p.is_identity() {
                        gemm(cout, cols, k, gs, false, img, true, 0.0, &mut gw);
                    } else {
                        let mut col = vec![0.0f32; k * cols];
                        p.im2col(img, &mut col);
                        gemm(cout, cols, k, gs, false, &col, true, 0.0, &mut gw);
                    }
                    gw
                })
                .collect();
            sum_partials(parts, cout * k)
        });
        if let Some(b) = &bc {
            b.accumulate_with(|| bias_grad(g, cout, cols));
        }
    }))
}

/// Adjoint of [`conv2d`] with respect to its input:
/// `[N, Cin, H, W]` with weight `[Cin, Cout, kh, kw]` gives
/// `[N, Cout, (H-1)·s - 2p + k + output_padding, ...]`.
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geom: Conv2dGeometry,
) -> Result<Tensor> {
    let [n, cin, h, w] = dims4("conv_transpose2d input", input)?;
    let [wcin, cout, kh, kw] = dims4("conv_transpose2d weight", weight)?;
    if cin != wcin {
        return Err(Error::shape(format!(
            "conv_transpose2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    check_geometry(&geom)?;
    check_bias(bias, cout)?;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let (oph, opw) = geom.output_padding;
    if oph >= sh || opw >= sw {
        return Err(Error::param(format!(
            "conv_transpose2d: output_padding {:?} must be smaller than stride {:?}",
            geom.output_padding, geom.stride
        )));
    }
    let ho = Conv2dGeometry::transpose_out(h, kh, sh, ph, oph);
    let wo = Conv2dGeometry::transpose_out(w, kw, sw, pw, opw);
    if ho == 0 || wo == 0 || ho + 2 * ph < kh || wo + 2 * pw < kw {
        return Err(Error::shape(format!(
            "conv_transpose2d: padding {:?} leaves no output for input {:?} and kernel {:?}",
            geom.padding,
            input.shape(),
            weight.shape()
        )));
    }
    // The forward conv that this op is the adjoint of maps [cout, ho, wo]
    // to [cin, h, w].
    let p = Patches { c: cout, h: ho, w: wo, kh, kw, sh, sw, ph, pw, ho: h, wo: w };
    debug_assert_eq!(Conv2dGeometry::conv_out(ho, kh, sh, ph), h);
    let (k, cols) = (p.rows(), p.cols());
    let in_plane = cin * cols;
    let out_plane = cout * ho * wo;

    let mut out = vec![0.0f32; n * out_plane];
    {
        let xs = input.data();
        let xs: &[f32] = &xs;
        let ws = weight.data();
        let ws: &[f32] = &ws;
        out.par_chunks_mut(out_plane)
            .zip(xs.par_chunks(in_plane))
            .for_each_init(
                || vec![0.0f32; k * cols],
                |col, (dst, img)| {
                    if p.is_identity() {
                        gemm(k, cin, cols, ws, true, img, false, 0.0, dst);
                    } else {
                        gemm(k, cin, cols, ws, true, img, false, 0.0, col);
                        p.col2im(col, dst);
                    }
                },
            );
    }
    add_bias(&mut out, bias, ho * wo);

    let (xc, wc, bc) = (input.clone(), weight.clone(), bias.cloned());
    let mut parents = vec![input, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Tensor::from_op(out, vec![n, cout, ho, wo], &parents, move |g| {
        xc.accumulate_with(|| {
            let ws = wc.data();
            let ws: &[f32] = &ws;
            let mut gx = vec![0.0f32; n * in_plane];
            gx.par_chunks_mut(in_plane)
                .zip(g.par_chunks(out_plane))
                .for_each_init(
                    || vec![0.0f32; k * cols],
                    |col, (dst, gs)| {
                        let col: &[f32] = if p.is_identity() {
                            gs
                        } else {
                            p.im2col(gs, col);
                            col
                        };
                        gemm(cin, k, cols, ws, false, col, false, 0.0, dst);
                    },
                );
            gx
        });
        wc.accumulate_with(|| {
            let xs = xc.data();
            let xs: &[f32] = &xs;
            let parts: Vec<Vec<f32>> = xs
                .par_chunks(in_plane)
                .zip(g.par_chunks(out_plane))
                .map(|(img, gs)| {
                    let mut gw = vec![0.0f32; cin * k];
                    if p.is_identity() {
                        gemm(cin, cols, k, img, false, gs, true, 0.0, &mut gw);
                    } else {
                        let mut col = vec![0.0f32; k * cols];
                        p.im2col(gs, &mut col);
                        gemm(cin, cols, k, img, false, &col, true, 0.0, &mut gw);
                    }
                    gw
                })
                .collect();
            sum_partials(parts, cin * k)
        });
        if let Some(b) = &bc {
            b.accumulate_with(|| bias_grad(g, cout, ho * wo));
        }
    }))
}

/// `[N, Cin, L] ⋆ [Cout, Cin, k] -> [N, Cout, L']`, expressed as a 2D
/// convolution over a singleton height axis.
pub fn conv1d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, l) = match *input.shape() {
        [n, c, l] => (n, c, l),
        _ => return Err(Error::shape(format!("conv1d input must be 3-D, got {:?}", input.shape()))),
    };
    let (cout, wcin, k) = match *weight.shape() {
        [o, i, k] => (o, i, k),
        _ => return Err(Error::shape(format!("conv1d weight must be 3-D, got {:?}", weight.shape()))),
    };
    if cin != wcin {
        return Err(Error::shape(format!(
            "conv1d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    let x4 = reshape(input, &[n, cin, 1, l])?;
    let w4 = reshape(weight, &[cout, cin, 1, k])?;
    let y = conv2d(&x4, &w4, bias, Conv2dGeometry::new((1, stride), (0, padding)))?;
    let lo = y.shape()[3];
    reshape(&y, &[n, cout, lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{init, sum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution used as an independent oracle.
    #[allow(clippy::too_many_arguments)]
    fn direct_conv2d(
        x: &[f32],
        [n, cin, h, w]: [usize; 4],
        wt: &[f32],
        [cout, _, kh, kw]: [usize; 4],
        b: &[f32],
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
    ) -> (Vec<f64>, [usize; 4]) {
        let ho = (h + 2 * ph - kh) / sh + 1;
        let wo = (w + 2 * pw - kw) / sw + 1;
        let mut out = vec![0.0f64; n * cout * ho * wo];
        for ni in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co] as f64;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[((ni * cin + ci) * h + iy as usize) * w + ix as usize] as f64
                                        * wt[((co * cin + ci) * kh + ky) * kw + kx] as f64;
                                }
                            }
                        }
                        out[((ni * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        (out, [n, cout, ho, wo])
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        init::normal(rng, shape, 1.0)
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 5]);
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(eye, &[3, 3, 1, 1]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dGeometry::default()).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        let w = Tensor::new(w.to_vec(), &[3, 3, 1, 1]).unwrap();
        let yt = conv_transpose2d(&x, &w, None, Conv2dGeometry::default()).unwrap();
        assert_eq!(yt.to_vec(), x.to_vec());
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = Tensor::new(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let y = conv2d(&x, &w, Some(&b), Conv2dGeometry::new((1, 1), (1, 1))).unwrap();
        for (c, plane) in y.data().chunks(25).enumerate() {
            assert!(plane.iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn matches_direct_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[1, 2, 5, 7]);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        let y = conv2d(&x, &w, Some(&b), Conv2dGeometry::new((2, 1), (1, 1))).unwrap();
        let (oracle, shape) = direct_conv2d(
            &x.to_vec(),
            [1, 2, 5, 7],
            &w.to_vec(),
            [3, 2, 3, 3],
            &b.to_vec(),
            (2, 1),
            (1, 1),
        );
        assert_eq!(y.shape(), &shape);
        for (a, o) in y.data().iter().zip(&oracle) {
            assert!((*a as f64 - o).abs() <= 1e-5 * o.abs().max(1.0), "{a} vs {o}");
        }
    }

    #[test]
    fn conv1d_matches_direct_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, &[2, 3, 11]);
        let w = rand_tensor(&mut rng, &[4, 3, 5]);
        let b = rand_tensor(&mut rng, &[4]);
        let y = conv1d(&x, &w, Some(&b), 2, 2).unwrap();
        let (oracle, shape) =
            direct_conv2d(&x.to_vec(), [2, 3, 1, 11], &w.to_vec(), [4, 3, 1, 5], &b.to_vec(), (1, 2), (0, 2));
        assert_eq!(y.shape(), &[shape[0], shape[1], shape[3]]);
        for (a, o) in y.data().iter().zip(&oracle) {
            assert!((*a as f64 - o).abs() <= 1e-5 * o.abs().max(1.0));
        }
    }

    #[test]
    fn conv1d_same_padding_and_delta_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[1, 1, 9]);
        let w = Tensor::new(vec![0.0, 0.0, 1.0, 0.0, 0.0], &[1, 1, 5]).unwrap();
        let y = conv1d(&x, &w, None, 1, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 9]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn transpose_shape_formula() {
        let x = Tensor::zeros(&[1, 2, 4, 6]);
        let w = Tensor::zeros(&[2, 3, 3, 3]);
        let geom = Conv2dGeometry::new((2, 1), (1, 1)).with_output_padding((1, 0));
        let y = conv_transpose2d(&x, &w, None, geom).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8, 6]);
    }

    #[test]
    fn transpose_rejects_large_output_padding() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        let geom = Conv2dGeometry::new((2, 2), (1, 1)).with_output_padding((2, 0));
        assert!(matches!(conv_transpose2d(&x, &w, None, geom), Err(Error::Param(_))));
    }

    #[test]
    fn channel_mismatch_reports_both_shapes() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[3, 5, 3, 3]);
        let msg = conv2d(&x, &w, None, Conv2dGeometry::default()).unwrap_err().to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 5, 3, 3]"), "{msg}");
    }

    /// The transpose forward equals the input-gradient of conv2d.
    #[test]
    fn transpose_equals_conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let geom = Conv2dGeometry::new((2, 2), (1, 1)).with_output_padding((1, 1));
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        // conv maps [1,2,8,8] -> [1,3,4,4]; its adjoint maps [1,3,4,4] -> [1,2,8,8].
        let x = Tensor::param(vec![0.0; 128], &[1, 2, 8, 8]).unwrap();
        let y = rand_tensor(&mut rng, &[1, 3, 4, 4]);
        let out = conv2d(&x, &w, None, geom).unwrap();
        sum(&crate::tensor::mul(&out, &y).unwrap()).backward().unwrap();
        let adj = conv_transpose2d(&y, &w, None, geom).unwrap();
        assert_eq!(adj.shape(), &[1, 2, 8, 8]);
        for (a, b) in adj.data().iter().zip(x.grad().unwrap()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }
}
