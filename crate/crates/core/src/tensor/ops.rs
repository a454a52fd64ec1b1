use super::{numel, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Elementwise map whose derivative can be written in terms of the input `x`
/// and output `y`.
fn unary(
    x: &Tensor,
    f: impl Fn(f32) -> f32,
    df: impl Fn(f32, f32) -> f32 + 'static,
) -> Tensor {
    let xs = x.data();
    let ys: Vec<f32> = xs.iter().map(|&v| f(v)).collect();
    drop(xs);
    let saved_y = ys.clone();
    let xc = x.clone();
    Tensor::from_op(ys, x.shape().to_vec(), &[x], move |g| {
        let xs = xc.data();
        let gx: Vec<f32> = g
            .iter()
            .zip(xs.iter())
            .zip(saved_y.iter())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        drop(xs);
        xc.accumulate_grad(&gx);
    })
}

pub fn relu(x: &Tensor) -> Tensor {
    unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary(x, |v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: &Tensor) -> Tensor {
    unary(
        x,
        |v| v.max(0.0) + (-v.abs()).exp().ln_1p(),
        |x, _| 1.0 / (1.0 + (-x).exp()),
    )
}

pub fn ln(x: &Tensor) -> Tensor {
    unary(x, f32::ln, |x, _| 1.0 / x)
}

pub fn square(x: &Tensor) -> Tensor {
    unary(x, |v| v * v, |x, _| 2.0 * x)
}

pub fn mul_scalar(x: &Tensor, c: f32) -> Tensor {
    unary(x, move |v| v * c, move |_, _| c)
}

pub fn add_scalar(x: &Tensor, c: f32) -> Tensor {
    unary(x, move |v| v + c, |_, _| 1.0)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out, a.shape().to_vec(), &[a, b], move |g| {
        ac.accumulate_grad(g);
        bc.accumulate_grad(g);
    }))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out, a.shape().to_vec(), &[a, b], move |g| {
        ac.accumulate_grad(g);
        bc.accumulate_with(|| g.iter().map(|v| -v).collect());
    }))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(out, a.shape().to_vec(), &[a, b], move |g| {
        ac.accumulate_with(|| g.iter().zip(bc.data().iter()).map(|(g, y)| g * y).collect());
        bc.accumulate_with(|| g.iter().zip(ac.data().iter()).map(|(g, x)| g * x).collect());
    }))
}

/// Sum of all elements, accumulated in f64.
pub fn sum(x: &Tensor) -> Tensor {
    let total: f64 = x.data().iter().map(|&v| v as f64).sum();
    let xc = x.clone();
    Tensor::from_op(vec![total as f32], vec![1], &[x], move |g| {
        xc.accumulate_grad(&vec![g[0]; xc.len()]);
    })
}

/// Mean of all elements, accumulated in f64.
pub fn mean(x: &Tensor) -> Tensor {
    let n = x.len();
    let total: f64 = x.data().iter().map(|&v| v as f64).sum();
    let xc = x.clone();
    Tensor::from_op(vec![(total / n as f64) as f32], vec![1], &[x], move |g| {
        xc.accumulate_grad(&vec![g[0] / n as f32; n]);
    })
}

/// Mean squared difference over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mse", a, b)?;
    let n = a.len();
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(vec![(total / n as f64) as f32], vec![1], &[a, b], move |g| {
        let scale = 2.0 * g[0] / n as f32;
        let diff: Vec<f32> = ac
            .data()
            .iter()
            .zip(bc.data().iter())
            .map(|(x, y)| scale * (x - y))
            .collect();
        bc.accumulate_with(|| diff.iter().map(|v| -v).collect());
        ac.accumulate_grad(&diff);
    }))
}

fn split_nc(op: &str, x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.ndim() < 2 {
        return Err(Error::shape(format!(
            "{op}: expected [N, C, ...], got {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    Ok((s[0], s[1], numel(&s[2..])))
}

/// Global average over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
pub fn mean_spatial(x: &Tensor) -> Result<Tensor> {
    let (n, c, s) = split_nc("mean_spatial", x)?;
    let xs = x.data();
    let out: Vec<f32> = xs
        .chunks(s)
        .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / s as f64) as f32)
        .collect();
    drop(xs);
    let xc = x.clone();
    Ok(Tensor::from_op(out, vec![n, c], &[x], move |g| {
        let inv = 1.0 / s as f32;
        let gx: Vec<f32> = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, s)).collect();
        xc.accumulate_grad(&gx);
    }))
}

/// Multiplies each `[n, c]` plane of `x` by `scale[n, c]`.
pub fn scale_channels(x: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let (n, c, s) = split_nc("scale_channels", x)?;
    if scale.shape() != [n, c] {
        return Err(Error::shape(format!(
            "scale_channels: scale {:?} does not match input {:?}",
            scale.shape(),
            x.shape()
        )));
    }
    let xs = x.data();
    let ss = scale.data();
    let mut out = Vec::with_capacity(xs.len());
    for (plane, &k) in xs.chunks(s).zip(ss.iter()) {
        out.extend(plane.iter().map(|v| v * k));
    }
    drop((xs, ss));
    let (xc, sc) = (x.clone(), scale.clone());
    Ok(Tensor::from_op(out, x.shape().to_vec(), &[x, scale], move |g| {
        xc.accumulate_with(|| {
            let ss = sc.data();
            let mut gx = Vec::with_capacity(g.len());
            for (plane, &k) in g.chunks(s).zip(ss.iter()) {
                gx.extend(plane.iter().map(|v| v * k));
            }
            gx
        });
        sc.accumulate_with(|| {
            let xs = xc.data();
            g.chunks(s)
                .zip(xs.chunks(s))
                .map(|(gp, xp)| {
                    gp.iter().zip(xp).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() as f32
                })
                .collect()
        });
    }))
}

/// Fully connected layer: `x[N, in] · W[out, in]ᵀ + b[out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 || weight.ndim() != 2 || x.shape()[1] != weight.shape()[1] {
        return Err(Error::shape(format!(
            "linear: input {:?} incompatible with weight {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = weight.shape()[0];
    if bias.shape() != [fout] {
        return Err(Error::shape(format!(
            "linear: bias {:?} does not match weight {:?}",
            bias.shape(),
            weight.shape()
        )));
    }
    let mut out = vec![0.0f32; n * fout];
    {
        let (xs, ws, bs) = (x.data(), weight.data(), bias.data());
        for i in 0..n {
            for o in 0..fout {
                let dot: f64 = (0..fin)
                    .map(|k| xs[i * fin + k] as f64 * ws[o * fin + k] as f64)
                    .sum();
                out[i * fout + o] = dot as f32 + bs[o];
            }
        }
    }
    let (xc, wc, bc) = (x.clone(), weight.clone(), bias.clone());
    Ok(Tensor::from_op(out, vec![n, fout], &[x, weight, bias], move |g| {
        xc.accumulate_with(|| {
            let ws = wc.data();
            let mut gx = vec![0.0f32; n * fin];
            for i in 0..n {
                for k in 0..fin {
                    gx[i * fin + k] =
                        (0..fout).map(|o| g[i * fout + o] * ws[o * fin + k]).sum();
                }
            }
            gx
        });
        wc.accumulate_with(|| {
            let xs = xc.data();
            let mut gw = vec![0.0f32; fout * fin];
            for o in 0..fout {
                for k in 0..fin {
                    gw[o * fin + k] = (0..n).map(|i| g[i * fout + o] * xs[i * fin + k]).sum();
                }
            }
            gw
        });
        bc.accumulate_with(|| (0..fout).map(|o| (0..n).map(|i| g[i * fout + o]).sum()).collect());
    }))
}

/// Bottleneck width for a squeeze-excite gate over `channels` channels.
pub fn se_hidden(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

/// Squeeze-and-excitation: `x · sigmoid(W2 · relu(W1 · avgpool(x) + b1) + b2)`
/// with the gate broadcast over every axis after the channel axis.
pub fn squeeze_excite(
    x: &Tensor,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
) -> Result<Tensor> {
    let pooled = mean_spatial(x)?;
    let hidden = relu(&linear(&pooled, w1, b1)?);
    let gate = sigmoid(&linear(&hidden, w2, b2)?);
    scale_channels(x, &gate)
}

fn check_4d(op: &str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(format!("{op}: expected [N, C, H, W], got {:?}", x.shape()))),
    }
}

/// Average pooling without padding.
pub fn avg_pool2d(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = check_4d("avg_pool2d", x)?;
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 || kh > h || kw > w {
        return Err(Error::param(format!(
            "avg_pool2d: kernel {kernel:?} stride {stride:?} invalid for input {:?}",
            x.shape()
        )));
    }
    let ho = (h - kh) / sh + 1;
    let wo = (w - kw) / sw + 1;
    let inv = 1.0 / (kh * kw) as f32;
    let xs = x.data();
    let mut out = vec![0.0f32; n * c * ho * wo];
    for (plane, dst) in xs.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for dy in 0..kh {
                    let row = (oy * sh + dy) * w + ox * sw;
                    acc += plane[row..row + kw].iter().sum::<f32>();
                }
                dst[oy * wo + ox] = acc * inv;
            }
        }
    }
    drop(xs);
    let xc = x.clone();
    Ok(Tensor::from_op(out, vec![n, c, ho, wo], &[x], move |g| {
        let mut gx = vec![0.0f32; n * c * h * w];
        for (gp, dst) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    let v = gp[oy * wo + ox] * inv;
                    for dy in 0..kh {
                        let row = (oy * sh + dy) * w + ox * sw;
                        dst[row..row + kw].iter_mut().for_each(|d| *d += v);
                    }
                }
            }
        }
        xc.accumulate_grad(&gx);
    }))
}

/// Nearest-neighbour upsampling by integer factors along H and W.
pub fn nearest_upsample2d(x: &Tensor, factor: (usize, usize)) -> Result<Tensor> {
    let (n, c, h, w) = check_4d("nearest_upsample2d", x)?;
    let (fh, fw) = factor;
    if fh == 0 || fw == 0 {
        return Err(Error::param(format!("nearest_upsample2d: factor {factor:?} must be positive")));
    }
    let (ho, wo) = (h * fh, w * fw);
    let xs = x.data();
    let mut out = vec![0.0f32; n * c * ho * wo];
    for (plane, dst) in xs.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                dst[oy * wo + ox] = plane[(oy / fh) * w + ox / fw];
            }
        }
    }
    drop(xs);
    let xc = x.clone();
    Ok(Tensor::from_op(out, vec![n, c, ho, wo], &[x], move |g| {
        let mut gx = vec![0.0f32; n * c * h * w];
        for (gp, dst) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    dst[(oy / fh) * w + ox / fw] += gp[oy * wo + ox];
                }
            }
        }
        xc.accumulate_grad(&gx);
    }))
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != x.len() || shape.contains(&0) {
        return Err(Error::shape(format!(
            "reshape: cannot view {:?} as {:?}",
            x.shape(),
            shape
        )));
    }
    let xc = x.clone();
    Ok(Tensor::from_op(x.to_vec(), shape.to_vec(), &[x], move |g| {
        xc.accumulate_grad(g);
    }))
}

/// Removes a size-1 axis.
pub fn squeeze(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.ndim() || x.shape()[axis] != 1 {
        return Err(Error::shape(format!(
            "squeeze: axis {axis} of {:?} is not a singleton",
            x.shape()
        )));
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    reshape(x, &shape)
}

/// Inserts a size-1 axis.
pub fn unsqueeze(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis > x.ndim() {
        return Err(Error::shape(format!(
            "unsqueeze: axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let mut shape = x.shape().to_vec();
    shape.insert(axis, 1);
    reshape(x, &shape)
}

/// Concatenates tensors along `axis`; all other dims must agree.
pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat: no inputs"))?;
    let rank = first.ndim();
    if axis >= rank {
        return Err(Error::shape(format!(
            "concat: axis {axis} out of range for {:?}",
            first.shape()
        )));
    }
    for t in xs {
        let ok = t.ndim() == rank
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape(format!(
                "concat: {:?} incompatible with {:?} along axis {axis}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = numel(&first.shape()[..axis]);
    let inner: usize = numel(&first.shape()[axis + 1..]);
    let widths: Vec<usize> = xs.iter().map(|t| t.shape()[axis] * inner).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (t, &wd) in xs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[o * wd..(o + 1) * wd]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total / inner;
    let owned: Vec<Tensor> = xs.iter().map(|&t| t.clone()).collect();
    Ok(Tensor::from_op(out, shape, xs, move |g| {
        let mut offset = 0;
        for (t, &wd) in owned.iter().zip(&widths) {
            t.accumulate_with(|| {
                let mut gt = Vec::with_capacity(outer * wd);
                for o in 0..outer {
                    let start = o * total + offset;
                    gt.extend_from_slice(&g[start..start + wd]);
                }
                gt
            });
            offset += wd;
        }
    }))
}
