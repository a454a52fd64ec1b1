use super::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel batch normalization parameters and running statistics.
///
/// `gamma`/`beta` are trainable leaves; the running statistics are constant
/// tensors updated in place by train-mode forward passes.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f32,
    pub eps: f32,
    pub mode: NormMode,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(vec![1.0; channels], &[channels]).expect("non-empty"),
            beta: Tensor::param(vec![0.0; channels], &[channels]).expect("non-empty"),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            mode: NormMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Normalizes `[N, C, ...]` per channel over the batch and all trailing axes.
///
/// Train mode uses batch statistics (accumulated in f64) and updates the
/// running estimates; eval mode applies the running estimates as a fixed
/// affine map.
pub fn batch_norm(input: &Tensor, state: &BatchNormState) -> Result<Tensor> {
    let shape = input.shape().to_vec();
    if shape.len() < 2 || shape[1] != state.channels() {
        return Err(Error::shape(format!(
            "batch_norm: input {:?} does not have {} channels on axis 1",
            shape,
            state.channels()
        )));
    }
    let (n, c, s) = (shape[0], shape[1], numel(&shape[2..]));
    let count = n * s;
    let xs = input.data();
    let gamma = state.gamma.to_vec();
    let beta = state.beta.to_vec();

    match state.mode {
        NormMode::Train => {
            if count < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batch_norm: input {:?} has a single element per channel",
                    shape
                )));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for (i, plane) in xs.chunks(s).enumerate() {
                mean[i % c] += plane.iter().map(|&v| v as f64).sum::<f64>();
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for (i, plane) in xs.chunks(s).enumerate() {
                let m = mean[i % c];
                var[i % c] += plane.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
            }
            var.iter_mut().for_each(|v| *v /= count as f64);

            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps as f64).sqrt()).collect();
            let mut xhat = vec![0.0f32; xs.len()];
            let mut out = vec![0.0f32; xs.len()];
            for (i, (plane, (hp, op))) in xs
                .chunks(s)
                .zip(xhat.chunks_mut(s).zip(out.chunks_mut(s)))
                .enumerate()
            {
                let ch = i % c;
                for ((&x, h), o) in plane.iter().zip(hp).zip(op) {
                    let v = ((x as f64 - mean[ch]) * inv_std[ch]) as f32;
                    *h = v;
                    *o = gamma[ch] * v + beta[ch];
                }
            }
            drop(xs);

            let mom = state.momentum as f64;
            let unbias = count as f64 / (count as f64 - 1.0);
            state.running_mean.update_data(|rm| {
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = ((1.0 - mom) * *r as f64 + mom * m) as f32;
                }
            });
            state.running_var.update_data(|rv| {
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = ((1.0 - mom) * *r as f64 + mom * v * unbias) as f32;
                }
            });

            let (xc, gc, bc) = (input.clone(), state.gamma.clone(), state.beta.clone());
            Ok(Tensor::from_op(out, shape, &[input, &state.gamma, &state.beta], move |g| {
                // Per-channel sums of g and g·x̂.
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (i, (gp, hp)) in g.chunks(s).zip(xhat.chunks(s)).enumerate() {
                    for (&gv, &hv) in gp.iter().zip(hp) {
                        sum_g[i % c] += gv as f64;
                        sum_gx[i % c] += gv as f64 * hv as f64;
                    }
                }
                gc.accumulate_with(|| sum_gx.iter().map(|&v| v as f32).collect());
                bc.accumulate_with(|| sum_g.iter().map(|&v| v as f32).collect());
                xc.accumulate_with(|| {
                    let m = count as f64;
                    let mut gx = vec![0.0f32; g.len()];
                    for (i, ((gp, hp), dst)) in
                        g.chunks(s).zip(xhat.chunks(s)).zip(gx.chunks_mut(s)).enumerate()
                    {
                        let ch = i % c;
                        let k = gamma[ch] as f64 * inv_std[ch] / m;
                        for ((&gv, &hv), d) in gp.iter().zip(hp).zip(dst) {
                            *d = (k * (m * gv as f64 - sum_g[ch] - hv as f64 * sum_gx[ch])) as f32;
                        }
                    }
                    gx
                });
            }))
        }
        NormMode::Eval => {
            let rm = state.running_mean.to_vec();
            let rv = state.running_var.to_vec();
            let scale: Vec<f32> = (0..c)
                .map(|ch| gamma[ch] / (rv[ch] + state.eps).sqrt())
                .collect();
            let inv: Vec<f32> = (0..c).map(|ch| 1.0 / (rv[ch] + state.eps).sqrt()).collect();
            let mut out = vec![0.0f32; xs.len()];
            for (i, (plane, op)) in xs.chunks(s).zip(out.chunks_mut(s)).enumerate() {
                let ch = i % c;
                for (&x, o) in plane.iter().zip(op) {
                    *o = scale[ch] * (x - rm[ch]) + beta[ch];
                }
            }
            drop(xs);
            let (xc, gc, bc) = (input.clone(), state.gamma.clone(), state.beta.clone());
            Ok(Tensor::from_op(out, shape, &[input, &state.gamma, &state.beta], move |g| {
                xc.accumulate_with(|| {
                    let mut gx = vec![0.0f32; g.len()];
                    for (i, (gp, dst)) in g.chunks(s).zip(gx.chunks_mut(s)).enumerate() {
                        let k = scale[i % c];
                        gp.iter().zip(dst).for_each(|(&gv, d)| *d = gv * k);
                    }
                    gx
                });
                let xs = xc.data();
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for (i, (gp, xp)) in g.chunks(s).zip(xs.chunks(s)).enumerate() {
                    let ch = i % c;
                    for (&gv, &xv) in gp.iter().zip(xp) {
                        sum_g[ch] += gv as f64;
                        sum_gx[ch] += gv as f64 * ((xv - rm[ch]) * inv[ch]) as f64;
                    }
                }
                drop(xs);
                gc.accumulate_with(|| sum_gx.iter().map(|&v| v as f32).collect());
                bc.accumulate_with(|| sum_g.iter().map(|&v| v as f32).collect());
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = init::normal(&mut rng, &[4, 3, 5, 5], 3.0);
        let x = crate::tensor::add_scalar(&x, 2.0);
        let bn = BatchNormState::new(3);
        let y = batch_norm(&x, &bn).unwrap();
        let ys = y.data();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| ys[(n * 3 + ch) * 25..(n * 3 + ch + 1) * 25].iter().map(|&v| v as f64))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-4, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn eval_mode_with_unit_stats_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = init::normal(&mut rng, &[2, 2, 3], 1.0);
        let mut bn = BatchNormState::new(2);
        bn.gamma.set_data(&[2.0, -0.5]).unwrap();
        bn.beta.set_data(&[0.25, 1.0]).unwrap();
        bn.eps = 0.0;
        bn.mode = NormMode::Eval;
        let y = batch_norm(&x, &bn).unwrap();
        let (xs, ys) = (x.data(), y.data());
        for i in 0..xs.len() {
            let ch = (i / 3) % 2;
            let expect = [2.0, -0.5][ch] * xs[i] + [0.25, 1.0][ch];
            assert!((ys[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new(vec![1.0, 3.0, 1.0, 3.0], &[2, 1, 2]).unwrap();
        let bn = BatchNormState::new(1);
        batch_norm(&x, &bn).unwrap();
        // mean 2, biased var 1, unbiased 4/3
        assert!((bn.running_mean.item() - 0.2).abs() < 1e-6);
        assert!((bn.running_var.item() - (0.9 + 0.1 * 4.0 / 3.0)).abs() < 1e-6);
        assert!(bn.running_var.item() >= 0.0);
    }

    #[test]
    fn single_element_batch_is_degenerate() {
        let x = Tensor::new(vec![1.0, 2.0], &[1, 2, 1]).unwrap();
        let bn = BatchNormState::new(2);
        assert!(matches!(batch_norm(&x, &bn), Err(Error::DegenerateBatch(_))));
        let mut bn = bn;
        bn.mode = NormMode::Eval;
        assert!(batch_norm(&x, &bn).is_ok());
    }
}
