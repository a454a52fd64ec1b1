//! Finite-difference gradient checks over every differentiable op and the
//! residual blocks, parameterized by seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::models::{Layer, ResBlock};
use crate::tensor::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::tensor::*;
use crate::training::bandwidth_loss;

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn normal_param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let data = (0..numel(shape)).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::param(data, shape).expect("shape matches")
}

fn uniform_param(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let data = (0..numel(shape)).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::param(data, shape).expect("shape matches")
}

fn block_inputs(x: Tensor, block: &ResBlock) -> Vec<Tensor> {
    let mut named = Vec::new();
    block.tensors("", &mut named);
    std::iter::once(x)
        .chain(named.into_iter().map(|(_, t)| t).filter(Tensor::requires_grad))
        .collect()
}

/// Runs every case once with inputs drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut out = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, $f:expr) => {{
            let inputs: Vec<Tensor> = $inputs;
            let report = grad_check($f, &inputs, &cfg)?;
            out.push(CaseResult { name: $name, report });
        }};
    }
    let r = &mut rng;

    case!("relu", vec![normal_param(r, &[2, 3, 4])], |x| Ok(relu(&x[0])));
    case!("sigmoid", vec![normal_param(r, &[2, 3, 4])], |x| Ok(sigmoid(&x[0])));
    case!("softplus", vec![normal_param(r, &[2, 3, 4])], |x| Ok(softplus(&x[0])));
    case!("ln", vec![uniform_param(r, &[2, 3, 4], 0.5, 2.0)], |x| Ok(ln(&x[0])));
    case!("square", vec![normal_param(r, &[2, 3, 4])], |x| Ok(square(&x[0])));
    case!("mul_scalar", vec![normal_param(r, &[5])], |x| Ok(mul_scalar(&x[0], -1.7)));
    case!("add_scalar", vec![normal_param(r, &[5])], |x| Ok(add_scalar(&x[0], 0.3)));
    case!("add", vec![normal_param(r, &[3, 4]), normal_param(r, &[3, 4])], |x| add(&x[0], &x[1]));
    case!("sub", vec![normal_param(r, &[3, 4]), normal_param(r, &[3, 4])], |x| sub(&x[0], &x[1]));
    case!("mul", vec![normal_param(r, &[3, 4]), normal_param(r, &[3, 4])], |x| mul(&x[0], &x[1]));
    case!("sum", vec![normal_param(r, &[3, 4])], |x| Ok(sum(&x[0])));
    case!("mean", vec![normal_param(r, &[3, 4])], |x| Ok(mean(&x[0])));
    case!("mse", vec![normal_param(r, &[2, 3, 4]), normal_param(r, &[2, 3, 4])], |x| mse(&x[0], &x[1]));
    case!("mean_spatial", vec![normal_param(r, &[2, 3, 4, 5])], |x| mean_spatial(&x[0]));
    case!(
        "scale_channels",
        vec![normal_param(r, &[2, 3, 4, 5]), normal_param(r, &[2, 3])],
        |x| scale_channels(&x[0], &x[1])
    );
    case!(
        "linear",
        vec![normal_param(r, &[3, 5]), normal_param(r, &[4, 5]), normal_param(r, &[4])],
        |x| linear(&x[0], &x[1], &x[2])
    );
    let h = se_hidden(8, 8);
    case!(
        "squeeze_excite",
        vec![
            normal_param(r, &[1, 8, 3, 3]),
            normal_param(r, &[h, 8]),
            normal_param(r, &[h]),
            normal_param(r, &[8, h]),
            normal_param(r, &[8]),
        ],
        |x| squeeze_excite(&x[0], &x[1], &x[2], &x[3], &x[4])
    );
    case!("avg_pool2d", vec![normal_param(r, &[2, 3, 6, 4])], |x| avg_pool2d(&x[0], (2, 1), (2, 1)));
    case!("nearest_upsample2d", vec![normal_param(r, &[2, 3, 3, 4])], |x| nearest_upsample2d(&x[0], (2, 1)));
    case!("reshape", vec![normal_param(r, &[2, 6])], |x| reshape(&x[0], &[3, 4]));
    case!("squeeze", vec![normal_param(r, &[2, 1, 3])], |x| squeeze(&x[0], 1));
    case!("unsqueeze", vec![normal_param(r, &[2, 3])], |x| unsqueeze(&x[0], 2));
    case!("concat", vec![normal_param(r, &[2, 3, 2]), normal_param(r, &[2, 1, 2])], |x| concat(
        &[&x[0], &x[1]],
        1
    ));
    case!(
        "conv2d",
        vec![normal_param(r, &[2, 3, 5, 6]), normal_param(r, &[4, 3, 3, 3]), normal_param(r, &[4])],
        |x| conv2d(&x[0], &x[1], Some(&x[2]), Conv2dGeometry::new((2, 1), (1, 1)))
    );
    case!(
        "conv_transpose2d",
        vec![normal_param(r, &[2, 3, 3, 4]), normal_param(r, &[3, 4, 3, 3]), normal_param(r, &[4])],
        |x| conv_transpose2d(
            &x[0],
            &x[1],
            Some(&x[2]),
            Conv2dGeometry::new((2, 1), (1, 1)).with_output_padding((1, 0))
        )
    );
    case!(
        "conv1d",
        vec![normal_param(r, &[2, 3, 9]), normal_param(r, &[4, 3, 5]), normal_param(r, &[4])],
        |x| conv1d(&x[0], &x[1], Some(&x[2]), 1, 2)
    );

    let bn = BatchNormState::new(3);
    bn.gamma.set_data(&normal_param(r, &[3]).to_vec())?;
    bn.beta.set_data(&normal_param(r, &[3]).to_vec())?;
    case!(
        "batch_norm_train",
        vec![normal_param(r, &[2, 3, 4, 4]), bn.gamma.clone(), bn.beta.clone()],
        |x| batch_norm(&x[0], &bn)
    );
    let mut bn_eval = bn.clone();
    bn_eval.mode = NormMode::Eval;
    bn_eval.running_mean.set_data(&[0.2, -0.1, 0.5])?;
    bn_eval.running_var.set_data(&[0.5, 2.0, 1.5])?;
    case!(
        "batch_norm_eval",
        vec![normal_param(r, &[2, 3, 4, 4]), bn_eval.gamma.clone(), bn_eval.beta.clone()],
        |x| batch_norm(&x[0], &bn_eval)
    );

    let target: Vec<f32> = (0..32)
        .map(|i| if i % 5 == 0 { r.random_range(0.05f32..1.0) } else { 0.0 })
        .collect();
    let target = Tensor::new(target, &[2, 16])?;
    case!("bandwidth_loss", vec![uniform_param(r, &[2, 16], 0.05, 1.5)], |x| bandwidth_loss(
        &target, &x[0], 1e-6
    ));

    let down = ResBlock::down(r, 4, 4, (3, 3), (2, 1));
    let x = normal_param(r, &[1, 4, 4, 8]);
    case!("down_block", block_inputs(x, &down), |x| down.forward(&x[0]));
    let up = ResBlock::up(r, 4, 4, (3, 3), (2, 1));
    let x = normal_param(r, &[1, 4, 2, 8]);
    case!("up_block", block_inputs(x, &up), |x| up.forward(&x[0]));
    let mut one = ResBlock::one_d(r, 4, 2, 5);
    one.output_relu = false;
    let x = normal_param(r, &[2, 4, 12]);
    case!("one_d_block", block_inputs(x, &one), |x| one.forward(&x[0]));
    Ok(out)
}
