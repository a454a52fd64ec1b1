//! Parameterized building blocks shared by the networks.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::init::fan_in_uniform;
use crate::tensor::{
    add, batch_norm, conv1d, conv2d, conv_transpose2d, relu, se_hidden, squeeze_excite, BatchNormState,
    Conv2dGeometry, NormMode, Tensor,
};

pub const SE_REDUCTION: usize = 8;

/// One line of an architecture manifest, written in
/// `(in_channels, out_channels, kernel)` notation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub transposed: bool,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize], sep: &str| v.iter().map(usize::to_string).collect::<Vec<_>>().join(sep);
        write!(
            f,
            "{} ({}, {}, {})",
            self.name,
            self.in_channels,
            self.out_channels,
            join(&self.kernel, "x")
        )?;
        if self.stride.iter().all(|&s| s == self.stride[0]) {
            write!(f, " stride={}", self.stride[0])?;
        } else {
            write!(f, " stride=({})", join(&self.stride, ","))?;
        }
        if self.transposed {
            write!(f, " transposed")?;
        }
        Ok(())
    }
}

/// Anything holding named tensors and batch-norm layers.
pub trait Layer {
    /// Every tensor that belongs in a checkpoint (parameters and running
    /// statistics), in a fixed order, names prefixed with `prefix`.
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);
    fn set_mode(&mut self, mode: NormMode);
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Transposed,
}

/// 2D (or, with `one_d`, 1D) convolution with an optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub geom: Conv2dGeometry,
    pub kind: ConvKind,
    one_d: bool,
}

impl Conv {
    pub fn new2d<R: Rng + ?Sized>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geom: Conv2dGeometry,
        bias: bool,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1;
        Self {
            weight: fan_in_uniform(rng, &[cout, cin, kernel.0, kernel.1], fan_in),
            bias: bias.then(|| fan_in_uniform(rng, &[cout], fan_in)),
            geom,
            kind: ConvKind::Conv,
            one_d: false,
        }
    }

    /// Transposed convolution; the weight is stored `[Cin, Cout, kh, kw]`.
    pub fn new_transposed<R: Rng + ?Sized>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geom: Conv2dGeometry,
    ) -> Self {
        let fan_in = cout * kernel.0 * kernel.1;
        Self {
            weight: fan_in_uniform(rng, &[cin, cout, kernel.0, kernel.1], fan_in),
            bias: None,
            geom,
            kind: ConvKind::Transposed,
            one_d: false,
        }
    }

    pub fn new1d<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, kernel: usize, bias: bool) -> Self {
        let fan_in = cin * kernel;
        Self {
            weight: fan_in_uniform(rng, &[cout, cin, kernel], fan_in),
            bias: bias.then(|| fan_in_uniform(rng, &[cout], fan_in)),
            geom: Conv2dGeometry::new((1, 1), (0, kernel / 2)),
            kind: ConvKind::Conv,
            one_d: true,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            ConvKind::Conv => self.weight.shape()[1],
            ConvKind::Transposed => self.weight.shape()[0],
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            ConvKind::Conv => self.weight.shape()[0],
            ConvKind::Transposed => self.weight.shape()[1],
        }
    }

    pub fn spec(&self, name: &str) -> LayerSpec {
        let (kernel, stride) = if self.one_d {
            (vec![self.weight.shape()[2]], vec![self.geom.stride.1])
        } else {
            (
                self.weight.shape()[2..].to_vec(),
                vec![self.geom.stride.0, self.geom.stride.1],
            )
        };
        LayerSpec {
            name: name.to_string(),
            in_channels: self.in_channels(),
            out_channels: self.out_channels(),
            kernel,
            stride,
            transposed: self.kind == ConvKind::Transposed,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match (self.kind, self.one_d) {
            (ConvKind::Conv, false) => conv2d(x, &self.weight, self.bias.as_ref(), self.geom),
            (ConvKind::Transposed, _) => conv_transpose2d(x, &self.weight, self.bias.as_ref(), self.geom),
            (ConvKind::Conv, true) => {
                conv1d(x, &self.weight, self.bias.as_ref(), self.geom.stride.1, self.geom.padding.1)
            }
        }
    }
}

impl Layer for Conv {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join_name(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join_name(prefix, "bias"), b.clone()));
        }
    }

    fn set_mode(&mut self, _mode: NormMode) {}
}

impl Layer for BatchNormState {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            out.push((join_name(prefix, name), t.clone()));
        }
    }

    fn set_mode(&mut self, mode: NormMode) {
        self.mode = mode;
    }
}

/// Squeeze-and-excitation gate with a `C / 8` bottleneck.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl SqueezeExcite {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Self {
        let hidden = se_hidden(channels, SE_REDUCTION);
        Self {
            w1: fan_in_uniform(rng, &[hidden, channels], channels),
            b1: fan_in_uniform(rng, &[hidden], channels),
            w2: fan_in_uniform(rng, &[channels, hidden], hidden),
            b2: fan_in_uniform(rng, &[channels], hidden),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        squeeze_excite(x, &self.w1, &self.b1, &self.w2, &self.b2)
    }
}

impl Layer for SqueezeExcite {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (name, t) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)] {
            out.push((join_name(prefix, name), t.clone()));
        }
    }

    fn set_mode(&mut self, _mode: NormMode) {}
}

fn conv3x3<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Conv {
    Conv::new2d(rng, channels, channels, (3, 3), Conv2dGeometry::new((1, 1), (1, 1)), false)
}

/// Residual SE block:
/// `act(SE(BN(conv3(ReLU(BN(conv_main(x)))))) + BN(conv_skip(x)))`.
///
/// `conv_main` and the 1x1 `conv_skip` carry the block stride. In the down
/// variant both are ordinary convolutions, in the up variant both are
/// transposed. The 1D variant uses the same layout on `[N, C, L]` inputs.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub main: Conv,
    pub bn1: BatchNormState,
    pub conv2: Conv,
    pub bn2: BatchNormState,
    pub se: SqueezeExcite,
    pub skip: Conv,
    pub skip_bn: BatchNormState,
    /// Whether the sum passes through a final ReLU.
    pub output_relu: bool,
}

impl ResBlock {
    /// Downsampling block; `kernel` must be odd and padding is `kernel / 2`.
    pub fn down<R: Rng + ?Sized>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        let pad = (kernel.0 / 2, kernel.1 / 2);
        let main = Conv::new2d(rng, cin, cout, kernel, Conv2dGeometry::new(stride, pad), false);
        let conv2 = conv3x3(rng, cout);
        let skip = Conv::new2d(rng, cin, cout, (1, 1), Conv2dGeometry::new(stride, (0, 0)), false);
        Self::assemble(rng, main, conv2, skip)
    }

    /// Upsampling block that multiplies each spatial size by its stride.
    pub fn up<R: Rng + ?Sized>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        let pad = (kernel.0 / 2, kernel.1 / 2);
        // (L-1)s - 2p + k + op = sL  =>  op = s - 1 for odd k with p = k/2;
        // the 1x1 skip needs the same output padding.
        let op = (stride.0 - 1, stride.1 - 1);
        let main = Conv::new_transposed(
            rng,
            cin,
            cout,
            kernel,
            Conv2dGeometry::new(stride, pad).with_output_padding(op),
        );
        let conv2 = conv3x3(rng, cout);
        let skip = Conv::new_transposed(
            rng,
            cin,
            cout,
            (1, 1),
            Conv2dGeometry::new(stride, (0, 0)).with_output_padding(op),
        );
        Self::assemble(rng, main, conv2, skip)
    }

    /// Stride-1 block over `[N, C, L]`.
    pub fn one_d<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, kernel: usize) -> Self {
        let main = Conv::new1d(rng, cin, cout, kernel, false);
        let conv2 = Conv::new1d(rng, cout, cout, kernel, false);
        let skip = Conv::new1d(rng, cin, cout, 1, false);
        Self::assemble(rng, main, conv2, skip)
    }

    fn assemble<R: Rng + ?Sized>(rng: &mut R, main: Conv, conv2: Conv, skip: Conv) -> Self {
        let cout = main.out_channels();
        Self {
            main,
            bn1: BatchNormState::new(cout),
            conv2,
            bn2: BatchNormState::new(cout),
            se: SqueezeExcite::new(rng, cout),
            skip,
            skip_bn: BatchNormState::new(cout),
            output_relu: true,
        }
    }

    pub fn spec(&self, name: &str) -> LayerSpec {
        self.main.spec(name)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = relu(&batch_norm(&self.main.forward(x)?, &self.bn1)?);
        let h = self.se.forward(&batch_norm(&self.conv2.forward(&h)?, &self.bn2)?)?;
        let s = batch_norm(&self.skip.forward(x)?, &self.skip_bn)?;
        if h.shape() != s.shape() {
            return Err(Error::shape(format!(
                "residual branch {:?} does not match skip {:?}",
                h.shape(),
                s.shape()
            )));
        }
        let y = add(&h, &s)?;
        Ok(if self.output_relu { relu(&y) } else { y })
    }
}

impl Layer for ResBlock {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.main.tensors(&join_name(prefix, "main"), out);
        self.bn1.tensors(&join_name(prefix, "bn1"), out);
        self.conv2.tensors(&join_name(prefix, "conv2"), out);
        self.bn2.tensors(&join_name(prefix, "bn2"), out);
        self.se.tensors(&join_name(prefix, "se"), out);
        self.skip.tensors(&join_name(prefix, "skip"), out);
        self.skip_bn.tensors(&join_name(prefix, "skip_bn"), out);
    }

    fn set_mode(&mut self, mode: NormMode) {
        for bn in [&mut self.bn1, &mut self.bn2, &mut self.skip_bn] {
            bn.mode = mode;
        }
    }
}
