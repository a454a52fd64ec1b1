//! In-painting autoencoder, bandwidth regressor and encoder transfer.

mod layers;

pub use layers::{Conv, ConvKind, Layer, LayerSpec, ResBlock, SqueezeExcite, SE_REDUCTION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    avg_pool2d, batch_norm, nearest_upsample2d, no_grad, relu, softplus, squeeze, BatchNormState,
    Conv2dGeometry, NormMode, Tensor,
};
use layers::join_name;

/// Channel width of the encoder and decoder.
pub const WIDTH: usize = 32;
pub const STEM_KERNEL: usize = 5;
pub const BLOCK_KERNEL: usize = 3;
pub const HEAD_KERNEL: usize = 5;
/// Time reduction of the encoder (pool, then two stride-2 blocks).
pub const TIME_REDUCTION: usize = 8;

const ENCODER_STREAM: u64 = 0;
const DECODER_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A trainable network with a checkpointable set of named tensors.
pub trait Model: Layer {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    /// Architecture listing, one layer per line.
    fn manifest(&self) -> Vec<String>;
    /// Parameters the optimizer should update.
    fn trainable(&self) -> Vec<Tensor>;
    /// Construction arguments as `key=value` pairs, enough to rebuild the
    /// architecture before loading a checkpoint.
    fn describe(&self) -> Vec<(String, String)>;

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.tensors("", &mut out);
        out
    }
}

/// Number of trainable scalars.
pub fn count_params(model: &dyn Model) -> usize {
    model.named_tensors().iter().filter(|(_, t)| t.requires_grad()).map(|(_, t)| t.len()).sum()
}

/// Stem, time pooling and two strided residual blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub stem: Conv,
    pub stem_bn: BatchNormState,
    pub stem_se: SqueezeExcite,
    pub enc1: ResBlock,
    pub enc2: ResBlock,
}

impl Encoder {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize) -> Self {
        let p = STEM_KERNEL / 2;
        let stem = Conv::new2d(
            rng,
            in_channels,
            WIDTH,
            (STEM_KERNEL, STEM_KERNEL),
            Conv2dGeometry::new((1, 1), (p, p)),
            false,
        );
        let stem_se = SqueezeExcite::new(rng, WIDTH);
        let k = (BLOCK_KERNEL, BLOCK_KERNEL);
        Self {
            stem,
            stem_bn: BatchNormState::new(WIDTH),
            stem_se,
            enc1: ResBlock::down(rng, WIDTH, WIDTH, k, (2, 1)),
            enc2: ResBlock::down(rng, WIDTH, WIDTH, k, (2, 1)),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.stem.in_channels()
    }

    /// `[N, C, T, F] -> [N, 32, T/8, F]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match *x.shape() {
            [_, c, t, _] if c == self.in_channels() && t % TIME_REDUCTION == 0 && t > 0 => {}
            _ => {
                return Err(Error::shape(format!(
                    "encoder expects [N, {}, T, F] with T a positive multiple of {TIME_REDUCTION}, got {:?}",
                    self.in_channels(),
                    x.shape()
                )))
            }
        }
        let h = relu(&batch_norm(&self.stem.forward(x)?, &self.stem_bn)?);
        let h = self.stem_se.forward(&h)?;
        let h = avg_pool2d(&h, (2, 1), (2, 1))?;
        self.enc2.forward(&self.enc1.forward(&h)?)
    }

    pub fn manifest(&self, prefix: &str) -> Vec<String> {
        vec![
            self.stem.spec(&join_name(prefix, "stem.conv")).to_string(),
            format!("{} avg (2x1) stride=(2,1)", join_name(prefix, "pool")),
            self.enc1.spec(&join_name(prefix, "enc1")).to_string(),
            self.enc2.spec(&join_name(prefix, "enc2")).to_string(),
        ]
    }
}

impl Layer for Encoder {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.stem.tensors(&join_name(prefix, "stem.conv"), out);
        self.stem_bn.tensors(&join_name(prefix, "stem.bn"), out);
        self.stem_se.tensors(&join_name(prefix, "stem.se"), out);
        self.enc1.tensors(&join_name(prefix, "enc1"), out);
        self.enc2.tensors(&join_name(prefix, "enc2"), out);
    }

    fn set_mode(&mut self, mode: NormMode) {
        self.stem_bn.mode = mode;
        self.enc1.set_mode(mode);
        self.enc2.set_mode(mode);
    }
}

/// Encoder-decoder that reconstructs a masked multichannel STFT.
#[derive(Debug, Clone)]
pub struct InpaintNet {
    pub encoder: Encoder,
    pub dec1: ResBlock,
    pub dec2: ResBlock,
    pub head: Conv,
}

impl InpaintNet {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let encoder = Encoder::new(&mut stream_rng(seed, ENCODER_STREAM), in_channels);
        let rng = &mut stream_rng(seed, DECODER_STREAM);
        let k = (BLOCK_KERNEL, BLOCK_KERNEL);
        let p = HEAD_KERNEL / 2;
        Self {
            encoder,
            dec1: ResBlock::up(rng, WIDTH, WIDTH, k, (2, 1)),
            dec2: ResBlock::up(rng, WIDTH, WIDTH, k, (2, 1)),
            head: Conv::new2d(
                rng,
                WIDTH,
                in_channels,
                (HEAD_KERNEL, HEAD_KERNEL),
                Conv2dGeometry::new((1, 1), (p, p)),
                true,
            ),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.encoder.in_channels()
    }

    /// Returns `(latent, reconstruction)`.
    pub fn forward_parts(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let latent = self.encoder.forward(x)?;
        let h = self.dec2.forward(&self.dec1.forward(&latent)?)?;
        let h = nearest_upsample2d(&h, (2, 1))?;
        let recon = self.head.forward(&h)?;
        Ok((latent, recon))
    }
}

impl Layer for InpaintNet {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.encoder.tensors(&join_name(prefix, "encoder"), out);
        self.dec1.tensors(&join_name(prefix, "dec1"), out);
        self.dec2.tensors(&join_name(prefix, "dec2"), out);
        self.head.tensors(&join_name(prefix, "head"), out);
    }

    fn set_mode(&mut self, mode: NormMode) {
        self.encoder.set_mode(mode);
        self.dec1.set_mode(mode);
        self.dec2.set_mode(mode);
    }
}

impl Model for InpaintNet {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_parts(x).map(|(_, recon)| recon)
    }

    fn manifest(&self) -> Vec<String> {
        let mut lines = self.encoder.manifest("");
        lines.push(self.dec1.spec("dec1").to_string());
        lines.push(self.dec2.spec("dec2").to_string());
        lines.push("unpool nearest (2x1)".to_string());
        lines.push(self.head.spec("head").to_string());
        lines
    }

    fn trainable(&self) -> Vec<Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).filter(Tensor::requires_grad).collect()
    }

    fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("model".into(), "inpaint".into()),
            ("in_channels".into(), self.in_channels().to_string()),
        ]
    }
}

/// Channel trace of the 1D regression head.
pub const HEAD_CHANNELS: [usize; 6] = [32, 16, 8, 4, 2, 1];

/// Encoder followed by time-collapsing blocks and a 1D head producing one
/// positive value per frequency bin.
#[derive(Debug, Clone)]
pub struct BandwidthNet {
    pub encoder: Encoder,
    pub collapse: Vec<ResBlock>,
    pub head: Vec<ResBlock>,
    /// Frozen encoders run in eval mode and are excluded from [`Model::trainable`].
    pub frozen: bool,
    time: usize,
}

impl BandwidthNet {
    /// `time` is the STFT time length the network will see; `time / 8` must
    /// be a power of two so the collapse blocks reach exactly 1.
    pub fn new(in_channels: usize, time: usize, encoder_seed: u64, decoder_seed: u64) -> Result<Self> {
        let latent = time / TIME_REDUCTION;
        if !time.is_multiple_of(TIME_REDUCTION) || latent == 0 || !latent.is_power_of_two() {
            return Err(Error::Config(format!(
                "time length {time} does not collapse to 1: need {TIME_REDUCTION} times a power of two"
            )));
        }
        let encoder = Encoder::new(&mut stream_rng(encoder_seed, ENCODER_STREAM), in_channels);
        let rng = &mut stream_rng(decoder_seed, DECODER_STREAM);
        let k = (BLOCK_KERNEL, BLOCK_KERNEL);
        let collapse = (0..latent.trailing_zeros())
            .map(|_| ResBlock::down(rng, WIDTH, WIDTH, k, (2, 1)))
            .collect();
        let mut head: Vec<ResBlock> = HEAD_CHANNELS
            .windows(2)
            .map(|w| ResBlock::one_d(rng, w[0], w[1], HEAD_KERNEL))
            .collect();
        // A ReLU in front of the softplus would floor every output at ln 2.
        head.last_mut().expect("five blocks").output_relu = false;
        Ok(Self {
            encoder,
            collapse,
            head,
            frozen: false,
            time,
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn in_channels(&self) -> usize {
        self.encoder.in_channels()
    }

    /// The decoder (collapse blocks and head) as named tensors.
    pub fn decoder_tensors(&self) -> Vec<(String, Tensor)> {
        self.named_tensors().into_iter().filter(|(n, _)| !n.starts_with("encoder.")).collect()
    }
}

impl Layer for BandwidthNet {
    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.encoder.tensors(&join_name(prefix, "encoder"), out);
        for (i, b) in self.collapse.iter().enumerate() {
            b.tensors(&join_name(prefix, &format!("collapse{}", i + 1)), out);
        }
        for (i, b) in self.head.iter().enumerate() {
            b.tensors(&join_name(prefix, &format!("head{}", i + 1)), out);
        }
    }

    fn set_mode(&mut self, mode: NormMode) {
        self.encoder.set_mode(if self.frozen { NormMode::Eval } else { mode });
        self.collapse.iter_mut().chain(self.head.iter_mut()).for_each(|b| b.set_mode(mode));
    }
}

impl Model for BandwidthNet {
    /// `[N, C, T, F] -> [N, F]`, strictly positive.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 4 || x.shape()[2] != self.time {
            return Err(Error::shape(format!(
                "bandwidth net built for time length {} got input {:?}",
                self.time,
                x.shape()
            )));
        }
        let mut h = if self.frozen {
            no_grad(|| self.encoder.forward(x))?.detach()
        } else {
            self.encoder.forward(x)?
        };
        for b in &self.collapse {
            h = b.forward(&h)?;
        }
        let mut h = squeeze(&h, 2)?;
        for b in &self.head {
            h = b.forward(&h)?;
        }
        Ok(softplus(&squeeze(&h, 1)?))
    }

    fn manifest(&self) -> Vec<String> {
        let mut lines = self.encoder.manifest("");
        for (i, b) in self.collapse.iter().enumerate() {
            lines.push(b.spec(&format!("collapse{}", i + 1)).to_string());
        }
        for (i, b) in self.head.iter().enumerate() {
            lines.push(b.spec(&format!("head{}", i + 1)).to_string());
        }
        lines.push("output softplus".to_string());
        lines
    }

    fn trainable(&self) -> Vec<Tensor> {
        self.named_tensors()
            .into_iter()
            .filter(|(n, t)| t.requires_grad() && !(self.frozen && n.starts_with("encoder.")))
            .map(|(_, t)| t)
            .collect()
    }

    fn describe(&self) -> Vec<(String, String)> {
        vec![
            ("model".into(), "bandwidth".into()),
            ("in_channels".into(), self.in_channels().to_string()),
            ("time".into(), self.time.to_string()),
            ("frozen".into(), self.frozen.to_string()),
        ]
    }
}

/// Copies the encoder of `src` into `dst` (parameters and running statistics)
/// and sets the freeze flag.
pub fn transfer_encoder(src: &InpaintNet, dst: &mut BandwidthNet, freeze: bool) -> Result<()> {
    let (a, b) = (src.encoder.manifest(""), dst.encoder.manifest(""));
    let mut diffs: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("{x} vs {y}"))
        .collect();
    if a.len() != b.len() {
        diffs.push(format!("{} vs {} layers", a.len(), b.len()));
    }
    let mut st = Vec::new();
    src.encoder.tensors("", &mut st);
    let mut dt = Vec::new();
    dst.encoder.tensors("", &mut dt);
    for ((sn, s), (dn, d)) in st.iter().zip(&dt) {
        if sn != dn || s.shape() != d.shape() {
            diffs.push(format!("{sn} {:?} vs {dn} {:?}", s.shape(), d.shape()));
        }
    }
    if !diffs.is_empty() {
        return Err(Error::Transfer(diffs.join("; ")));
    }
    for ((_, s), (_, d)) in st.iter().zip(&dt) {
        d.set_data(&s.data())?;
    }
    dst.frozen = freeze;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(shape: &[usize], seed: u64) -> Tensor {
        crate::tensor::init::normal(&mut ChaCha8Rng::seed_from_u64(seed), shape, 1.0)
    }

    #[test]
    fn desk_shapes() {
        let net = InpaintNet::new(8, 1);
        let x = input(&[2, 8, 8, 64], 2);
        let (latent, recon) = net.forward_parts(&x).unwrap();
        assert_eq!(latent.shape(), [2, 32, 1, 64]);
        assert_eq!(recon.shape(), [2, 8, 8, 64]);
    }

    #[test]
    fn rejects_bad_time() {
        let net = InpaintNet::new(8, 1);
        assert!(matches!(net.forward(&input(&[1, 8, 12, 16], 0)), Err(Error::Shape(_))));
        assert!(matches!(BandwidthNet::new(8, 48, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn bandwidth_outputs_positive() {
        let net = BandwidthNet::new(8, 32, 3, 4).unwrap();
        assert_eq!(net.collapse.len(), 2);
        let y = net.forward(&input(&[2, 8, 32, 16], 5)).unwrap();
        assert_eq!(y.shape(), [2, 16]);
        assert!(y.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn manifest_lines() {
        let net = InpaintNet::new(8, 0);
        let m = net.manifest();
        assert!(m.contains(&"stem.conv (8, 32, 5x5) stride=1".to_string()), "{m:?}");
        assert!(m.contains(&"enc1 (32, 32, 3x3) stride=(2,1)".to_string()), "{m:?}");
        assert!(m.contains(&"dec1 (32, 32, 3x3) stride=(2,1) transposed".to_string()), "{m:?}");
        let bw = BandwidthNet::new(8, 32, 0, 0).unwrap().manifest();
        let heads: Vec<&String> = bw.iter().filter(|l| l.starts_with("head")).collect();
        assert_eq!(heads.len(), 5);
        assert_eq!(heads[0], "head1 (32, 16, 5) stride=1");
        assert_eq!(heads[4], "head5 (2, 1, 5) stride=1");
    }

    #[test]
    fn decoder_seed_is_independent_of_encoder_seed() {
        let a = BandwidthNet::new(8, 32, 1, 9).unwrap();
        let b = BandwidthNet::new(8, 32, 2, 9).unwrap();
        for ((na, ta), (nb, tb)) in a.decoder_tensors().iter().zip(&b.decoder_tensors()) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_vec(), tb.to_vec());
        }
        assert_ne!(a.encoder.stem.weight.to_vec(), b.encoder.stem.weight.to_vec());
    }

    #[test]
    fn transfer_copies_and_freezes() {
        let src = InpaintNet::new(8, 11);
        let mut dst = BandwidthNet::new(8, 32, 12, 13).unwrap();
        let all = count_params(&dst);
        transfer_encoder(&src, &mut dst, true).unwrap();
        let x = input(&[1, 8, 32, 16], 3);
        let mut s = src.clone();
        s.set_mode(NormMode::Eval);
        dst.set_mode(NormMode::Eval);
        let a = s.encoder.forward(&x).unwrap().to_vec();
        let b = dst.encoder.forward(&x).unwrap().to_vec();
        assert_eq!(a, b);
        let enc: usize = {
            let mut v = Vec::new();
            dst.encoder.tensors("", &mut v);
            v.iter().filter(|(_, t)| t.requires_grad()).map(|(_, t)| t.len()).sum()
        };
        let trainable: usize = dst.trainable().iter().map(Tensor::len).sum();
        assert_eq!(trainable, all - enc);
    }

    #[test]
    fn transfer_mismatch_lists_layers() {
        let src = InpaintNet::new(4, 0);
        let mut dst = BandwidthNet::new(8, 32, 0, 0).unwrap();
        let err = transfer_encoder(&src, &mut dst, false).unwrap_err().to_string();
        assert!(err.contains("stem.conv"), "{err}");
    }
}
