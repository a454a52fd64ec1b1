//! Preprocessing from raw multichannel IQ frames to standardized STFT
//! examples, and the channel in-painting corruption.
//!
//! STFT channels are interleaved per antenna: channel `2k` holds the real
//! part and channel `2k + 1` the imaginary part of antenna `k`'s transform,
//! so masking one antenna zeroes two adjacent channels.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Periodic Hann window, `w[i] = 0.5 (1 - cos(2πi / n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::param(format!("Hann window length must be >= 2, got {n}")));
    }
    Ok((0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect())
}

/// Unnormalized forward DFT, `X[k] = Σ x[m] e^{-j2πkm/n}`.
///
/// Power-of-two lengths use an iterative radix-2 FFT; other lengths fall back
/// to the direct sum.
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    if buf.len().is_power_of_two() {
        fft_in_place(&mut buf, false);
        buf
    } else {
        direct_dft(&buf)
    }
}

/// Inverse of [`dft`] including the `1/n` factor.
pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() as f64;
    let mut buf = x.to_vec();
    if buf.len().is_power_of_two() {
        fft_in_place(&mut buf, true);
    } else {
        buf = buf.iter().map(|v| v.conj()).collect();
        buf = direct_dft(&buf).into_iter().map(|v| v.conj()).collect();
    }
    buf.iter_mut().for_each(|v| *v /= n);
    buf
}

fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(m, &v)| {
                    // Reduce k·m mod n before scaling to keep the angle small.
                    let phase = -2.0 * PI * ((k * m) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// One multichannel time-domain capture, stored `[antenna][sample][re, im]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    antennas: usize,
    samples: usize,
    data: Vec<f32>,
}

impl IqFrame {
    pub fn new(antennas: usize, samples: usize, data: Vec<f32>) -> Result<Self> {
        if antennas == 0 || samples == 0 {
            return Err(Error::shape("IQ frame needs at least one antenna and one sample"));
        }
        if data.len() != antennas * samples * 2 {
            return Err(Error::shape(format!(
                "IQ frame [{antennas}, {samples}, 2] needs {} values, got {}",
                antennas * samples * 2,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("IQ frame value at flat index {i}")));
        }
        Ok(Self { antennas, samples, data })
    }

    pub fn zeros(antennas: usize, samples: usize) -> Self {
        Self {
            antennas,
            samples,
            data: vec![0.0; antennas * samples * 2],
        }
    }

    pub fn from_complex(antennas: &[Vec<Complex64>]) -> Result<Self> {
        let samples = antennas.first().map_or(0, Vec::len);
        if antennas.iter().any(|a| a.len() != samples) {
            return Err(Error::shape("antenna sequences differ in length"));
        }
        let data = antennas
            .iter()
            .flat_map(|a| a.iter().flat_map(|c| [c.re as f32, c.im as f32]))
            .collect();
        Self::new(antennas.len(), samples, data)
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn antenna(&self, k: usize) -> impl Iterator<Item = Complex64> + '_ {
        self.data[k * self.samples * 2..(k + 1) * self.samples * 2]
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
    }
}

/// Real `[2A, T, F]` time-frequency tensor with interleaved Re/Im channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StftExample {
    pub channels: usize,
    pub time: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl StftExample {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.time, self.bins]
    }

    pub fn antennas(&self) -> usize {
        self.channels / 2
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.time * self.bins;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Hann-windowed, non-overlapping STFT with `chunks` time steps of `bins`
/// samples each. Requires `samples == chunks * bins`.
pub fn frame_to_stft(frame: &IqFrame, chunks: usize, bins: usize) -> Result<StftExample> {
    let window = hann_window(bins)?;
    if chunks == 0 || !frame.samples.is_multiple_of(bins) || frame.samples / bins != chunks {
        return Err(Error::shape(format!(
            "frame of {} samples cannot be cut into {chunks} chunks of {bins} bins",
            frame.samples
        )));
    }
    let plane = chunks * bins;
    let mut data = vec![0.0f32; 2 * frame.antennas * plane];
    let mut chunk = vec![Complex64::new(0.0, 0.0); bins];
    for k in 0..frame.antennas {
        let samples: Vec<Complex64> = frame.antenna(k).collect();
        for t in 0..chunks {
            for (i, c) in chunk.iter_mut().enumerate() {
                *c = samples[t * bins + i] * window[i];
            }
            let spec = dft(&chunk);
            let re = &mut data[(2 * k) * plane + t * bins..(2 * k) * plane + (t + 1) * bins];
            re.iter_mut().zip(&spec).for_each(|(d, s)| *d = s.re as f32);
            let im = &mut data[(2 * k + 1) * plane + t * bins..(2 * k + 1) * plane + (t + 1) * bins];
            im.iter_mut().zip(&spec).for_each(|(d, s)| *d = s.im as f32);
        }
    }
    Ok(StftExample {
        channels: 2 * frame.antennas,
        time: chunks,
        bins,
        data,
    })
}

/// Output of [`standardize`]; `degenerate` is set for constant inputs, which
/// come back as all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub values: Vec<f32>,
    pub degenerate: bool,
}

/// Zero-mean, unit-variance rescaling over all elements (population std,
/// floored at 1e-12).
pub fn standardize(x: &[f32]) -> Standardized {
    let n = x.len().max(1) as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std == 0.0;
    if degenerate {
        log::warn!("standardizing a constant example of {} values", x.len());
    }
    let denom = std + 1e-12;
    Standardized {
        values: x.iter().map(|&v| ((v as f64 - mean) / denom) as f32).collect(),
        degenerate,
    }
}

impl StftExample {
    /// Copy with all elements standardized together.
    pub fn standardized(&self) -> (StftExample, bool) {
        let s = standardize(&self.data);
        (
            StftExample {
                data: s.values,
                ..self.clone()
            },
            s.degenerate,
        )
    }
}

/// Corrupted input / clean target pair for in-painting.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedExample {
    pub input: StftExample,
    pub target: StftExample,
    pub masked_antenna: usize,
}

/// Zeroes channels `2·antenna` and `2·antenna + 1` in a copy of `x`.
pub fn mask_channels(x: &StftExample, antenna: usize) -> Result<MaskedExample> {
    if antenna >= x.antennas() {
        return Err(Error::param(format!(
            "antenna {antenna} out of range for {} antennas",
            x.antennas()
        )));
    }
    let mut input = x.clone();
    let plane = x.time * x.bins;
    input.data[2 * antenna * plane..(2 * antenna + 2) * plane].fill(0.0);
    Ok(MaskedExample {
        input,
        target: x.clone(),
        masked_antenna: antenna,
    })
}

/// Uniform draw of the antenna to mask.
pub fn draw_mask_antenna<R: Rng + ?Sized>(rng: &mut R, antennas: usize) -> usize {
    rng.random_range(0..antennas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// O(n²) DFT written independently of the library path.
    fn oracle_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len() as f64;
        (0..x.len())
            .map(|k| {
                let mut acc = c(0.0, 0.0);
                for (m, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k as f64) * (m as f64) / n;
                    acc += v * c(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    fn random_complex(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(StandardNormal.sample(rng), StandardNormal.sample(rng)))
            .collect()
    }

    #[test]
    fn hann_values() {
        let w = hann_window(4).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for n in [2usize, 6, 64, 2048] {
            let w = hann_window(n).unwrap();
            assert_eq!(w[0], 0.0);
            assert!((w.iter().sum::<f64>() / n as f64 - 0.5).abs() < 1e-12);
        }
        assert!(hann_window(1).is_err());
    }

    #[test]
    fn dft_constant_and_tone() {
        let x = vec![c(1.0, 0.0); 8];
        let spec = dft(&x);
        assert!((spec[0] - c(8.0, 0.0)).norm() < 1e-12);
        assert!(spec[1..].iter().all(|v| v.norm() < 1e-12));

        let tone: Vec<Complex64> = (0..8)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * 3.0 * m as f64 / 8.0))
            .collect();
        let spec = dft(&tone);
        for (k, v) in spec.iter().enumerate() {
            let expect = if k == 3 { 8.0 } else { 0.0 };
            assert!((v - c(expect, 0.0)).norm() < 1e-9, "bin {k}: {v}");
        }
    }

    #[test]
    fn fft_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [8usize, 64, 12] {
            let x = random_complex(&mut rng, n);
            let err = dft(&x)
                .iter()
                .zip(oracle_dft(&x))
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "n={n}: {err}");
        }
    }

    #[test]
    fn idft_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for n in [16usize, 10] {
            let x = random_complex(&mut rng, n);
            let back = idft(&dft(&x));
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_frame_gives_zero_stft() {
        let frame = IqFrame::zeros(2, 64);
        let s = frame_to_stft(&frame, 4, 16).unwrap();
        assert_eq!(s.shape(), [4, 4, 16]);
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn integer_bin_tone_leaks_only_to_neighbours() {
        let bins = 64;
        let tone: Vec<Complex64> = (0..bins)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * 5.0 * m as f64 / bins as f64))
            .collect();
        let frame = IqFrame::from_complex(&[tone]).unwrap();
        let s = frame_to_stft(&frame, 1, bins).unwrap();
        let mag: Vec<f64> = (0..bins)
            .map(|k| (s.channel(0)[k] as f64).hypot(s.channel(1)[k] as f64))
            .collect();
        let peak = mag[5];
        // Periodic Hann spectrum: centre n/2, neighbours n/4.
        assert!((peak - 32.0).abs() < 1e-4);
        assert!((mag[4] - 16.0).abs() < 1e-4 && (mag[6] - 16.0).abs() < 1e-4);
        for (k, m) in mag.iter().enumerate() {
            if !(4..=6).contains(&k) {
                assert!(*m < 1e-6 * peak, "bin {k}: {m}");
            }
        }
    }

    #[test]
    fn stft_rejects_bad_lengths() {
        let frame = IqFrame::zeros(1, 100);
        assert!(frame_to_stft(&frame, 3, 32).is_err());
        let frame = IqFrame::zeros(1, 128);
        assert!(frame_to_stft(&frame, 3, 32).is_err());
    }

    #[test]
    fn standardize_examples() {
        let s = standardize(&[1.0, 3.0]);
        assert_eq!(s.values, vec![-1.0, 1.0]);
        assert!(!s.degenerate);
        let again = standardize(&s.values);
        assert!(again.values.iter().zip(&s.values).all(|(a, b)| (a - b).abs() < 1e-6));
        let flat = standardize(&[2.5; 10]);
        assert!(flat.degenerate);
        assert!(flat.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masking_zeroes_one_antenna_pair() {
        let ex = StftExample {
            channels: 8,
            time: 2,
            bins: 3,
            data: (0..48).map(|v| v as f32 + 1.0).collect(),
        };
        let m = mask_channels(&ex, 0).unwrap();
        assert!(m.input.channel(0).iter().chain(m.input.channel(1)).all(|&v| v == 0.0));
        for ch in 2..8 {
            assert_eq!(m.input.channel(ch), ex.channel(ch));
        }
        assert_eq!(m.target, ex);
        let twice = mask_channels(&m.input, 0).unwrap();
        assert_eq!(twice.input, m.input);
        assert!(mask_channels(&ex, 4).is_err());
    }

    #[test]
    fn mask_sampler_is_uniform() {
        // Chi-square goodness of fit with 3 dof; 11.34 is the p = 0.01 point.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[draw_mask_antenna(&mut rng, 4)] += 1;
        }
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - 2500.0).powi(2) / 2500.0).sum();
        assert!(chi2 < 11.34, "{counts:?}");
        assert!(counts.iter().all(|&o| (2300..=2700).contains(&o)), "{counts:?}");
    }
}
