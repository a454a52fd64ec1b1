//! Synthetic wideband multichannel captures with ground-truth band edges.
//!
//! Each signal is synthesized at full resolution in the frequency domain
//! (a flat band for filtered noise) or in time (root-raised-cosine QPSK),
//! placed at its center bin, scaled to an in-band SNR and applied to every
//! antenna through a per-signal complex gain. Independent complex white
//! noise of power `noise_power` is added per antenna.
//!
//! Frequencies use the unshifted DFT bin order of an `F`-bin analysis chunk:
//! bin `k` is `k / F` cycles per sample.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dsp::{dft, idft, IqFrame};
use crate::error::{Error, Result};

pub const RRC_ROLLOFF: f64 = 0.35;
const RRC_SPAN_SYMBOLS: isize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    FilteredNoise,
    QpskRrc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub center_bin: usize,
    pub bandwidth_bins: usize,
    pub snr_db: f64,
    pub modulation: Modulation,
    /// One complex gain per antenna.
    pub gains: Vec<Complex64>,
}

impl SignalSpec {
    /// Band edges `[lo, hi)` in analysis bins.
    pub fn band(&self) -> (usize, usize) {
        let lo = self.center_bin.saturating_sub(self.bandwidth_bins / 2);
        (lo, lo + self.bandwidth_bins)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub antennas: usize,
    pub samples: usize,
    pub bins: usize,
    pub noise_power: f64,
    pub signals: Vec<SignalSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.bins < 2 || self.samples == 0 {
            return Err(Error::Scene("antennas, bins and samples must be positive".into()));
        }
        if !self.samples.is_multiple_of(self.bins) {
            return Err(Error::Scene(format!(
                "{} samples are not a multiple of {} bins",
                self.samples, self.bins
            )));
        }
        if !(self.noise_power >= 0.0) {
            return Err(Error::Scene(format!("noise power {} must be >= 0", self.noise_power)));
        }
        for (i, s) in self.signals.iter().enumerate() {
            if s.bandwidth_bins == 0 {
                return Err(Error::Scene(format!("signal {i} has zero bandwidth")));
            }
            if s.center_bin < s.bandwidth_bins / 2 || s.band().1 > self.bins {
                return Err(Error::Scene(format!(
                    "signal {i} band {:?} leaves [0, {})",
                    s.band(),
                    self.bins
                )));
            }
            if s.gains.len() != self.antennas {
                return Err(Error::Scene(format!(
                    "signal {i} has {} antenna gains, scene has {} antennas",
                    s.gains.len(),
                    self.antennas
                )));
            }
            if !s.snr_db.is_finite() {
                return Err(Error::Scene(format!("signal {i} SNR is not finite")));
            }
        }
        for (i, a) in self.signals.iter().enumerate() {
            for b in &self.signals[i + 1..] {
                if a.center_bin == b.center_bin {
                    return Err(Error::Scene(format!(
                        "two signals share center bin {}",
                        a.center_bin
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<(usize, usize)> {
        self.signals.iter().map(SignalSpec::band).collect()
    }
}

/// Distribution of random scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub antennas: usize,
    pub samples: usize,
    pub bins: usize,
    pub signals_min: usize,
    pub signals_max: usize,
    pub bw_min: usize,
    pub bw_max: usize,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub noise_power: f64,
    pub modulations: Vec<Modulation>,
}

impl SceneConfig {
    /// Defaults for a given array size and analysis length: 1..=6 signals,
    /// bandwidth 8..=F/2 bins, SNR 5..=25 dB.
    pub fn new(antennas: usize, samples: usize, bins: usize) -> Self {
        Self {
            antennas,
            samples,
            bins,
            signals_min: 1,
            signals_max: 6,
            bw_min: 8.min(bins / 2).max(1),
            bw_max: (bins / 2).max(1),
            snr_min_db: 5.0,
            snr_max_db: 25.0,
            noise_power: 1.0,
            modulations: vec![Modulation::FilteredNoise, Modulation::QpskRrc],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.antennas == 0 || self.bins < 2 || self.samples == 0 || !self.samples.is_multiple_of(self.bins) {
            return bad(format!(
                "need antennas >= 1, bins >= 2 and samples a multiple of bins (got {}, {}, {})",
                self.antennas, self.bins, self.samples
            ));
        }
        if self.signals_min > self.signals_max {
            return bad(format!("signals range {}..={} is empty", self.signals_min, self.signals_max));
        }
        if self.bw_min == 0 || self.bw_min > self.bw_max || self.bw_max > self.bins {
            return bad(format!(
                "bandwidth range {}..={} invalid for {} bins",
                self.bw_min, self.bw_max, self.bins
            ));
        }
        if self.signals_max > self.bins - self.bw_max + 1 {
            return bad(format!(
                "{} signals cannot get distinct centers with bandwidth up to {} in {} bins",
                self.signals_max, self.bw_max, self.bins
            ));
        }
        if !(self.snr_min_db <= self.snr_max_db) || !self.snr_min_db.is_finite() || !self.snr_max_db.is_finite() {
            return bad(format!("SNR range {}..={} invalid", self.snr_min_db, self.snr_max_db));
        }
        if !(self.noise_power > 0.0) {
            return bad(format!("noise power {} must be > 0", self.noise_power));
        }
        if self.modulations.is_empty() {
            return bad("no modulations enabled".into());
        }
        Ok(())
    }

    /// Draws a random scene that passes `SceneSpec::validate`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SceneSpec> {
        self.validate()?;
        let count = rng.random_range(self.signals_min..=self.signals_max);
        let mut signals: Vec<SignalSpec> = Vec::with_capacity(count);
        while signals.len() < count {
            let bw = rng.random_range(self.bw_min..=self.bw_max);
            let center = rng.random_range(bw / 2..=self.bins - bw.div_ceil(2));
            if signals.iter().any(|s| s.center_bin == center) {
                continue;
            }
            let snr_db = rng.random_range(self.snr_min_db..=self.snr_max_db);
            let modulation = self.modulations[rng.random_range(0..self.modulations.len())];
            let gains = (0..self.antennas)
                .map(|_| {
                    let amp = 1.0 + rng.random_range(-0.1..=0.1);
                    Complex64::from_polar(amp, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            signals.push(SignalSpec {
                center_bin: center,
                bandwidth_bins: bw,
                snr_db,
                modulation,
                gains,
            });
        }
        Ok(SceneSpec {
            antennas: self.antennas,
            samples: self.samples,
            bins: self.bins,
            noise_power: self.noise_power,
            signals,
        })
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, power: f64) -> Complex64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Root-raised-cosine pulse at `t` symbol periods.
fn rrc_pulse(t: f64, alpha: f64) -> f64 {
    if t.abs() < 1e-9 {
        return 1.0 - alpha + 4.0 * alpha / PI;
    }
    let edge = 1.0 / (4.0 * alpha);
    if (t.abs() - edge).abs() < 1e-9 {
        let a = (1.0 + 2.0 / PI) * (PI / (4.0 * alpha)).sin();
        let b = (1.0 - 2.0 / PI) * (PI / (4.0 * alpha)).cos();
        return alpha / 2f64.sqrt() * (a + b);
    }
    let num = (PI * t * (1.0 - alpha)).sin() + 4.0 * alpha * t * (PI * t * (1.0 + alpha)).cos();
    let den = PI * t * (1.0 - (4.0 * alpha * t).powi(2));
    num / den
}

/// Unit-power baseband waveform occupying `width` cycles/sample around DC.
fn baseband<R: Rng + ?Sized>(rng: &mut R, modulation: Modulation, samples: usize, width: f64) -> Vec<Complex64> {
    let mut x: Vec<Complex64> = match modulation {
        Modulation::FilteredNoise => {
            // Flat band of `width · samples` full-resolution bins centred on DC.
            let noise: Vec<Complex64> = (0..samples).map(|_| complex_gaussian(rng, 1.0)).collect();
            let mut spec = dft(&noise);
            let occupied = ((width * samples as f64).round() as usize).clamp(1, samples);
            let lo = occupied / 2;
            let hi = occupied - lo; // bins [-lo, hi)
            for (k, v) in spec.iter_mut().enumerate() {
                let keep = k < hi || k >= samples - lo;
                if !keep {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
            idft(&spec)
        }
        Modulation::QpskRrc => {
            let symbol_rate = width / (1.0 + RRC_ROLLOFF);
            let sps = 1.0 / symbol_rate;
            let first = -RRC_SPAN_SYMBOLS;
            let last = (samples as f64 / sps).ceil() as isize + RRC_SPAN_SYMBOLS;
            let symbols: Vec<Complex64> = (first..=last)
                .map(|_| {
                    let re = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let im = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    Complex64::new(re, im) / 2f64.sqrt()
                })
                .collect();
            (0..samples)
                .map(|n| {
                    let pos = n as f64 / sps;
                    let centre = pos.round() as isize;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in centre - RRC_SPAN_SYMBOLS..=centre + RRC_SPAN_SYMBOLS {
                        acc += symbols[(k - first) as usize] * rrc_pulse(pos - k as f64, RRC_ROLLOFF);
                    }
                    acc
                })
                .collect()
        }
    };
    let power = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / samples as f64;
    if power > 0.0 {
        let s = power.sqrt();
        x.iter_mut().for_each(|v| *v /= s);
    }
    x
}

/// Synthesizes one frame and its `(lo, hi)` band-edge labels.
///
/// SNR is in-band: a signal's power is `10^(snr/10) · noise_power · bw / F`.
pub fn synth_frame(spec: &SceneSpec, seed: u64) -> Result<(IqFrame, Vec<(usize, usize)>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, f) = (spec.samples, spec.bins);
    let mut antennas = vec![vec![Complex64::new(0.0, 0.0); l]; spec.antennas];
    for s in &spec.signals {
        let width = s.bandwidth_bins as f64 / f as f64;
        let x = baseband(&mut rng, s.modulation, l, width);
        let power = 10f64.powf(s.snr_db / 10.0) * spec.noise_power * width;
        // Band centre in cycles/sample: midpoint of [lo, hi).
        let (lo, hi) = s.band();
        let freq = (lo + hi) as f64 / 2.0 / f as f64;
        let amp = power.sqrt();
        for (n, v) in x.iter().enumerate() {
            let shifted = v * Complex64::from_polar(amp, 2.0 * PI * freq * (n % (2 * f)) as f64);
            for (a, g) in antennas.iter_mut().zip(&s.gains) {
                a[n] += shifted * g;
            }
        }
    }
    if spec.noise_power > 0.0 {
        for a in antennas.iter_mut() {
            for v in a.iter_mut() {
                *v += complex_gaussian(&mut rng, spec.noise_power);
            }
        }
    }
    Ok((IqFrame::from_complex(&antennas)?, spec.labels()))
}

/// Length-`bins` regression target: `(hi - lo) / bins` at bin
/// `floor((lo + hi) / 2)` for every label, zero elsewhere.
pub fn labels_to_target(labels: &[(usize, usize)], bins: usize) -> Result<Vec<f32>> {
    let mut target = vec![0.0f32; bins];
    for &(lo, hi) in labels {
        if lo >= hi || hi > bins {
            return Err(Error::Label(format!("band ({lo}, {hi}) invalid for {bins} bins")));
        }
        let centre = (lo + hi) / 2;
        if target[centre] != 0.0 {
            return Err(Error::Label(format!("two labels share center bin {centre}")));
        }
        target[centre] = (hi - lo) as f32 / bins as f32;
    }
    Ok(target)
}

/// Frames plus per-frame labels, `[n_frames, A, L, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCapture {
    pub antennas: usize,
    pub samples: usize,
    pub frames: Vec<IqFrame>,
    pub labels: Vec<Vec<(usize, usize)>>,
}

/// Per-frame seed substream: frame `i` of a set generated with `seed`.
pub fn frame_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Generates `frames` independent random scenes deterministically from `seed`.
pub fn make_capture_set(config: &SceneConfig, frames: usize, seed: u64) -> Result<LabeledCapture> {
    config.validate()?;
    let results: Vec<Result<(IqFrame, Vec<(usize, usize)>)>> = (0..frames)
        .into_par_iter()
        .map(|i| {
            let s = frame_seed(seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let scene = config.sample(&mut rng)?;
            synth_frame(&scene, rng.random())
        })
        .collect();
    let mut capture = LabeledCapture {
        antennas: config.antennas,
        samples: config.samples,
        frames: Vec::with_capacity(frames),
        labels: Vec::with_capacity(frames),
    };
    for r in results {
        let (frame, labels) = r?;
        capture.frames.push(frame);
        capture.labels.push(labels);
    }
    Ok(capture)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_signal(bins: usize, center: usize, bw: usize, snr_db: f64, m: Modulation, gains: Vec<Complex64>) -> SceneSpec {
        SceneSpec {
            antennas: gains.len(),
            samples: bins * 16,
            bins,
            noise_power: 1.0,
            signals: vec![SignalSpec {
                center_bin: center,
                bandwidth_bins: bw,
                snr_db,
                modulation: m,
                gains,
            }],
        }
    }

    /// Averaged Hann-less periodogram over non-overlapping `bins`-sample chunks.
    fn periodogram(x: &[Complex64], bins: usize) -> Vec<f64> {
        let mut acc = vec![0.0; bins];
        let chunks = x.len() / bins;
        for c in 0..chunks {
            let spec = dft(&x[c * bins..(c + 1) * bins]);
            acc.iter_mut().zip(&spec).for_each(|(a, s)| *a += s.norm_sqr());
        }
        acc.iter().map(|v| v / (chunks * bins) as f64).collect()
    }

    #[test]
    fn noise_only_variance() {
        let spec = SceneSpec {
            antennas: 3,
            samples: 8192,
            bins: 64,
            noise_power: 2.5,
            signals: vec![],
        };
        let (frame, labels) = synth_frame(&spec, 9).unwrap();
        assert!(labels.is_empty());
        for k in 0..3 {
            let v = frame.antenna(k).map(|c| c.norm_sqr()).sum::<f64>() / 8192.0;
            assert!((v / 2.5 - 1.0).abs() < 0.05, "antenna {k}: {v}");
        }
    }

    #[test]
    fn signal_power_stays_in_band() {
        for m in [Modulation::FilteredNoise, Modulation::QpskRrc] {
            let spec = one_signal(256, 100, 64, 30.0, m, vec![Complex64::new(1.0, 0.0)]);
            let (frame, labels) = synth_frame(&spec, 3).unwrap();
            let (lo, hi) = labels[0];
            assert_eq!((lo, hi), (68, 132));
            let x: Vec<Complex64> = frame.antenna(0).collect();
            let p = periodogram(&x, 256);
            let excess: Vec<f64> = p.iter().map(|v| (v - 1.0).max(0.0)).collect();
            let total: f64 = excess.iter().sum();
            let inside: f64 = excess[lo - 2..hi + 2].iter().sum();
            assert!(inside / total >= 0.95, "{m:?}: {}", inside / total);
        }
    }

    #[test]
    fn cross_antenna_phase_follows_gains() {
        let gains = vec![Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, PI / 2.0)];
        let spec = one_signal(128, 40, 16, 30.0, Modulation::FilteredNoise, gains);
        let (frame, _) = synth_frame(&spec, 5).unwrap();
        let a: Vec<Complex64> = frame.antenna(0).collect();
        let b: Vec<Complex64> = frame.antenna(1).collect();
        // Cross-spectrum at the dominant bin.
        let mut cross = vec![Complex64::new(0.0, 0.0); 128];
        let mut power = vec![0.0; 128];
        for c in 0..a.len() / 128 {
            let sa = dft(&a[c * 128..(c + 1) * 128]);
            let sb = dft(&b[c * 128..(c + 1) * 128]);
            for k in 0..128 {
                cross[k] += sb[k] * sa[k].conj();
                power[k] += sa[k].norm_sqr();
            }
        }
        let peak = (0..128).max_by(|&i, &j| power[i].total_cmp(&power[j])).unwrap();
        assert!((cross[peak].arg() - PI / 2.0).abs() < 0.1, "{}", cross[peak].arg());
    }

    #[test]
    fn rejects_shared_center_and_out_of_range() {
        let mut spec = one_signal(64, 20, 8, 10.0, Modulation::FilteredNoise, vec![Complex64::new(1.0, 0.0)]);
        let mut dup = spec.signals[0].clone();
        dup.bandwidth_bins = 4;
        spec.signals.push(dup);
        assert!(matches!(synth_frame(&spec, 0), Err(Error::Scene(_))));
        let spec = one_signal(64, 62, 8, 10.0, Modulation::FilteredNoise, vec![Complex64::new(1.0, 0.0)]);
        assert!(matches!(synth_frame(&spec, 0), Err(Error::Scene(_))));
    }

    #[test]
    fn target_examples() {
        let t = labels_to_target(&[(0, 2048)], 2048).unwrap();
        assert_eq!(t[1024], 1.0);
        assert_eq!(t.iter().filter(|&&v| v != 0.0).count(), 1);
        let t = labels_to_target(&[(1000, 1100)], 2048).unwrap();
        assert_eq!(t[1050], 100.0 / 2048.0);
        assert!((t[1050] - 0.048828).abs() < 1e-6);
        assert!(labels_to_target(&[], 16).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(labels_to_target(&[(2, 6), (3, 5)], 16), Err(Error::Label(_))));
    }

    #[test]
    fn random_scenes_respect_invariants() {
        let cfg = SceneConfig::new(4, 4096, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let scene = cfg.sample(&mut rng).unwrap();
            scene.validate().unwrap();
            assert!((1..=6).contains(&scene.signals.len()));
            labels_to_target(&scene.labels(), 64).unwrap();
        }
    }

    #[test]
    fn capture_set_is_deterministic() {
        let cfg = SceneConfig::new(2, 1024, 64);
        let a = make_capture_set(&cfg, 3, 11).unwrap();
        let b = make_capture_set(&cfg, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = make_capture_set(&cfg, 3, 12).unwrap();
        assert_ne!(a.frames, c.frames);
    }
}
