//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every method takes and returns plain numbers and vectors, so the same
//! API runs natively in tests.

use arrayssl::dsp::{frame_to_stft, mask_channels, StftExample};
use arrayssl::synth::{labels_to_target, make_capture_set, SceneConfig};
use wasm_bindgen::prelude::*;

const ANTENNAS: usize = 4;

/// One synthesized frame and its STFT.
#[wasm_bindgen]
pub struct Demo {
    stft: StftExample,
    labels: Vec<(usize, usize)>,
}

#[wasm_bindgen]
impl Demo {
    /// Synthesizes a 4-antenna frame with exactly `signals` emitters and cuts
    /// it into `time` STFT chunks of `bins` bins.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, signals: u32, time: u32, bins: u32) -> Result<Demo, String> {
        let (time, bins) = (time as usize, bins as usize);
        let mut cfg = SceneConfig::new(ANTENNAS, time * bins, bins);
        cfg.signals_min = signals as usize;
        cfg.signals_max = signals as usize;
        let mut set = make_capture_set(&cfg, 1, seed as u64).map_err(|e| e.to_string())?;
        let frame = set.frames.pop().ok_or("no frame synthesized")?;
        let labels = set.labels.pop().unwrap_or_default();
        let stft = frame_to_stft(&frame, time, bins).map_err(|e| e.to_string())?;
        Ok(Demo { stft, labels })
    }

    pub fn time(&self) -> u32 {
        self.stft.time as u32
    }

    pub fn bins(&self) -> u32 {
        self.stft.bins as u32
    }

    pub fn antennas(&self) -> u32 {
        self.stft.antennas() as u32
    }

    /// Power in dB of one antenna, `[time][bins]` row-major.
    pub fn spectrogram(&self, antenna: u32) -> Result<Vec<f32>, String> {
        let a = antenna as usize;
        if a >= self.stft.antennas() {
            return Err(format!("antenna {a} out of range"));
        }
        let (re, im) = (self.stft.channel(2 * a), self.stft.channel(2 * a + 1));
        Ok(re
            .iter()
            .zip(im)
            .map(|(&r, &i)| 10.0 * (r * r + i * i).max(1e-12).log10())
            .collect())
    }

    /// Regression target: occupied fraction of the band at each signal's
    /// center bin, zero elsewhere.
    pub fn bandwidth_target(&self) -> Result<Vec<f32>, String> {
        labels_to_target(&self.labels, self.stft.bins).map_err(|e| e.to_string())
    }

    /// Signal bands as flattened `lo, hi` pairs (half-open bin ranges).
    pub fn labels(&self) -> Vec<u32> {
        self.labels.iter().flat_map(|&(lo, hi)| [lo as u32, hi as u32]).collect()
    }

    /// Standardized network input with `masked_antenna` zeroed, returned as
    /// `[channel][time][bins]`.
    pub fn masked_input(&self, masked_antenna: u32) -> Result<Vec<f32>, String> {
        let (standard, _) = self.stft.standardized();
        mask_channels(&standard, masked_antenna as usize)
            .map(|m| m.input.data)
            .map_err(|e| e.to_string())
    }
}
