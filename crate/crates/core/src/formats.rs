//! Capture (`.rfcap`) and label (`.rflab`) files.
//!
//! `.rfcap`: magic `RFC1`, little-endian `u32` frame count, antenna count and
//! samples per antenna, then `f32` values in `[frame][antenna][sample][re, im]`
//! order.
//!
//! `.rflab`: one text line per frame, `index: lo,hi; lo,hi; ...`. A frame
//! without signals is written as `index:`.

use std::fs;
use std::path::Path;

use crate::dsp::IqFrame;
use crate::error::{Error, Result};
use crate::synth::LabeledCapture;

pub const CAPTURE_MAGIC: &[u8; 4] = b"RFC1";
const CAPTURE_HEADER_LEN: usize = 16;

/// Exact size in bytes of a capture file with the given dimensions.
pub fn capture_file_len(frames: usize, antennas: usize, samples: usize) -> usize {
    CAPTURE_HEADER_LEN + frames * antennas * samples * 2 * 4
}

pub fn encode_capture(frames: &[IqFrame]) -> Result<Vec<u8>> {
    let (antennas, samples) = match frames.first() {
        Some(f) => (f.antennas(), f.samples()),
        None => (0, 0),
    };
    if frames.iter().any(|f| f.antennas() != antennas || f.samples() != samples) {
        return Err(Error::shape("capture frames differ in shape"));
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::shape(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(capture_file_len(frames.len(), antennas, samples));
    out.extend_from_slice(CAPTURE_MAGIC);
    out.extend_from_slice(&to_u32(frames.len(), "frame count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(antennas, "antenna count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(samples, "sample count")?.to_le_bytes());
    for f in frames {
        for v in f.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_capture(bytes: &[u8], path: &Path) -> Result<Vec<IqFrame>> {
    if bytes.len() < CAPTURE_HEADER_LEN {
        return Err(Error::format(path, format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CAPTURE_MAGIC {
        return Err(Error::format(path, format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (frames, antennas, samples) = (word(4), word(8), word(12));
    let expected = frames
        .checked_mul(antennas)
        .and_then(|v| v.checked_mul(samples))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(CAPTURE_HEADER_LEN))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "header [{frames}, {antennas}, {samples}, 2] implies {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    if frames == 0 {
        return Ok(Vec::new());
    }
    if antennas == 0 || samples == 0 {
        return Err(Error::format(path, "zero antennas or samples"));
    }
    let per_frame = antennas * samples * 2;
    bytes[CAPTURE_HEADER_LEN..]
        .chunks_exact(per_frame * 4)
        .enumerate()
        .map(|(i, chunk)| {
            let data: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            IqFrame::new(antennas, samples, data)
                .map_err(|e| Error::format(path, format!("frame {i}: {e}")))
        })
        .collect()
}

pub fn write_capture(path: &Path, frames: &[IqFrame]) -> Result<()> {
    let bytes = encode_capture(frames)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_capture(path: &Path) -> Result<Vec<IqFrame>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_capture(&bytes, path)
}

pub fn encode_labels(labels: &[Vec<(usize, usize)>]) -> String {
    let mut out = String::new();
    for (i, frame) in labels.iter().enumerate() {
        let bands: Vec<String> = frame.iter().map(|(lo, hi)| format!("{lo},{hi}")).collect();
        if bands.is_empty() {
            out.push_str(&format!("{i}:\n"));
        } else {
            out.push_str(&format!("{i}: {}\n", bands.join("; ")));
        }
    }
    out
}

pub fn decode_labels(text: &str, path: &Path) -> Result<Vec<Vec<(usize, usize)>>> {
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::format(path, format!("line {lineno}: {msg}"));
        let (idx, rest) = line
            .split_once(':')
            .ok_or_else(|| err("missing ':' after frame index".into()))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| err(format!("bad frame index {:?}", idx.trim())))?;
        if idx != labels.len() {
            return Err(err(format!("expected frame index {}, found {idx}", labels.len())));
        }
        let mut bands = Vec::new();
        for band in rest.split(';').map(str::trim).filter(|b| !b.is_empty()) {
            let (lo, hi) = band
                .split_once(',')
                .ok_or_else(|| err(format!("band {band:?} is not lo,hi")))?;
            let lo: usize = lo.trim().parse().map_err(|_| err(format!("bad lower edge in {band:?}")))?;
            let hi: usize = hi.trim().parse().map_err(|_| err(format!("bad upper edge in {band:?}")))?;
            if lo >= hi {
                return Err(err(format!("band {band:?} has lo >= hi")));
            }
            bands.push((lo, hi));
        }
        labels.push(bands);
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[Vec<(usize, usize)>]) -> Result<()> {
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<Vec<(usize, usize)>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&text, path)
}

/// Reads a capture and its labels, checking that they describe the same frames.
pub fn read_labeled_capture(capture: &Path, labels: &Path) -> Result<LabeledCapture> {
    let frames = read_capture(capture)?;
    let labels_v = read_labels(labels)?;
    if frames.len() != labels_v.len() {
        return Err(Error::format(
            labels,
            format!("{} label lines for {} frames", labels_v.len(), frames.len()),
        ));
    }
    Ok(LabeledCapture {
        antennas: frames.first().map_or(0, IqFrame::antennas),
        samples: frames.first().map_or(0, IqFrame::samples),
        frames,
        labels: labels_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_capture_set, SceneConfig};
    use proptest::prelude::*;

    #[test]
    fn file_size_matches_header_formula() {
        let cfg = SceneConfig::new(4, 16384, 256);
        let set = make_capture_set(&cfg, 10, 1).unwrap();
        let bytes = encode_capture(&set.frames).unwrap();
        assert_eq!(bytes.len(), 16 + 10 * 4 * 16384 * 2 * 4);
        assert_eq!(bytes.len(), capture_file_len(10, 4, 16384));
    }

    #[test]
    fn capture_errors() {
        let p = Path::new("x.rfcap");
        let frame = IqFrame::new(1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let good = encode_capture(&[frame]).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_capture(&bad, p), Err(Error::Format { .. })));
        assert!(matches!(decode_capture(&good[..good.len() - 1], p), Err(Error::Format { .. })));
        assert!(matches!(decode_capture(&good[..7], p), Err(Error::Format { .. })));
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(decode_capture(&extra, p), Err(Error::Format { .. })));
        let mut nan = good;
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_capture(&nan, p), Err(Error::Format { .. })));
    }

    #[test]
    fn label_text_layout() {
        let text = encode_labels(&[vec![(1, 5), (10, 20)], vec![]]);
        assert_eq!(text, "0: 1,5; 10,20\n1:\n");
        let p = Path::new("x.rflab");
        assert!(decode_labels("0: 5,1\n", p).is_err());
        assert!(decode_labels("1: 1,5\n", p).is_err());
        let err = decode_labels("0: 1,5\n1 2,3\n", p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    proptest! {
        #[test]
        fn capture_round_trip_is_bit_exact(
            antennas in 1usize..4,
            samples in 1usize..16,
            frames in 0usize..4,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let fs: Vec<IqFrame> = (0..frames)
                .map(|_| {
                    let data = (0..antennas * samples * 2).map(|_| rng.random_range(-1e6f32..1e6)).collect();
                    IqFrame::new(antennas, samples, data).unwrap()
                })
                .collect();
            let decoded = decode_capture(&encode_capture(&fs).unwrap(), Path::new("p")).unwrap();
            prop_assert_eq!(decoded, fs);
        }

        #[test]
        fn label_round_trip(labels in proptest::collection::vec(
            proptest::collection::vec((0usize..1000, 1usize..1000).prop_map(|(lo, w)| (lo, lo + w)), 0..6),
            0..8,
        )) {
            let text = encode_labels(&labels);
            prop_assert_eq!(decode_labels(&text, Path::new("p")).unwrap(), labels);
        }
    }
}
