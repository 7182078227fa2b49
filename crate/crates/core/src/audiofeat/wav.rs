//! Minimal WAV reader/writer: RIFF/WAVE, PCM16, mono, little-endian. That is
//! the only shape the pipeline produces and consumes; anything else is
//! rejected with a reason rather than resampled or downmixed silently.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

/// Samples come back as f32 in [-1, 1).
pub fn read_wav(path: &Path) -> Result<(u32, Vec<f32>)> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| CoreError::io(path, e))?;

    let bad = |detail: &str| CoreError::format(path, detail);

    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (codec, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]])
            as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(bad("chunk overruns file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                let b = &bytes[body_start..];
                fmt = Some((
                    u16::from_le_bytes([b[0], b[1]]),
                    u16::from_le_bytes([b[2], b[3]]),
                    u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                    u16::from_le_bytes([b[14], b[15]]),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_end]),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_end + (size & 1);
    }

    let (codec, channels, rate, bits) = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    if codec != 1 {
        return Err(bad(&format!("codec {codec} is not PCM")));
    }
    if channels != 1 {
        return Err(bad(&format!("{channels} channels; only mono is supported")));
    }
    if bits != 16 {
        return Err(bad(&format!("{bits}-bit samples; only 16-bit is supported")));
    }
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(bad("data chunk has odd byte length"));
    }
    let samples: Vec<f32> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    Ok((rate, samples))
}

/// Clamps to [-1, 1] and writes PCM16 mono.
pub fn write_wav(path: &Path, sample_rate: u32, samples: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let data_len = (samples.len() * 2) as u32;
    let byte_rate = sample_rate * 2;
    (|| {
        w.write_all(b"RIFF")?;
        w.write_all(&(36 + data_len).to_le_bytes())?;
        w.write_all(b"WAVE")?;
        w.write_all(b"fmt ")?;
        w.write_all(&16u32.to_le_bytes())?;
        w.write_all(&1u16.to_le_bytes())?; // PCM
        w.write_all(&1u16.to_le_bytes())?; // mono
        w.write_all(&sample_rate.to_le_bytes())?;
        w.write_all(&byte_rate.to_le_bytes())?;
        w.write_all(&2u16.to_le_bytes())?; // block align
        w.write_all(&16u16.to_le_bytes())?; // bits
        w.write_all(b"data")?;
        w.write_all(&data_len.to_le_bytes())?;
        for &s in samples {
            // symmetric with the reader's /32768; top code clamps to i16::MAX
            let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..2205)
            .map(|i| (i as f32 * 0.03).sin() * 0.8)
            .collect();
        write_wav(&path, 22050, &samples).unwrap();
        let (sr, back) = read_wav(&path).unwrap();
        assert_eq!(sr, 22050);
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.wav");
        std::fs::write(&path, b"not a wav at all").unwrap();
        assert!(read_wav(&path).is_err());
    }
}
