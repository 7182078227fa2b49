//! Music feature extraction: one 35-dimensional row per video frame.
//!
//! Layout (fixed; the tokenizers and metrics depend on it):
//!
//! | dims   | content                                            |
//! |--------|----------------------------------------------------|
//! | 0..20  | MFCCs (orthonormal DCT-II of 64 log-mel energies)  |
//! | 20     | onset strength (half-wave-rectified spectral flux) |
//! | 21..33 | chroma, 12 pitch classes, frame-normalized         |
//! | 33     | beat indicator (0/1)                               |
//! | 34     | onset-peak indicator (0/1)                         |
//!
//! Dims 0..20 form the "semantic" tokenizer stream, dims 20..35 the
//! "acoustic" stream. The hop is `sample_rate / fps` and must divide evenly
//! so feature rows stay aligned to motion frames.

pub mod wav;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};

pub const FEAT_DIMS: usize = 35;
pub const MFCC_DIMS: usize = 20;
/// dims 0..20 (MFCCs)
pub const SEMANTIC_DIMS: usize = 20;
/// dims 20..35 (onset, chroma, beat, peak)
pub const ACOUSTIC_DIMS: usize = 15;
pub const ONSET_DIM: usize = 20;
pub const CHROMA_START: usize = 21;
pub const BEAT_DIM: usize = 33;
pub const PEAK_DIM: usize = 34;

#[derive(Debug, Clone, Copy)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub fps: u32,
    pub n_fft: usize,
    pub n_mels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 22050,
            fps: 30,
            n_fft: 1024,
            n_mels: 64,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub struct FeatureExtractor {
    cfg: FeatureConfig,
    hop: usize,
    window: Vec<f32>,
    /// triangle weights per mel band, sparse over spectrum bins
    mel_filters: Vec<Vec<(usize, f32)>>,
    /// dct[k][m], orthonormal, 20 x n_mels
    dct: Vec<Vec<f32>>,
    /// pitch class per spectrum bin (None below the audible fold range)
    bin_class: Vec<Option<usize>>,
    fft: Arc<dyn Fft<f32>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        if cfg.fps == 0 || cfg.sample_rate % cfg.fps != 0 {
            return Err(CoreError::Invalid(format!(
                "sample rate {} is not a multiple of fps {}; frames would drift",
                cfg.sample_rate, cfg.fps
            )));
        }
        let hop = (cfg.sample_rate / cfg.fps) as usize;
        if hop < 2 {
            return Err(CoreError::Invalid(format!("hop {hop} too small")));
        }
        if !cfg.n_fft.is_power_of_two() || cfg.n_fft < 64 {
            return Err(CoreError::Invalid(format!("n_fft {} must be a power of two >= 64", cfg.n_fft)));
        }

        // periodic Hann
        let n = cfg.n_fft;
        let window: Vec<f32> = (0..n)
            .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32)
            .collect();

        let bins = n / 2 + 1;
        let sr = cfg.sample_rate as f64;
        let bin_hz = |b: usize| b as f64 * sr / n as f64;

        // triangular mel filters between n_mels + 2 mel-uniform anchor points
        let m_hi = hz_to_mel(sr / 2.0);
        let anchors: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(m_hi * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut mel_filters = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, mid, hi) = (anchors[m], anchors[m + 1], anchors[m + 2]);
            let mut taps = Vec::new();
            for b in 0..bins {
                let f = bin_hz(b);
                let w = if f >= lo && f <= mid && mid > lo {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi && hi > mid {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    taps.push((b, w as f32));
                }
            }
            mel_filters.push(taps);
        }

        // orthonormal DCT-II rows
        let mm = cfg.n_mels as f64;
        let mut dct = Vec::with_capacity(MFCC_DIMS);
        for k in 0..MFCC_DIMS {
            let scale = if k == 0 { (1.0 / mm).sqrt() } else { (2.0 / mm).sqrt() };
            dct.push(
                (0..cfg.n_mels)
                    .map(|m| {
                        (scale
                            * (std::f64::consts::PI * k as f64 * (2 * m + 1) as f64 / (2.0 * mm))
                                .cos()) as f32
                    })
                    .collect(),
            );
        }

        // pitch class per bin: round(69 + 12 log2(f/440)) mod 12
        let bin_class: Vec<Option<usize>> = (0..bins)
            .map(|b| {
                let f = bin_hz(b);
                if f < 20.0 {
                    None
                } else {
                    let midi = (69.0 + 12.0 * (f / 440.0).log2()).round() as i64;
                    Some(midi.rem_euclid(12) as usize)
                }
            })
            .collect();

        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(FeatureExtractor {
            cfg,
            hop,
            window,
            mel_filters,
            dct,
            bin_class,
            fft,
        })
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// `[T, 35]` feature rows; `T = floor(samples / hop)`, the analysis
    /// window is zero-padded past the end of the signal.
    pub fn extract(&self, samples: &[f32]) -> Result<Tensor<f32>> {
        let t_frames = samples.len() / self.hop;
        if t_frames == 0 {
            return Err(CoreError::Invalid(format!(
                "clip of {} samples is shorter than one hop ({})",
                samples.len(),
                self.hop
            )));
        }
        let n = self.cfg.n_fft;
        let bins = n / 2 + 1;

        let mut mags = vec![0.0f32; t_frames * bins];
        let mut buf: Vec<Complex<f32>> = vec![Complex::default(); n];
        for t in 0..t_frames {
            let start = t * self.hop;
            for i in 0..n {
                let s = samples.get(start + i).copied().unwrap_or(0.0);
                buf[i] = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for b in 0..bins {
                mags[t * bins + b] = buf[b].norm();
            }
        }

        let mut out = vec![0.0f32; t_frames * FEAT_DIMS];
        let mut flux = vec![0.0f32; t_frames];
        let mut logmel = vec![0.0f32; self.cfg.n_mels];
        for t in 0..t_frames {
            let row = &mut out[t * FEAT_DIMS..(t + 1) * FEAT_DIMS];
            let mag = &mags[t * bins..(t + 1) * bins];

            // mel energies -> log -> DCT
            for (m, taps) in self.mel_filters.iter().enumerate() {
                let mut e = 0.0f32;
                for &(b, w) in taps {
                    e += w * mag[b] * mag[b];
                }
                logmel[m] = (e + 1e-10).ln();
            }
            for (k, dk) in self.dct.iter().enumerate() {
                let mut c = 0.0f32;
                for (m, &w) in dk.iter().enumerate() {
                    c += w * logmel[m];
                }
                row[k] = c;
            }

            // onset strength: positive spectral-magnitude increase
            if t > 0 {
                let prev = &mags[(t - 1) * bins..t * bins];
                let mut f = 0.0f32;
                for b in 0..bins {
                    let d = mag[b] - prev[b];
                    if d > 0.0 {
                        f += d;
                    }
                }
                flux[t] = f;
            }
            row[ONSET_DIM] = flux[t];

            // chroma: energy folded to pitch classes, normalized per frame
            let mut chroma = [0.0f32; 12];
            for b in 0..bins {
                if let Some(cls) = self.bin_class[b] {
                    chroma[cls] += mag[b] * mag[b];
                }
            }
            let total: f32 = chroma.iter().sum();
            for (i, &c) in chroma.iter().enumerate() {
                row[CHROMA_START + i] = c / (total + 1e-10);
            }
        }

        for &b in &detect_beats(&flux) {
            out[b * FEAT_DIMS + BEAT_DIM] = 1.0;
        }
        for &p in &detect_peaks(&flux) {
            out[p * FEAT_DIMS + PEAK_DIM] = 1.0;
        }

        Tensor::from_vec(&[t_frames, FEAT_DIMS], out)
    }
}

/// Beat picker over the onset envelope: a frame is a beat when it dominates
/// a +/-7-frame window (ties resolve to the earliest frame) and rises above
/// mean + 0.5 std of the clip's envelope.
pub fn detect_beats(flux: &[f32]) -> Vec<usize> {
    let t = flux.len();
    if t == 0 {
        return Vec::new();
    }
    let mean = flux.iter().sum::<f32>() / t as f32;
    let var = flux.iter().map(|&f| (f - mean) * (f - mean)).sum::<f32>() / t as f32;
    let thr = mean + 0.5 * var.sqrt();
    let mut beats = Vec::new();
    for i in 0..t {
        if flux[i] <= thr {
            continue;
        }
        let lo = i.saturating_sub(7);
        let hi = (i + 7).min(t - 1);
        let mut wins = true;
        for w in lo..=hi {
            let ok = if w < i { flux[i] > flux[w] } else { flux[i] >= flux[w] };
            if !ok {
                wins = false;
                break;
            }
        }
        if wins {
            beats.push(i);
        }
    }
    beats
}

/// Strict local maxima of the envelope above its mean.
pub fn detect_peaks(flux: &[f32]) -> Vec<usize> {
    let t = flux.len();
    if t < 3 {
        return Vec::new();
    }
    let mean = flux.iter().sum::<f32>() / t as f32;
    (1..t - 1)
        .filter(|&i| flux[i] > flux[i - 1] && flux[i] > flux[i + 1] && flux[i] > mean)
        .collect()
}

/// Frame indices flagged as beats in an extracted feature matrix.
pub fn beats_from_features(feats: &Tensor<f32>) -> Vec<usize> {
    (0..feats.rows())
        .filter(|&r| feats.row(r)[BEAT_DIM] > 0.5)
        .collect()
}

const FEAT_MAGIC: &[u8; 4] = b"TDFT";

/// Feature cache: magic, fps, frame count, then `T x 35` f32 little-endian.
pub fn save_features(path: &Path, fps: u32, feats: &Tensor<f32>) -> Result<()> {
    if feats.cols() != FEAT_DIMS {
        return Err(CoreError::Shape {
            op: "save_features",
            detail: format!("expected {FEAT_DIMS} columns, got {}", feats.cols()),
        });
    }
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| {
        w.write_all(FEAT_MAGIC)?;
        w.write_all(&fps.to_le_bytes())?;
        w.write_all(&(feats.rows() as u32).to_le_bytes())?;
        for &v in feats.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(|e| CoreError::io(path, e))
}

pub fn load_features(path: &Path) -> Result<(u32, Tensor<f32>)> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|e| CoreError::io(path, e))?;
    if &head[0..4] != FEAT_MAGIC {
        return Err(CoreError::format(path, "bad magic, not a feature file"));
    }
    let fps = u32::from_le_bytes([head[4], head[5], head[6], head[7]]);
    let t = u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| CoreError::io(path, e))?;
    if body.len() != t * FEAT_DIMS * 4 {
        return Err(CoreError::format(
            path,
            format!("payload is {} bytes, expected {}", body.len(), t * FEAT_DIMS * 4),
        ));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((fps, Tensor::from_vec(&[t, FEAT_DIMS], data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor() -> FeatureExtractor {
        FeatureExtractor::new(FeatureConfig::default()).unwrap()
    }

    #[test]
    fn hop_must_divide_evenly() {
        let bad = FeatureConfig {
            sample_rate: 22051,
            ..FeatureConfig::default()
        };
        assert!(FeatureExtractor::new(bad).is_err());
        assert_eq!(extractor().hop(), 735);
    }

    #[test]
    fn one_second_is_thirty_frames() {
        let ex = extractor();
        let samples = vec![0.01f32; 22050];
        let f = ex.extract(&samples).unwrap();
        assert_eq!(f.shape(), &[30, FEAT_DIMS]);
    }

    #[test]
    fn sine_440_lands_on_pitch_class_a() {
        let ex = extractor();
        let sr = 22050.0f32;
        let samples: Vec<f32> = (0..22050)
            .map(|i| (2.0 * std::f32::consts::PI * 440.0 * i as f32 / sr).sin() * 0.5)
            .collect();
        let f = ex.extract(&samples).unwrap();
        // skip the first frames (attack transient) and check a middle frame
        let row = f.row(15);
        let chroma = &row[CHROMA_START..CHROMA_START + 12];
        let argmax = chroma
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 9, "chroma {chroma:?}"); // A
        // normalized: sums to ~1
        let sum: f32 = chroma.iter().sum();
        assert!((sum - 1.0).abs() < 1e-3);
    }

    #[test]
    fn click_train_beats_every_fifteen_frames() {
        let ex = extractor();
        let sr = 22050usize;
        let mut samples = vec![0.0f32; sr * 2];
        // 2 Hz clicks: decaying 1 kHz bursts at 0.25, 0.75, 1.25, 1.75 s
        // (a click at t = 0 is invisible to flux, which needs a predecessor frame)
        for k in 0..4 {
            let start = sr / 4 + k * sr / 2;
            for i in 0..800 {
                let t = i as f32 / sr as f32;
                samples[start + i] +=
                    (2.0 * std::f32::consts::PI * 1000.0 * t).sin() * (-t * 60.0).exp() * 0.9;
            }
        }
        let f = ex.extract(&samples).unwrap();
        let beats = beats_from_features(&f);
        assert_eq!(beats.len(), 4, "beats {beats:?}");
        for (k, &b) in beats.iter().enumerate() {
            // click k sits at frame 7.5 + 15k; the analysis window may see it
            // up to one frame early
            let want = 7.5 + 15.0 * k as f64;
            assert!(
                (b as f64 - want).abs() <= 1.0,
                "beat {k} at frame {b}, expected near {want}"
            );
        }
    }

    #[test]
    fn dct_rows_are_orthonormal() {
        let ex = extractor();
        for a in 0..MFCC_DIMS {
            for b in 0..MFCC_DIMS {
                let dot: f32 = ex.dct[a].iter().zip(&ex.dct[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-5, "rows {a},{b}: {dot}");
            }
        }
    }

    #[test]
    fn every_mel_band_covers_some_bins() {
        let ex = extractor();
        for (m, taps) in ex.mel_filters.iter().enumerate() {
            assert!(!taps.is_empty(), "band {m} is empty");
        }
    }

    #[test]
    fn feature_file_round_trip() {
        let ex = extractor();
        let samples: Vec<f32> = (0..22050).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect();
        let f = ex.extract(&samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tdft");
        save_features(&path, 30, &f).unwrap();
        let (fps, back) = load_features(&path).unwrap();
        assert_eq!(fps, 30);
        assert_eq!(back.shape(), f.shape());
        assert_eq!(back.data(), f.data());
    }
}
