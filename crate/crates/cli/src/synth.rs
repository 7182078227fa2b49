//! Synthetic paired corpus: click-plus-harmonics audio whose tempo changes
//! across the clip, and a procedural dance whose pose extrema land on the
//! beats the audio analysis actually detects (not the nominal click
//! positions), so the ground-truth beat alignment is high by construction.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use tokendance_core::audiofeat::{beats_from_features, wav, FeatureConfig, FeatureExtractor};
use tokendance_core::autodiff::Tensor;
use tokendance_core::error::{CoreError, Result};
use tokendance_core::metrics;
use tokendance_core::motion::{save_motion_json, Skeleton, JOINTS, POSE_DIMS};
use tokendance_core::rng::stream;
use tokendance_core::Real;

use rand::Rng;

use crate::config::{SynthSection, SAMPLE_RATE};

/// Number of equal-length tempo segments per clip; the beat period changes
/// at every segment boundary.
const TEMPO_SEGMENTS: usize = 4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: usize,
    pub genre: usize,
    /// Nominal beat period (frames) in each quarter of the clip; adjacent
    /// quarters always differ, so upcoming beat positions are never implied
    /// by the tempo observed so far.
    pub periods: Vec<usize>,
    pub frames: usize,
    pub wav: String,
    pub motion: String,
    /// Beat frames found by the audio analysis; the motion locks to these.
    pub beats: Vec<usize>,
    /// Alignment of this clip's motion beats against `beats`.
    pub gt_bas: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub fps: u32,
    pub genres: usize,
    pub clips: Vec<ClipMeta>,
}

/// Per-genre motion motif: integer frequency ratios keep every moving part
/// at a pose extremum on each beat, while the ratio/amplitude mix differs.
struct Motif {
    arm_ratio: u32,
    leg_ratio: u32,
    spine_ratio: u32,
    arm_amp: f64,
    leg_amp: f64,
    spine_amp: f64,
    bob_amp: f64,
    head_amp: f64,
}

fn motif(genre: usize) -> Motif {
    const ARM_R: [u32; 5] = [1, 2, 1, 3, 2];
    const LEG_R: [u32; 5] = [1, 1, 2, 1, 2];
    const SPINE_R: [u32; 5] = [1, 1, 1, 2, 1];
    Motif {
        arm_ratio: ARM_R[genre % 5],
        leg_ratio: LEG_R[genre % 5],
        spine_ratio: SPINE_R[genre % 5],
        arm_amp: 0.30 + 0.07 * ((genre * 3) % 4) as f64,
        leg_amp: 0.22 + 0.05 * ((genre * 5) % 3) as f64,
        spine_amp: 0.10 + 0.04 * (genre % 3) as f64,
        bob_amp: 0.030 + 0.012 * ((genre * 7) % 3) as f64,
        head_amp: 0.08 + 0.05 * (genre % 2) as f64,
    }
}

/// First two columns of a rotation by `theta` about a coordinate axis.
fn rot6(axis: usize, theta: f64) -> [f64; 6] {
    let (s, c) = theta.sin_cos();
    match axis {
        0 => [1.0, 0.0, 0.0, 0.0, c, s],    // about x
        1 => [c, 0.0, -s, 0.0, 1.0, 0.0],   // about y
        _ => [c, s, 0.0, -s, c, 0.0],       // about z
    }
}

/// Piecewise-linear phase hitting `k * PI` exactly at `beats[k]`, extended
/// past both ends with the neighboring slope.
fn beat_phase(beats: &[usize], t: f64) -> f64 {
    debug_assert!(beats.len() >= 2);
    let b = |i: usize| beats[i] as f64;
    let n = beats.len();
    let seg = |i: usize| std::f64::consts::PI / (b(i + 1) - b(i));
    if t <= b(0) {
        return (t - b(0)) * seg(0);
    }
    if t >= b(n - 1) {
        return (n - 1) as f64 * std::f64::consts::PI + (t - b(n - 1)) * seg(n - 2);
    }
    for i in 0..n - 1 {
        if t < b(i + 1) {
            return i as f64 * std::f64::consts::PI + (t - b(i)) * seg(i);
        }
    }
    unreachable!()
}

/// Click track plus a per-beat harmonic chord; peak-normalized to 0.7.
pub(crate) fn synth_audio(
    rng: &mut impl Rng,
    beats_nominal: &[usize],
    n_samples: usize,
    hop: usize,
) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let mut s = vec![0.0f64; n_samples];

    // clicks: 1.8 kHz burst, 4 ms decay
    let click_len = (sr * 0.02) as usize;
    for &b in beats_nominal {
        let start = b * hop;
        for k in 0..click_len.min(n_samples.saturating_sub(start)) {
            let t = k as f64 / sr;
            s[start + k] += 0.9 * (TAU * 1800.0 * t).sin() * (-t / 0.004).exp();
        }
    }

    // harmonic bed: a chord restarted at every beat, chord root walking a
    // small deterministic progression; sustained sub-octave underneath
    let root_hz = 110.0 * 2f64.powf(rng.gen_range(0..12) as f64 / 12.0);
    let progression = [0i32, 5, 7, 3];
    for (k, &b) in beats_nominal.iter().enumerate() {
        let start = b * hop;
        let end = beats_nominal
            .get(k + 1)
            .map(|&nb| nb * hop)
            .unwrap_or(n_samples)
            .min(n_samples);
        let shift = progression[k % progression.len()];
        for (ci, &semi) in [0i32, 4, 7].iter().enumerate() {
            let f = root_hz * 2f64.powf((semi + shift) as f64 / 12.0);
            let amp = 0.22 / (ci + 1) as f64;
            for i in start..end {
                let t = (i - start) as f64 / sr;
                s[i] += amp * (TAU * f * t).sin() * (-t / 0.25).exp();
            }
        }
    }
    let sub = root_hz / 2.0;
    for (i, v) in s.iter_mut().enumerate() {
        *v += 0.05 * (TAU * sub * i as f64 / sr).sin();
    }

    let peak = s.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
    s.iter().map(|&v| (0.7 * v / peak) as f32).collect()
}

/// Procedural dance: every animated angle is `amp * cos(ratio * phase + psi)`
/// with integer `ratio` and `psi` in {0, PI}, so every animated part sits at
/// an extremum when the phase crosses a multiple of PI — i.e. on each
/// detected beat — and the mean joint speed dips to a minimum exactly there.
fn synth_motion(
    rng: &mut impl Rng,
    skel: &Skeleton<Real>,
    beats: &[usize],
    frames: usize,
    genre: usize,
) -> Tensor<Real> {
    let m = motif(genre);
    let jitter = |rng: &mut dyn rand::RngCore, amp: f64| amp * (0.9 + 0.2 * rng.gen::<f64>());
    let (arm, leg, spine, bob, head) = (
        jitter(rng, m.arm_amp),
        jitter(rng, m.leg_amp),
        jitter(rng, m.spine_amp),
        jitter(rng, m.bob_amp),
        jitter(rng, m.head_amp),
    );
    const PI: f64 = std::f64::consts::PI;

    // (joint name, axis, ratio, amplitude, phase offset)
    let dofs: Vec<(&str, usize, u32, f64, f64)> = vec![
        ("left_hip", 0, m.leg_ratio, leg, PI),
        ("right_hip", 0, m.leg_ratio, leg, 0.0),
        ("left_knee", 0, m.leg_ratio, 0.55 * leg, 0.0),
        ("right_knee", 0, m.leg_ratio, 0.55 * leg, PI),
        ("spine1", 2, m.spine_ratio, 0.4 * spine, 0.0),
        ("spine2", 2, m.spine_ratio, 0.35 * spine, 0.0),
        ("spine3", 2, m.spine_ratio, 0.25 * spine, PI),
        ("neck", 0, 1, 0.4 * head, 0.0),
        ("head", 0, 1, 0.6 * head, PI),
        ("left_shoulder", 0, m.arm_ratio, arm, 0.0),
        ("right_shoulder", 0, m.arm_ratio, arm, PI),
        ("left_elbow", 0, m.arm_ratio, 0.6 * arm, PI),
        ("right_elbow", 0, m.arm_ratio, 0.6 * arm, 0.0),
        ("left_collar", 2, m.arm_ratio, 0.15 * arm, 0.0),
        ("right_collar", 2, m.arm_ratio, 0.15 * arm, PI),
    ];
    let resolved: Vec<(usize, usize, u32, f64, f64)> = dofs
        .iter()
        .map(|&(name, ax, r, a, p)| {
            let j = skel.joint_index(name).expect("known joint");
            (j, ax, r, a, p)
        })
        .collect();

    let ident = [1.0f64, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut data = vec![0.0f32; frames * POSE_DIMS];
    for t in 0..frames {
        let phi = beat_phase(beats, t as f64);
        let row = &mut data[t * POSE_DIMS..(t + 1) * POSE_DIMS];
        row[0] = 0.0;
        row[1] = (0.90 + bob * phi.cos()) as f32;
        row[2] = 0.0;
        for j in 0..JOINTS {
            let col = 3 + 6 * skel.slot_of(j);
            for (k, &v) in ident.iter().enumerate() {
                row[col + k] = v as f32;
            }
        }
        for &(j, ax, r, a, p) in &resolved {
            let theta = a * (r as f64 * phi + p).cos();
            let six = rot6(ax, theta);
            let col = 3 + 6 * skel.slot_of(j);
            for (k, &v) in six.iter().enumerate() {
                row[col + k] = v as f32;
            }
        }
    }
    Tensor::from_vec(&[frames, POSE_DIMS], data).expect("pose shape")
}

/// Generate the full corpus into `dir`, returning its manifest. Deterministic
/// in `(seed, spec, fps)`: the same inputs write identical bytes.
pub fn synth_corpus(
    dir: &Path,
    spec: &SynthSection,
    fps: u32,
    seed: u64,
) -> Result<CorpusManifest> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let extractor = FeatureExtractor::new(FeatureConfig {
        sample_rate: SAMPLE_RATE,
        fps,
        ..FeatureConfig::default()
    })?;
    let hop = extractor.hop();
    let skel = Skeleton::<Real>::smpl24();

    let mut clips = Vec::with_capacity(spec.clips);
    for id in 0..spec.clips {
        let mut rng = stream(seed, "synth-clip", id as u64);
        let genre = id % spec.genres;
        // tempo changes at every quarter of the clip, and consecutive
        // quarters never share a period: with a constant (or inferable)
        // period the past implies every future beat and a model that can
        // look ahead gains nothing over a causal one
        let mut periods: Vec<usize> = Vec::with_capacity(TEMPO_SEGMENTS);
        for s in 0..TEMPO_SEGMENTS {
            let p = if s == 0 {
                rng.gen_range(spec.period_lo..=spec.period_hi)
            } else {
                // uniform over [lo, hi] minus the previous segment's period
                let pick = rng.gen_range(spec.period_lo..spec.period_hi);
                if pick >= periods[s - 1] {
                    pick + 1
                } else {
                    pick
                }
            };
            periods.push(p);
        }
        // beats stay a full smoothing window (9 frames) plus slack clear of
        // both clip edges: a speed minimum closer to a boundary than the
        // smoother's radius cannot be localized in any motion track
        let offset = rng.gen_range(12..=15);

        let seg_len = spec.clip_frames / TEMPO_SEGMENTS;
        let mut nominal = vec![offset];
        loop {
            let b = *nominal.last().unwrap();
            let seg = (b / seg_len).min(TEMPO_SEGMENTS - 1);
            let next = b + periods[seg];
            if next + 12 >= spec.clip_frames {
                break;
            }
            nominal.push(next);
        }
        if nominal.len() < 2 {
            return Err(CoreError::Invalid(format!(
                "clip {id}: periods {periods:?} leave fewer than 2 beats in \
                 {} frames",
                spec.clip_frames
            )));
        }

        let n_samples = spec.clip_frames * hop;
        let samples = synth_audio(&mut rng, &nominal, n_samples, hop);
        let wav_name = format!("clip_{id:03}.wav");
        wav::write_wav(&dir.join(&wav_name), SAMPLE_RATE, &samples)?;

        let feats = extractor.extract(&samples)?;
        let detected = beats_from_features(&feats);
        if detected.len() < 2 {
            return Err(CoreError::Invalid(format!(
                "clip {id}: audio analysis found {} beats, need at least 2",
                detected.len()
            )));
        }

        let pose = synth_motion(&mut rng, &skel, &detected, spec.clip_frames, genre);
        let motion_name = format!("clip_{id:03}.motion.json");
        save_motion_json(&dir.join(&motion_name), fps, &pose)?;

        let mbeats = metrics::motion_beats(&pose, &skel)?;
        let gt_bas = metrics::bas(&mbeats, &detected, metrics::BEAT_SIGMA)?;

        clips.push(ClipMeta {
            id,
            genre,
            periods,
            frames: spec.clip_frames,
            wav: wav_name,
            motion: motion_name,
            beats: detected,
            gt_bas,
        });
    }

    let manifest = CorpusManifest {
        seed,
        fps,
        genres: spec.genres,
        clips,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Invalid(format!("manifest: {e}")))?;
    std::fs::write(dir.join("manifest.json"), text)
        .map_err(|e| CoreError::io(dir.join("manifest.json"), e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<CorpusManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|_| {
        CoreError::MissingArtifact(format!(
            "{} (run `synth` first)",
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| CoreError::format(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SynthSection {
        SynthSection {
            clips: 4,
            clip_frames: 120,
            genres: 2,
            period_lo: 12,
            period_hi: 16,
        }
    }

    #[test]
    fn corpus_is_beat_locked_and_bitwise_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let ma = synth_corpus(&a, &small_spec(), 30, 11).unwrap();
        let mb = synth_corpus(&b, &small_spec(), 30, 11).unwrap();

        for clip in &ma.clips {
            assert!(clip.beats.len() >= 2, "clip {} beats {:?}", clip.id, clip.beats);
            assert!(
                clip.gt_bas >= 0.95,
                "clip {} ground-truth alignment {}",
                clip.id,
                clip.gt_bas
            );
            let (_, pose) = tokendance_core::motion::load_motion_json::<Real>(
                &a.join(&clip.motion),
            )
            .unwrap();
            assert_eq!(pose.cols(), POSE_DIMS);
            assert_eq!(pose.rows(), clip.frames);
        }
        assert_eq!(ma.clips.len(), mb.clips.len());
        for clip in &ma.clips {
            for name in [&clip.wav, &clip.motion] {
                let x = std::fs::read(a.join(name)).unwrap();
                let y = std::fs::read(b.join(name)).unwrap();
                assert_eq!(x, y, "{name} differs between identical runs");
            }
        }
        assert_eq!(
            std::fs::read(a.join("manifest.json")).unwrap(),
            std::fs::read(b.join("manifest.json")).unwrap()
        );
        // different seed actually changes the corpus
        let c = dir.path().join("c");
        let mc = synth_corpus(&c, &small_spec(), 30, 12).unwrap();
        let first = &ma.clips[0];
        let other = &mc.clips[0];
        assert!(
            std::fs::read(a.join(&first.wav)).unwrap()
                != std::fs::read(c.join(&other.wav)).unwrap()
        );
    }

    #[test]
    fn phase_is_linear_between_beats_and_extends_past_ends() {
        let beats = [10usize, 20, 32];
        let pi = std::f64::consts::PI;
        assert!((beat_phase(&beats, 10.0)).abs() < 1e-12);
        assert!((beat_phase(&beats, 20.0) - pi).abs() < 1e-12);
        assert!((beat_phase(&beats, 32.0) - 2.0 * pi).abs() < 1e-12);
        assert!((beat_phase(&beats, 15.0) - 0.5 * pi).abs() < 1e-12);
        // slope continues outward: 1 beat per 10 frames before, per 12 after
        assert!((beat_phase(&beats, 0.0) + pi).abs() < 1e-12);
        assert!((beat_phase(&beats, 44.0) - 3.0 * pi).abs() < 1e-12);
    }
}

