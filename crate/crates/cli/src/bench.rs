//! Inference latency measurement across conditioning lengths.
//!
//! Timed region per run: music tokenization (or pooling), one generator
//! forward with sampling, and dance-token decoding back to a pose track.
//! Feature extraction is timed separately since it is shared preprocessing,
//! not model inference. Each length also times the associated-scan kernel in
//! both its parallel and sequential forms on identical inputs and reports
//! their maximum elementwise difference.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use tokendance_core::autodiff::Tensor;
use tokendance_core::error::Result;
use tokendance_core::generator::{pool_features, MusicInput};
use tokendance_core::rng::stream;
use tokendance_core::ssm::scan::{selective_scan_parallel, selective_scan_sequential};
use tokendance_core::Real;

use crate::commands::{self, Paths};
use crate::config::{Experiment, SAMPLE_RATE};
use crate::synth;

#[derive(Debug, Serialize)]
pub struct LengthRow {
    /// Requested conditioning length in motion frames.
    pub frames: usize,
    /// Frames actually realized by feature extraction on the audio.
    pub realized_frames: usize,
    pub extract_ms: f64,
    pub infer_ms: Vec<f64>,
    pub infer_ms_median: f64,
    pub scan_par_ms: f64,
    pub scan_seq_ms: f64,
    pub scan_max_abs_diff: f64,
}

#[derive(Debug, Serialize)]
pub struct LatencyReport {
    pub threads: usize,
    pub runs_per_length: usize,
    pub fps: u32,
    pub debug_build: bool,
    pub rows: Vec<LengthRow>,
    /// Median inference time of the longest length over the shortest.
    pub ratio_last_over_first: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Time both scan kernels on one random input set of `t` steps.
fn scan_pair(seed: u64, t: usize) -> (f64, f64, f64) {
    let (d, n) = (16, 16);
    let mut rng = stream(seed, "bench-scan", t as u64);
    let mut draw = |len: usize| -> Vec<Real> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let u = draw(t * d);
    let delta: Vec<Real> = draw(t * d).iter().map(|v| v.abs() + 0.05).collect();
    let a: Vec<Real> = draw(d * n).iter().map(|v| -v.abs() - 0.1).collect();
    let b = draw(t * n);
    let c = draw(t * n);

    let t0 = Instant::now();
    let par = selective_scan_parallel(&u, &delta, &a, &b, &c, t, d, n);
    let par_ms = ms(t0);
    let t1 = Instant::now();
    let seq = selective_scan_sequential(&u, &delta, &a, &b, &c, t, d, n);
    let seq_ms = ms(t1);
    let diff = par
        .iter()
        .zip(&seq)
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max);
    (par_ms, seq_ms, diff)
}

pub fn run(exp: &Experiment, paths: &Paths) -> Result<LatencyReport> {
    let fps = exp.run.fps;
    let hop = (SAMPLE_RATE / fps) as usize;
    let bypass = exp.stage2.bypass_music_tokens;

    let (dance_store, dance_tok) = commands::load_dance(&paths.stage1(), exp.stage1.channels)?;
    let music = if bypass {
        None
    } else {
        Some(commands::load_music(&paths.stage1(), exp.stage1.channels)?)
    };
    let man = synth::load_manifest(&paths.corpus())?;
    let (gen_store, gen) = commands::load_generator(&paths.stage2(), exp, man.genres)?;
    let ex = commands::feature_extractor(fps)?;

    let mut rows = Vec::new();
    for &frames in &exp.bench.frames {
        let mut rng = stream(exp.run.seed, "bench-audio", frames as u64);
        let beats: Vec<usize> =
            (0..).map(|k| 12 + 15 * k).take_while(|&b| b + 12 < frames).collect();
        let audio = synth::synth_audio(&mut rng, &beats, frames * hop, hop);

        let t0 = Instant::now();
        let feats: Tensor<Real> = ex.extract(&audio)?;
        let extract_ms = ms(t0);
        let realized = feats.rows();

        let one_run = || -> Result<f64> {
            let t0 = Instant::now();
            let music_toks = match &music {
                Some((ms_, mt)) => Some(mt.encode_clip(ms_, &feats)?),
                None => None,
            };
            let pooled = music_toks.is_none().then(|| pool_features(&feats));
            let input = match (&music_toks, &pooled) {
                (Some((s, a)), _) => MusicInput::Tokens { sem: &s.codes, ac: &a.codes },
                (None, Some(p)) => MusicInput::Pooled(p),
                (None, None) => unreachable!(),
            };
            let (up, lo) = gen.generate(
                &gen_store,
                &input,
                0,
                realized as u32,
                exp.generate.temperature,
                exp.run.seed,
            )?;
            let _pose = dance_tok.decode_tokens(&dance_store, &up, &lo)?;
            Ok(ms(t0))
        };

        one_run()?; // warmup: first touch of buffers and thread pool
        let mut infer_ms = Vec::with_capacity(exp.bench.runs);
        for _ in 0..exp.bench.runs {
            infer_ms.push(one_run()?);
        }
        let infer_ms_median = median(&infer_ms);
        let (scan_par_ms, scan_seq_ms, scan_max_abs_diff) = scan_pair(exp.run.seed, frames);

        println!(
            "bench {frames:>6} frames: infer median {infer_ms_median:.1} ms \
             (extract {extract_ms:.1} ms, scan par {scan_par_ms:.2} / seq {scan_seq_ms:.2} ms, \
             max diff {scan_max_abs_diff:.2e})"
        );
        rows.push(LengthRow {
            frames,
            realized_frames: realized,
            extract_ms,
            infer_ms,
            infer_ms_median,
            scan_par_ms,
            scan_seq_ms,
            scan_max_abs_diff,
        });
    }

    let ratio_last_over_first = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() > 1 => b.infer_ms_median / a.infer_ms_median,
        _ => 1.0,
    };
    Ok(LatencyReport {
        threads: rayon::current_num_threads(),
        runs_per_length: exp.bench.runs,
        fps,
        debug_build: cfg!(debug_assertions),
        rows,
        ratio_last_over_first,
    })
}
