//! The seven subcommands as library functions over an output directory.
//! Each reads only its declared upstream artifacts, writes its own directory,
//! and records a manifest for `--skip-existing`.

use std::path::{Path, PathBuf};

use serde_json::json;

use tokendance_core::audiofeat::{wav, FeatureConfig, FeatureExtractor};
use tokendance_core::autodiff::{checkpoint, ParamStore, Tensor};
use tokendance_core::error::{CoreError, Result};
use tokendance_core::fsq::{load_tokens, save_tokens};
use tokendance_core::generator::{
    pool_features, train_generator, token_accuracy, ClipTokens, Generator, MusicInput,
};
use tokendance_core::metrics::{
    self, FeatureVariant, MetricReport,
};
use tokendance_core::motion::{load_motion_json, save_motion_json, Skeleton};
use tokendance_core::rng::stream;
use tokendance_core::tokenizer::{
    train_dance, train_music, train_music_undecomposed, DanceTokenizer, FeatureStats,
    MusicTokenizer, UndecomposedMusicTokenizer,
};
use tokendance_core::Real;

use rand::Rng;

use crate::artifacts::{
    checkpoint_path, ensure_dir, file_hash, inputs_hash, read_stage_manifest, require,
    stage_is_current, write_loss_curve, write_stage_manifest,
};
use crate::bench;
use crate::config::{Experiment, SAMPLE_RATE};
use crate::synth::{self, CorpusManifest};

pub struct Paths {
    out: PathBuf,
}

impl Paths {
    pub fn new(out: &Path) -> Paths {
        Paths { out: out.to_path_buf() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.out.join("corpus")
    }
    pub fn stage1(&self) -> PathBuf {
        self.out.join("stage1")
    }
    pub fn tokens(&self) -> PathBuf {
        self.out.join("tokens")
    }
    pub fn stage2(&self) -> PathBuf {
        self.out.join("stage2")
    }
    pub fn generated(&self) -> PathBuf {
        self.out.join("generated")
    }
    pub fn eval(&self) -> PathBuf {
        self.out.join("eval")
    }
    pub fn bench(&self) -> PathBuf {
        self.out.join("bench")
    }
    pub fn ablate(&self) -> PathBuf {
        self.out.join("ablate")
    }
}

fn section_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config section serializes")
}

// ------------------------------------------------------- corpus loading ----

pub(crate) fn feature_extractor(fps: u32) -> Result<FeatureExtractor> {
    FeatureExtractor::new(FeatureConfig {
        sample_rate: SAMPLE_RATE,
        fps,
        ..FeatureConfig::default()
    })
}

fn corpus_features(man: &CorpusManifest, dir: &Path) -> Result<Vec<Tensor<Real>>> {
    let ex = feature_extractor(man.fps)?;
    man.clips
        .iter()
        .map(|c| {
            let (sr, samples) = wav::read_wav(&dir.join(&c.wav))?;
            if sr != SAMPLE_RATE {
                return Err(CoreError::Invalid(format!(
                    "{}: sample rate {sr}, pipeline expects {SAMPLE_RATE}",
                    c.wav
                )));
            }
            ex.extract(&samples)
        })
        .collect()
}

fn corpus_motion(man: &CorpusManifest, dir: &Path) -> Result<Vec<Tensor<Real>>> {
    man.clips
        .iter()
        .map(|c| load_motion_json::<Real>(&dir.join(&c.motion)).map(|(_, pose)| pose))
        .collect()
}

// --------------------------------------------------- checkpoint loading ----

fn dummy_stats() -> FeatureStats {
    FeatureStats {
        mean: vec![0.0; tokendance_core::audiofeat::FEAT_DIMS],
        std: vec![1.0; tokendance_core::audiofeat::FEAT_DIMS],
    }
}

pub(crate) fn load_dance(dir: &Path, channels: usize) -> Result<(ParamStore<Real>, DanceTokenizer)> {
    let path = checkpoint_path(dir, "dance");
    require(&path, "train-stage1")?;
    let mut store = ParamStore::<Real>::new();
    let mut rng = stream(0, "load", 0);
    let tok = DanceTokenizer::init(&mut store, &mut rng, channels);
    checkpoint::load_into(&mut store, &path)?;
    Ok((store, tok))
}

pub(crate) fn load_music(dir: &Path, channels: usize) -> Result<(ParamStore<Real>, MusicTokenizer)> {
    let path = checkpoint_path(dir, "music");
    require(&path, "train-stage1")?;
    let mut store = ParamStore::<Real>::new();
    let mut rng = stream(0, "load", 0);
    let _ = MusicTokenizer::init(&mut store, &mut rng, channels, &dummy_stats());
    checkpoint::load_into(&mut store, &path)?;
    let tok = MusicTokenizer::from_store(&store, channels)?;
    Ok((store, tok))
}

pub(crate) fn load_music_undecomposed(
    dir: &Path,
    channels: usize,
) -> Result<(ParamStore<Real>, UndecomposedMusicTokenizer)> {
    let path = checkpoint_path(dir, "music");
    require(&path, "train-stage1")?;
    let mut store = ParamStore::<Real>::new();
    let mut rng = stream(0, "load", 0);
    let _ = UndecomposedMusicTokenizer::init(&mut store, &mut rng, channels, &dummy_stats());
    checkpoint::load_into(&mut store, &path)?;
    let tok = UndecomposedMusicTokenizer::from_store(&store, channels)?;
    Ok((store, tok))
}

fn stage1_used_decomposition(stage1_dir: &Path) -> Result<bool> {
    let m = read_stage_manifest(stage1_dir)?;
    Ok(m.info
        .get("music_decomposition")
        .and_then(|v| v.as_bool())
        .unwrap_or(true))
}

pub(crate) fn load_generator(
    dir: &Path,
    exp: &Experiment,
    n_genres: usize,
) -> Result<(ParamStore<Real>, Generator)> {
    let path = checkpoint_path(dir, "generator");
    require(&path, "train-stage2")?;
    let cfg = exp
        .stage2
        .to_core(n_genres, exp.run.seed)
        .map_err(CoreError::Invalid)?;
    let mut store = ParamStore::<Real>::new();
    let mut rng = stream(0, "load", 0);
    let gen = Generator::init(&mut store, &mut rng, cfg.model);
    checkpoint::load_into(&mut store, &path)?;
    Ok((store, gen))
}

// ---------------------------------------------------------------- synth ----

pub fn cmd_synth(exp: &Experiment, paths: &Paths, skip: bool) -> Result<()> {
    let dir = paths.corpus();
    let hash = inputs_hash(&[
        &section_json(&exp.synth),
        &exp.run.fps.to_string(),
        &exp.run.seed.to_string(),
    ]);
    if skip && stage_is_current(&dir, &hash) {
        println!("synth: up to date, skipping");
        return Ok(());
    }
    ensure_dir(&dir)?;
    let man = synth::synth_corpus(&dir, &exp.synth, exp.run.fps, exp.run.seed)?;
    let mut outputs = vec!["manifest.json".to_string()];
    let mut worst = f64::INFINITY;
    for c in &man.clips {
        outputs.push(c.wav.clone());
        outputs.push(c.motion.clone());
        worst = worst.min(c.gt_bas);
    }
    write_stage_manifest(
        &dir,
        &hash,
        &outputs,
        json!({ "clips": man.clips.len(), "worst_gt_bas": worst }),
    )?;
    println!(
        "synth: {} clips, {} genres, worst ground-truth beat alignment {:.4}",
        man.clips.len(),
        man.genres,
        worst
    );
    Ok(())
}

// --------------------------------------------------------------- stage 1 ----

pub fn cmd_train_stage1(exp: &Experiment, paths: &Paths, skip: bool) -> Result<()> {
    let corpus_dir = paths.corpus();
    let man = synth::load_manifest(&corpus_dir)?;
    let corpus_hash = file_hash(&corpus_dir.join("manifest.json"))?;
    let dir = paths.stage1();
    let hash = inputs_hash(&[
        &section_json(&exp.stage1),
        &exp.run.seed.to_string(),
        &corpus_hash,
    ]);
    if skip && stage_is_current(&dir, &hash) {
        println!("train-stage1: up to date, skipping");
        return Ok(());
    }
    ensure_dir(&dir)?;

    let cfg = exp.stage1.to_core(exp.run.seed);
    let motion = corpus_motion(&man, &corpus_dir)?;
    let feats = corpus_features(&man, &corpus_dir)?;

    let (dance_store, dance_tok, dance_curve) = train_dance(&motion, man.fps, &cfg)?;
    checkpoint::save(&dance_store, &checkpoint_path(&dir, "dance"))?;
    write_loss_curve(&dir.join("dance_loss.csv"), &dance_curve)?;
    let per_clip_mse: Vec<f64> = motion
        .iter()
        .map(|p| dance_tok.recon_mse(&dance_store, p))
        .collect::<Result<_>>()?;
    let dance_mse = per_clip_mse.iter().sum::<f64>() / per_clip_mse.len() as f64;

    let (music_mae, music_last) = if exp.stage1.music_decomposition {
        let (store, tok, curve) = train_music(&feats, &cfg)?;
        checkpoint::save(&store, &checkpoint_path(&dir, "music"))?;
        write_loss_curve(&dir.join("music_loss.csv"), &curve)?;
        (mean_music_mae(&feats, |f| tok.recon_mae(&store, f))?, curve.last().map(|c| c.1))
    } else {
        let (store, tok, curve) = train_music_undecomposed(&feats, &cfg)?;
        checkpoint::save(&store, &checkpoint_path(&dir, "music"))?;
        write_loss_curve(&dir.join("music_loss.csv"), &curve)?;
        (mean_music_mae(&feats, |f| tok.recon_mae(&store, f))?, curve.last().map(|c| c.1))
    };

    write_stage_manifest(
        &dir,
        &hash,
        &[
            "dance.ckpt".into(),
            "music.ckpt".into(),
            "dance_loss.csv".into(),
            "music_loss.csv".into(),
        ],
        json!({
            "music_decomposition": exp.stage1.music_decomposition,
            "channels": exp.stage1.channels,
            "dance_final_loss": dance_curve.last().map(|c| c.1),
            "music_final_loss": music_last,
            "dance_recon_mse": dance_mse,
            "music_mae": { "s": music_mae.0, "a": music_mae.1, "f": music_mae.2 },
        }),
    )?;
    println!(
        "train-stage1: dance reconstruction MSE {dance_mse:.5}, music MAE@F {:.4}",
        music_mae.2
    );
    Ok(())
}

fn mean_music_mae(
    feats: &[Tensor<Real>],
    per_clip: impl Fn(&Tensor<Real>) -> Result<(f64, f64, f64)>,
) -> Result<(f64, f64, f64)> {
    let mut acc = (0.0, 0.0, 0.0);
    for f in feats {
        let (s, a, t) = per_clip(f)?;
        acc = (acc.0 + s, acc.1 + a, acc.2 + t);
    }
    let n = feats.len() as f64;
    Ok((acc.0 / n, acc.1 / n, acc.2 / n))
}

// --------------------------------------------------------------- stage 2 ----

/// Tokenize the corpus with the stage-1 models and persist the streams.
fn encode_corpus(
    exp: &Experiment,
    paths: &Paths,
    man: &CorpusManifest,
) -> Result<Vec<ClipTokens<Real>>> {
    let corpus_dir = paths.corpus();
    let stage1_dir = paths.stage1();
    let tokens_dir = paths.tokens();
    ensure_dir(&tokens_dir)?;
    let bypass = exp.stage2.bypass_music_tokens;
    let decomposed = stage1_used_decomposition(&stage1_dir)?;
    if !decomposed && !bypass {
        return Err(CoreError::Invalid(
            "stage-1 trained an undecomposed music tokenizer (single stream); \
             the generator needs both streams or bypass_music_tokens = true"
                .into(),
        ));
    }

    let motion = corpus_motion(man, &corpus_dir)?;
    let feats = corpus_features(man, &corpus_dir)?;
    let (dance_store, dance_tok) = load_dance(&stage1_dir, exp.stage1.channels)?;
    let music = if bypass {
        None
    } else {
        Some(load_music(&stage1_dir, exp.stage1.channels)?)
    };

    let mut clips = Vec::with_capacity(man.clips.len());
    let mut outputs = Vec::new();
    for (i, meta) in man.clips.iter().enumerate() {
        let (up, lo) = dance_tok.encode_clip(&dance_store, &motion[i])?;
        let up_name = format!("clip_{:03}.up.tok", meta.id);
        let lo_name = format!("clip_{:03}.lo.tok", meta.id);
        save_tokens(&tokens_dir.join(&up_name), &up)?;
        save_tokens(&tokens_dir.join(&lo_name), &lo)?;
        outputs.push(up_name);
        outputs.push(lo_name);

        let (sem, ac, pooled) = if let Some((ms, mt)) = &music {
            let (sem, ac) = mt.encode_clip(ms, &feats[i])?;
            let sem_name = format!("clip_{:03}.sem.tok", meta.id);
            let ac_name = format!("clip_{:03}.ac.tok", meta.id);
            save_tokens(&tokens_dir.join(&sem_name), &sem)?;
            save_tokens(&tokens_dir.join(&ac_name), &ac)?;
            outputs.push(sem_name);
            outputs.push(ac_name);
            (sem.codes, ac.codes, None)
        } else {
            (Vec::new(), Vec::new(), Some(pool_features(&feats[i])))
        };

        clips.push(ClipTokens {
            genre: meta.genre,
            sem,
            ac,
            up: up.codes,
            lo: lo.codes,
            pooled,
        });
    }
    let corpus_hash = file_hash(&corpus_dir.join("manifest.json"))?;
    let stage1_hash = file_hash(&stage1_dir.join("stage.json"))?;
    write_stage_manifest(
        &tokens_dir,
        &inputs_hash(&[&corpus_hash, &stage1_hash, &bypass.to_string()]),
        &outputs,
        json!({ "bypass_music_tokens": bypass }),
    )?;
    Ok(clips)
}

pub fn cmd_train_stage2(exp: &Experiment, paths: &Paths, skip: bool) -> Result<()> {
    let man = synth::load_manifest(&paths.corpus())?;
    let dir = paths.stage2();
    let corpus_hash = file_hash(&paths.corpus().join("manifest.json"))?;
    require(&checkpoint_path(&paths.stage1(), "dance"), "train-stage1")?;
    let stage1_hash = file_hash(&paths.stage1().join("stage.json"))?;
    let hash = inputs_hash(&[
        &section_json(&exp.stage2),
        &exp.run.seed.to_string(),
        &corpus_hash,
        &stage1_hash,
    ]);
    if skip && stage_is_current(&dir, &hash) {
        println!("train-stage2: up to date, skipping");
        return Ok(());
    }
    ensure_dir(&dir)?;

    let clips = encode_corpus(exp, paths, &man)?;
    let cfg = exp
        .stage2
        .to_core(man.genres, exp.run.seed)
        .map_err(CoreError::Invalid)?;
    let (store, gen, curve) = train_generator(&clips, &cfg)?;
    checkpoint::save(&store, &checkpoint_path(&dir, "generator"))?;
    write_loss_curve(&dir.join("loss.csv"), &curve)?;
    let acc = token_accuracy(&store, &gen, &clips)?;

    write_stage_manifest(
        &dir,
        &hash,
        &["generator.ckpt".into(), "loss.csv".into()],
        json!({
            "backbone": exp.stage2.backbone,
            "bypass_music_tokens": exp.stage2.bypass_music_tokens,
            "final_loss": curve.last().map(|c| c.1),
            "train_token_accuracy": acc,
        }),
    )?;
    println!(
        "train-stage2: final loss {:.4}, training token accuracy {:.3}",
        curve.last().map(|c| c.1).unwrap_or(f64::NAN),
        acc
    );
    Ok(())
}

// -------------------------------------------------------------- generate ----

pub fn cmd_generate(exp: &Experiment, paths: &Paths, skip: bool) -> Result<()> {
    let man = synth::load_manifest(&paths.corpus())?;
    let dir = paths.generated();
    let corpus_hash = file_hash(&paths.corpus().join("manifest.json"))?;
    require(&checkpoint_path(&paths.stage1(), "dance"), "train-stage1")?;
    require(&checkpoint_path(&paths.stage2(), "generator"), "train-stage2")?;
    let stage1_hash = file_hash(&paths.stage1().join("stage.json"))?;
    let stage2_hash = file_hash(&paths.stage2().join("stage.json"))?;
    let hash = inputs_hash(&[
        &section_json(&exp.generate),
        &section_json(&exp.stage2),
        &exp.run.seed.to_string(),
        &corpus_hash,
        &stage1_hash,
        &stage2_hash,
    ]);
    if skip && stage_is_current(&dir, &hash) {
        println!("generate: up to date, skipping");
        return Ok(());
    }
    ensure_dir(&dir)?;

    let bypass = exp.stage2.bypass_music_tokens;
    let feats = corpus_features(&man, &paths.corpus())?;
    let (dance_store, dance_tok) = load_dance(&paths.stage1(), exp.stage1.channels)?;
    let music = if bypass {
        None
    } else {
        Some(load_music(&paths.stage1(), exp.stage1.channels)?)
    };
    let (gen_store, gen) = load_generator(&paths.stage2(), exp, man.genres)?;

    let mut seed_rng = stream(exp.run.seed, "generate-seeds", 0);
    let clip_seeds: Vec<u64> = (0..man.clips.len()).map(|_| seed_rng.gen()).collect();

    let mut outputs = Vec::new();
    for (i, meta) in man.clips.iter().enumerate() {
        let music_toks = match &music {
            Some((ms, mt)) => Some(mt.encode_clip(ms, &feats[i])?),
            None => None,
        };
        let pooled = music_toks.is_none().then(|| pool_features(&feats[i]));
        let input = match (&music_toks, &pooled) {
            (Some((s, a)), _) => MusicInput::Tokens {
                sem: &s.codes,
                ac: &a.codes,
            },
            (None, Some(p)) => MusicInput::Pooled(p),
            (None, None) => unreachable!(),
        };
        let (up, lo) = gen.generate(
            &gen_store,
            &input,
            meta.genre,
            meta.frames as u32,
            exp.generate.temperature,
            clip_seeds[i],
        )?;
        let up_name = format!("clip_{:03}.up.tok", meta.id);
        let lo_name = format!("clip_{:03}.lo.tok", meta.id);
        save_tokens(&dir.join(&up_name), &up)?;
        save_tokens(&dir.join(&lo_name), &lo)?;
        let pose = dance_tok.decode_tokens(&dance_store, &up, &lo)?;
        let motion_name = format!("clip_{:03}.motion.json", meta.id);
        save_motion_json(&dir.join(&motion_name), man.fps, &pose)?;
        outputs.push(up_name);
        outputs.push(lo_name);
        outputs.push(motion_name);
    }

    write_stage_manifest(
        &dir,
        &hash,
        &outputs,
        json!({
            "clips": man.clips.len(),
            "temperature": exp.generate.temperature,
            "single_forward_per_clip": gen.forward_count() == man.clips.len() as u64,
        }),
    )?;
    println!(
        "generate: {} clips decoded ({} forward passes)",
        man.clips.len(),
        gen.forward_count()
    );
    Ok(())
}

// ------------------------------------------------------------------ eval ----

pub fn cmd_eval(exp: &Experiment, paths: &Paths, skip: bool) -> Result<()> {
    let man = synth::load_manifest(&paths.corpus())?;
    let dir = paths.eval();
    let corpus_hash = file_hash(&paths.corpus().join("manifest.json"))?;
    let reference_mode = exp.eval.compare == "reference";
    let gen_hash = if reference_mode {
        "reference".to_string()
    } else {
        require(&paths.generated().join("stage.json"), "generate")?;
        file_hash(&paths.generated().join("stage.json"))?
    };
    require(&checkpoint_path(&paths.stage1(), "music"), "train-stage1")?;
    let stage1_hash = file_hash(&paths.stage1().join("stage.json"))?;
    let hash = inputs_hash(&[
        &section_json(&exp.eval),
        &corpus_hash,
        &stage1_hash,
        &gen_hash,
    ]);
    if skip && stage_is_current(&dir, &hash) {
        println!("eval: up to date, skipping");
        return Ok(());
    }
    ensure_dir(&dir)?;

    let reference = corpus_motion(&man, &paths.corpus())?;
    let candidate: Vec<Tensor<Real>> = if reference_mode {
        reference.clone()
    } else {
        man.clips
            .iter()
            .map(|c| {
                load_motion_json::<Real>(
                    &paths.generated().join(format!("clip_{:03}.motion.json", c.id)),
                )
                .map(|(_, p)| p)
            })
            .collect::<Result<_>>()?
    };

    let report = metric_report(exp, paths, &man, &reference, &candidate)?;

    let json_text = serde_json::to_string_pretty(&report)
        .map_err(|e| CoreError::Invalid(format!("report: {e}")))?;
    std::fs::write(dir.join("report.json"), json_text)
        .map_err(|e| CoreError::io(dir.join("report.json"), e))?;
    let csv = format!("{}\n{}\n", MetricReport::csv_header(), report.csv_row());
    std::fs::write(dir.join("report.csv"), csv)
        .map_err(|e| CoreError::io(dir.join("report.csv"), e))?;
    write_stage_manifest(
        &dir,
        &hash,
        &["report.json".into(), "report.csv".into()],
        json!({ "compare": exp.eval.compare }),
    )?;
    println!(
        "eval ({}): FID_k {:.4}  FID_g {:.4}  DIV_k {:.4}  DIV_g {:.4}  BAS {:.4}  MAE@F {:.4}",
        exp.eval.compare, report.fid_k, report.fid_g, report.div_k, report.div_g,
        report.bas, report.mae_f
    );
    Ok(())
}

fn motion_feature_sets(
    set: &[Tensor<Real>],
    variant: FeatureVariant,
    skel: &Skeleton<Real>,
    fps: f64,
) -> Result<Vec<Vec<f64>>> {
    set.iter()
        .map(|p| metrics::motion_features(p, variant, skel, fps))
        .collect()
}

/// The full metric report for a candidate motion set against the corpus.
fn metric_report(
    exp: &Experiment,
    paths: &Paths,
    man: &CorpusManifest,
    reference: &[Tensor<Real>],
    candidate: &[Tensor<Real>],
) -> Result<MetricReport> {
    let skel = Skeleton::<Real>::smpl24();
    let fps = man.fps as f64;

    let ref_k = motion_feature_sets(reference, FeatureVariant::Kinetic, &skel, fps)?;
    let cand_k = motion_feature_sets(candidate, FeatureVariant::Kinetic, &skel, fps)?;
    let ref_g = motion_feature_sets(reference, FeatureVariant::Geometric, &skel, fps)?;
    let cand_g = motion_feature_sets(candidate, FeatureVariant::Geometric, &skel, fps)?;

    let (fid_k, sh1) = metrics::fid(&cand_k, &ref_k)?;
    let (fid_g, sh2) = metrics::fid(&cand_g, &ref_g)?;
    let div_k = metrics::diversity(&cand_k)?;
    let div_g = metrics::diversity(&cand_g)?;

    let mut bas_sum = 0.0;
    for (pose, meta) in candidate.iter().zip(&man.clips) {
        let beats = metrics::motion_beats(pose, &skel)?;
        bas_sum += metrics::bas(&beats, &meta.beats, exp.eval.sigma)?;
    }
    let bas = bas_sum / candidate.len() as f64;

    let feats = corpus_features(man, &paths.corpus())?;
    let stage1_dir = paths.stage1();
    let mae = if stage1_used_decomposition(&stage1_dir)? {
        let (store, tok) = load_music(&stage1_dir, exp.stage1.channels)?;
        mean_music_mae(&feats, |f| tok.recon_mae(&store, f))?
    } else {
        let (store, tok) = load_music_undecomposed(&stage1_dir, exp.stage1.channels)?;
        mean_music_mae(&feats, |f| tok.recon_mae(&store, f))?
    };

    Ok(MetricReport {
        fid_k,
        fid_g,
        div_k,
        div_g,
        bas,
        mae_s: mae.0,
        mae_a: mae.1,
        mae_f: mae.2,
        shrinkage: sh1 || sh2,
    })
}

// ----------------------------------------------------------------- bench ----

pub fn cmd_bench(exp: &Experiment, paths: &Paths) -> Result<()> {
    require(&checkpoint_path(&paths.stage1(), "dance"), "train-stage1")?;
    require(&checkpoint_path(&paths.stage2(), "generator"), "train-stage2")?;
    let dir = paths.bench();
    ensure_dir(&dir)?;
    let report = bench::run(exp, paths)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CoreError::Invalid(format!("latency report: {e}")))?;
    std::fs::write(dir.join("latency.json"), &text)
        .map_err(|e| CoreError::io(dir.join("latency.json"), e))?;
    println!("{text}");
    Ok(())
}

// ---------------------------------------------------------------- ablate ----

#[derive(Debug, serde::Serialize)]
pub struct AblateReport {
    pub mae_f_decomposed: f64,
    pub mae_f_undecomposed: f64,
    /// Lower reconstruction error with split semantic/acoustic streams.
    pub decomposition_ordering_holds: bool,
    pub fid_g_bimamba: f64,
    pub fid_g_mamba: f64,
    pub acc_bimamba: f64,
    pub acc_mamba: f64,
    /// Bidirectional scanning matches or beats the unidirectional variant.
    pub backbone_ordering_holds: bool,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
}

pub fn cmd_ablate(exp: &Experiment, paths: &Paths, skip: bool) -> Result<()> {
    let man = synth::load_manifest(&paths.corpus())?;
    let dir = paths.ablate();
    let corpus_hash = file_hash(&paths.corpus().join("manifest.json"))?;
    require(&checkpoint_path(&paths.stage1(), "dance"), "train-stage1")?;
    let stage1_hash = file_hash(&paths.stage1().join("stage.json"))?;
    let hash = inputs_hash(&[
        &section_json(&exp.ablate),
        &section_json(&exp.stage1),
        &section_json(&exp.stage2),
        &exp.run.seed.to_string(),
        &corpus_hash,
        &stage1_hash,
    ]);
    if skip && stage_is_current(&dir, &hash) {
        println!("ablate: up to date, skipping");
        return Ok(());
    }
    ensure_dir(&dir)?;

    let feats = corpus_features(&man, &paths.corpus())?;
    let reference = corpus_motion(&man, &paths.corpus())?;

    // arm 1: music tokenization with and without stream decomposition,
    // identical budget, data order, and seed
    let mut s1 = exp.stage1.to_core(exp.run.seed);
    s1.epochs = exp.ablate.stage1_epochs;
    let (dec_store, dec_tok, _) = train_music(&feats, &s1)?;
    let mae_dec = mean_music_mae(&feats, |f| dec_tok.recon_mae(&dec_store, f))?;
    let (und_store, und_tok, _) = train_music_undecomposed(&feats, &s1)?;
    let mae_und = mean_music_mae(&feats, |f| und_tok.recon_mae(&und_store, f))?;

    // arm 2: generator backbone, trained on the tokens of the real stage-1
    // checkpoints with identical budget and seed per arm
    let clips = encode_corpus(exp, paths, &man)?;
    let skel = Skeleton::<Real>::smpl24();
    let ref_g = motion_feature_sets(&reference, FeatureVariant::Geometric, &skel, man.fps as f64)?;
    let (dance_store, dance_tok) = load_dance(&paths.stage1(), exp.stage1.channels)?;

    let fid_of = |backbone: &str| -> Result<(f64, f64)> {
        let mut sec = exp.stage2.clone();
        sec.backbone = backbone.into();
        sec.epochs = exp.ablate.stage2_epochs;
        let cfg = sec
            .to_core(man.genres, exp.run.seed)
            .map_err(CoreError::Invalid)?;
        let (store, gen, _) = train_generator(&clips, &cfg)?;
        let mut seed_rng = stream(exp.run.seed, "generate-seeds", 0);
        let mut dances = Vec::with_capacity(man.clips.len());
        for (i, meta) in man.clips.iter().enumerate() {
            let clip = &clips[i];
            let input = clip_music_input(clip, exp.stage2.bypass_music_tokens)?;
            let (up, lo) = gen.generate(
                &store,
                &input,
                meta.genre,
                meta.frames as u32,
                exp.ablate.temperature,
                seed_rng.gen(),
            )?;
            dances.push(dance_tok.decode_tokens(&dance_store, &up, &lo)?);
        }
        let cand_g = motion_feature_sets(&dances, FeatureVariant::Geometric, &skel, man.fps as f64)?;
        let acc = token_accuracy(&store, &gen, &clips)?;
        Ok((metrics::fid(&cand_g, &ref_g)?.0, acc))
    };
    let (fid_bi, acc_bi) = fid_of("bimamba")?;
    let (fid_uni, acc_uni) = fid_of("mamba")?;

    let report = AblateReport {
        mae_f_decomposed: mae_dec.2,
        mae_f_undecomposed: mae_und.2,
        decomposition_ordering_holds: mae_dec.2 < mae_und.2,
        fid_g_bimamba: fid_bi,
        fid_g_mamba: fid_uni,
        acc_bimamba: acc_bi,
        acc_mamba: acc_uni,
        backbone_ordering_holds: fid_bi <= fid_uni,
        stage1_epochs: exp.ablate.stage1_epochs,
        stage2_epochs: exp.ablate.stage2_epochs,
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CoreError::Invalid(format!("ablate report: {e}")))?;
    std::fs::write(dir.join("report.json"), &text)
        .map_err(|e| CoreError::io(dir.join("report.json"), e))?;
    write_stage_manifest(&dir, &hash, &["report.json".into()], json!({}))?;
    println!("{text}");
    Ok(())
}

fn clip_music_input<'a>(
    clip: &'a ClipTokens<Real>,
    bypass: bool,
) -> Result<MusicInput<'a, Real>> {
    if bypass {
        clip.pooled
            .as_ref()
            .map(MusicInput::Pooled)
            .ok_or_else(|| CoreError::Invalid("clip lacks pooled features".into()))
    } else {
        Ok(MusicInput::Tokens {
            sem: &clip.sem,
            ac: &clip.ac,
        })
    }
}

/// Round-trip sanity used by integration tests: token streams on disk are
/// byte-identical across identical runs.
pub fn read_generated_tokens(dir: &Path, id: usize) -> Result<(Vec<u16>, Vec<u16>)> {
    let up = load_tokens(&dir.join(format!("clip_{id:03}.up.tok")))?;
    let lo = load_tokens(&dir.join(format!("clip_{id:03}.lo.tok")))?;
    Ok((up.codes, lo.codes))
}
