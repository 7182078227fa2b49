//! Experiment configuration: a TOML document with one section per pipeline
//! stage. Every field has a default, so an empty file is a valid experiment;
//! `--print-effective-config` shows the fully resolved result.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tokendance_core::generator::{Backbone, GeneratorConfig, Stage2Config};
use tokendance_core::tokenizer::Stage1Config;

/// Audio sample rate for the whole pipeline; the feature hop is
/// `SAMPLE_RATE / fps` and must divide evenly.
pub const SAMPLE_RATE: u32 = 22050;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub run: RunSection,
    pub synth: SynthSection,
    pub stage1: Stage1Section,
    pub stage2: Stage2Section,
    pub generate: GenerateSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub ablate: AblateSection,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            run: RunSection::default(),
            synth: SynthSection::default(),
            stage1: Stage1Section::default(),
            stage2: Stage2Section::default(),
            generate: GenerateSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub fps: u32,
    pub out_dir: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            fps: 30,
            out_dir: "runs/exp".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub clips: usize,
    pub clip_frames: usize,
    pub genres: usize,
    /// Beat period bounds in frames; tempo = fps / period.
    pub period_lo: usize,
    pub period_hi: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            clips: 16,
            clip_frames: 240,
            genres: 4,
            period_lo: 12,
            period_hi: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Section {
    pub channels: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
    /// When false, the music tokenizer runs all 35 dims through one stream
    /// (ablation arm); the generator cannot train on its single stream.
    pub music_decomposition: bool,
}

impl Default for Stage1Section {
    fn default() -> Self {
        let c = Stage1Config::default();
        Stage1Section {
            channels: c.channels,
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            epochs: c.epochs,
            batch: c.batch,
            clip_norm: c.clip_norm,
            music_decomposition: true,
        }
    }
}

impl Stage1Section {
    pub fn to_core(&self, seed: u64) -> Stage1Config {
        Stage1Config {
            channels: self.channels,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epochs: self.epochs,
            batch: self.batch,
            clip_norm: self.clip_norm,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Section {
    pub d_model: usize,
    pub music_layers: usize,
    pub global_layers: usize,
    pub dance_layers: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
    /// Feed pooled raw features to the generator instead of music tokens.
    pub bypass_music_tokens: bool,
    /// "bimamba" (default) or "mamba".
    pub backbone: String,
}

impl Default for Stage2Section {
    fn default() -> Self {
        let c = Stage2Config::default();
        Stage2Section {
            d_model: c.model.d_model,
            music_layers: c.model.music_layers,
            global_layers: c.model.global_layers,
            dance_layers: c.model.dance_layers,
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            epochs: c.epochs,
            batch: c.batch,
            clip_norm: c.clip_norm,
            bypass_music_tokens: c.model.bypass_music_tokens,
            backbone: "bimamba".into(),
        }
    }
}

impl Stage2Section {
    pub fn backbone(&self) -> Result<Backbone, String> {
        match self.backbone.as_str() {
            "bimamba" => Ok(Backbone::BiMamba),
            "mamba" => Ok(Backbone::Mamba),
            other => Err(format!(
                "stage2.backbone must be \"bimamba\" or \"mamba\", got \"{other}\""
            )),
        }
    }

    pub fn to_core(&self, n_genres: usize, seed: u64) -> Result<Stage2Config, String> {
        Ok(Stage2Config {
            model: GeneratorConfig {
                d_model: self.d_model,
                n_genres,
                music_layers: self.music_layers,
                global_layers: self.global_layers,
                dance_layers: self.dance_layers,
                vocab: GeneratorConfig::default().vocab,
                bypass_music_tokens: self.bypass_music_tokens,
                backbone: self.backbone()?,
            },
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epochs: self.epochs,
            batch: self.batch,
            clip_norm: self.clip_norm,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// Softmax temperature for token sampling; 0 means argmax.
    pub temperature: f64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { temperature: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Beat-alignment kernel width in frames.
    pub sigma: f64,
    /// "generated" compares generated motion to the corpus; "reference"
    /// compares the corpus to itself (metric sanity mode).
    pub compare: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            sigma: 3.0,
            compare: "generated".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Frame lengths to time end-to-end inference at, ascending.
    pub frames: Vec<usize>,
    /// Timed repetitions per length (after one warmup); median is reported.
    pub runs: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            frames: vec![1024, 4096],
            runs: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Epoch budget for each tokenizer arm of the decomposition comparison.
    pub stage1_epochs: usize,
    /// Epoch budget for each generator arm of the backbone comparison.
    pub stage2_epochs: usize,
    pub temperature: f64,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            stage1_epochs: 40,
            stage2_epochs: 30,
            temperature: 0.0,
        }
    }
}

/// A config problem: reported on stderr and exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl Experiment {
    pub fn load(path: &Path) -> Result<Experiment, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let exp: Experiment = toml::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(exp)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out_dir)
    }

    /// Cross-field checks; run after CLI overrides are applied.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.run.fps == 0 || SAMPLE_RATE % self.run.fps != 0 {
            return err(format!(
                "run.fps must divide the sample rate {SAMPLE_RATE}, got {}",
                self.run.fps
            ));
        }
        if self.synth.clips == 0 || self.synth.genres == 0 {
            return err("synth.clips and synth.genres must be positive".into());
        }
        if self.synth.period_lo < 8 || self.synth.period_lo >= self.synth.period_hi {
            return err(format!(
                "beat period bounds must satisfy 8 <= lo < hi, got [{}, {}] \
                 (each clip changes tempo mid-way, which needs two distinct periods)",
                self.synth.period_lo, self.synth.period_hi
            ));
        }
        // beats start at frame <= 15 and must end 12 frames before the clip,
        // so two beats need period_hi + 28 frames at worst
        let min_frames = (3 * self.synth.period_hi).max(self.synth.period_hi + 28);
        if self.synth.clip_frames < min_frames {
            return err(format!(
                "synth.clip_frames = {} cannot hold two beats at period {} \
                 ({min_frames} frames needed)",
                self.synth.clip_frames, self.synth.period_hi
            ));
        }
        let min_clips = 2 * self.stage1.batch.max(self.stage2.batch);
        if self.synth.clips < min_clips {
            return err(format!(
                "synth.clips = {} is below 2x the largest batch size ({min_clips} needed)",
                self.synth.clips
            ));
        }
        if self.stage1.batch == 0 || self.stage2.batch == 0 {
            return err("batch sizes must be positive".into());
        }
        if self.stage1.channels == 0 || self.stage2.d_model == 0 {
            return err("model widths must be positive".into());
        }
        if self.stage2.music_layers == 0
            || self.stage2.global_layers == 0
            || self.stage2.dance_layers == 0
        {
            return err("stage2 layer counts must be positive".into());
        }
        self.stage2.backbone().map_err(ConfigError)?;
        if !self.stage1.music_decomposition && !self.stage2.bypass_music_tokens {
            return err(
                "stage1.music_decomposition = false leaves a single music token stream; \
                 stage-2 needs both streams (set stage2.bypass_music_tokens = true to \
                 condition on raw features instead)"
                    .into(),
            );
        }
        if !(self.generate.temperature >= 0.0) || !(self.ablate.temperature >= 0.0) {
            return err("temperatures must be >= 0 (0 = argmax)".into());
        }
        match self.eval.compare.as_str() {
            "generated" | "reference" => {}
            other => {
                return err(format!(
                    "eval.compare must be \"generated\" or \"reference\", got \"{other}\""
                ))
            }
        }
        if !(self.eval.sigma > 0.0) {
            return err("eval.sigma must be positive".into());
        }
        if self.bench.frames.is_empty() || self.bench.frames.windows(2).any(|w| w[0] >= w[1]) {
            return err("bench.frames must be a non-empty ascending list".into());
        }
        if self.bench.runs < 5 {
            return err(format!(
                "bench.runs must be at least 5 for a stable median, got {}",
                self.bench.runs
            ));
        }
        if self.ablate.stage1_epochs == 0 || self.ablate.stage2_epochs == 0 {
            return err("ablate epoch budgets must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults_and_validates() {
        let exp: Experiment = toml::from_str("").unwrap();
        exp.validate().unwrap();
        assert_eq!(exp.run.fps, 30);
        assert_eq!(exp.synth.clip_frames, 240);
        assert_eq!(exp.stage1.epochs, 200);
        assert_eq!(exp.stage2.epochs, 100);
        // effective dump parses back to the same document
        let dumped = exp.to_toml();
        let back: Experiment = toml::from_str(&dumped).unwrap();
        assert_eq!(back.to_toml(), dumped);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(toml::from_str::<Experiment>("[run]\nspeed = 3").is_err());
        let exp: Experiment = toml::from_str("[stage2]\nbackbone = \"lstm\"").unwrap();
        assert!(exp.validate().is_err());
        let exp: Experiment = toml::from_str("[synth]\nperiod_lo = 0").unwrap();
        assert!(exp.validate().is_err());
        // equal bounds leave no room for the mid-clip tempo change
        let exp: Experiment =
            toml::from_str("[synth]\nperiod_lo = 16\nperiod_hi = 16").unwrap();
        assert!(exp.validate().is_err());
        let exp: Experiment = toml::from_str("[synth]\nclips = 2").unwrap();
        assert!(exp.validate().is_err());
        let exp: Experiment = toml::from_str("[run]\nfps = 29").unwrap();
        assert!(exp.validate().is_err());
        // undecomposed music + token-fed generator is inconsistent
        let exp: Experiment =
            toml::from_str("[stage1]\nmusic_decomposition = false").unwrap();
        assert!(exp.validate().is_err());
        let exp: Experiment = toml::from_str(
            "[stage1]\nmusic_decomposition = false\n[stage2]\nbypass_music_tokens = true",
        )
        .unwrap();
        exp.validate().unwrap();
    }
}
