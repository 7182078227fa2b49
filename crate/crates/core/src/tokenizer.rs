//! Stage 1: FSQ autoencoders that turn continuous clips into token streams.
//!
//! Each modality trains one parameter store holding two stream coders:
//! dance = upper body + lower body (coupled through the shared kinematic
//! loss), music = semantic (MFCC) + acoustic (onset/chroma/beat/peak) dims
//! (coupled through a summed reconstruction loss). A coder downsamples time
//! by 8 with three stride-2 convolutions, bottlenecks to the 4 quantizer
//! channels, and mirrors back up with transposed convolutions.
//!
//! Clips are padded to a multiple of 8 frames by repeating the last frame;
//! token files record the original frame count so decoding can trim.

use rand::Rng;

use crate::audiofeat::{ACOUSTIC_DIMS, FEAT_DIMS, SEMANTIC_DIMS};
use crate::autodiff::train::{batched_step, epoch_batches};
use crate::autodiff::{
    Adam, AdamConfig, Conv1d, ConvT1d, Linear, ParamStore, Tape, Tensor, ValueId,
};
use crate::error::{CoreError, Result};
use crate::fsq::{Fsq, StreamId, TokenStream};
use crate::motion::{self, DanceLossRefs, Skeleton, LOWER_DIMS, POSE_DIMS, UPPER_DIMS};
use crate::rng::stream;
use crate::scalar::Scalar;

/// Frames per token.
pub const DOWNSAMPLE: usize = 8;

/// Repeat the last row until the row count is a multiple of `m`.
pub fn pad_rows_to_multiple<S: Scalar>(x: &Tensor<S>, m: usize) -> Tensor<S> {
    let (t, c) = (x.rows(), x.cols());
    let target = t.div_ceil(m) * m;
    if target == t {
        return x.clone();
    }
    let mut data = x.data().to_vec();
    let last = x.row(t - 1).to_vec();
    for _ in t..target {
        data.extend_from_slice(&last);
    }
    Tensor::from_vec(&[target, c], data).expect("padded rows")
}

/// One encoder/decoder pair for a single stream.
#[derive(Clone, Copy, Debug)]
pub struct StreamCoder {
    pub in_dims: usize,
    pub channels: usize,
    enc1: Conv1d,
    enc2: Conv1d,
    enc3: Conv1d,
    enc_mlp1: Linear,
    enc_mlp2: Linear,
    dec_mlp1: Linear,
    dec_mlp2: Linear,
    dec1: ConvT1d,
    dec2: ConvT1d,
    dec3: ConvT1d,
}

impl StreamCoder {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        in_dims: usize,
        channels: usize,
        latent_dims: usize,
    ) -> StreamCoder {
        let c = channels;
        StreamCoder {
            in_dims,
            channels: c,
            enc1: Conv1d::init(store, rng, &format!("{name}.enc1"), in_dims, c, 4, 2, 1),
            enc2: Conv1d::init(store, rng, &format!("{name}.enc2"), c, c, 4, 2, 1),
            enc3: Conv1d::init(store, rng, &format!("{name}.enc3"), c, c, 4, 2, 1),
            enc_mlp1: Linear::init(store, rng, &format!("{name}.enc_mlp1"), c, c, true),
            enc_mlp2: Linear::init(store, rng, &format!("{name}.enc_mlp2"), c, latent_dims, true),
            dec_mlp1: Linear::init(store, rng, &format!("{name}.dec_mlp1"), latent_dims, c, true),
            dec_mlp2: Linear::init(store, rng, &format!("{name}.dec_mlp2"), c, c, true),
            dec1: ConvT1d::init(store, rng, &format!("{name}.dec1"), c, c, 4, 2, 1),
            dec2: ConvT1d::init(store, rng, &format!("{name}.dec2"), c, c, 4, 2, 1),
            dec3: ConvT1d::init(store, rng, &format!("{name}.dec3"), c, in_dims, 4, 2, 1),
        }
    }

    /// `[T, in] -> [T/8, latent]`; T must be a multiple of 8.
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<S>, x: ValueId) -> Result<ValueId> {
        let t = tape.value(x).rows();
        if t % DOWNSAMPLE != 0 {
            return Err(CoreError::Invalid(format!(
                "encoder input length {t} is not a multiple of {DOWNSAMPLE}"
            )));
        }
        let h = self.enc1.apply(tape, x)?;
        let h = tape.silu(h)?;
        let h = self.enc2.apply(tape, h)?;
        let h = tape.silu(h)?;
        let h = self.enc3.apply(tape, h)?;
        let h = tape.silu(h)?;
        let h = self.enc_mlp1.apply(tape, h)?;
        let h = tape.silu(h)?;
        self.enc_mlp2.apply(tape, h)
    }

    /// `[T/8, latent] -> [T, in]`; the last layer is linear.
    pub fn decode<S: Scalar>(&self, tape: &mut Tape<S>, z: ValueId) -> Result<ValueId> {
        let h = self.dec_mlp1.apply(tape, z)?;
        let h = tape.silu(h)?;
        let h = self.dec_mlp2.apply(tape, h)?;
        let h = tape.silu(h)?;
        let h = self.dec1.apply(tape, h)?;
        let h = tape.silu(h)?;
        let h = self.dec2.apply(tape, h)?;
        let h = tape.silu(h)?;
        self.dec3.apply(tape, h)
    }
}

// ---------------------------------------------------------------- dance ----

pub struct DanceTokenizer {
    pub upper: StreamCoder,
    pub lower: StreamCoder,
    pub fsq: Fsq,
}

impl DanceTokenizer {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        channels: usize,
    ) -> DanceTokenizer {
        let fsq = Fsq::standard();
        let d = fsq.dims();
        let tok = DanceTokenizer {
            upper: StreamCoder::init(store, rng, "upper", UPPER_DIMS, channels, d),
            lower: StreamCoder::init(store, rng, "lower", LOWER_DIMS, channels, d),
            fsq,
        };
        // Final decoder biases start at the identity rotation's 6-D coords
        // so decoded poses begin as valid rotations; a zero start would put
        // every axis at the degenerate-norm floor where the orthonormalizer
        // rejects the input (and its curvature blows up).
        bias_to_identity_rot(store, tok.lower.dec3.b, 3);
        bias_to_identity_rot(store, tok.upper.dec3.b, 0);
        tok
    }

    /// Same graph as [`clip_loss`](Self::clip_loss) minus the quantizer's
    /// rounding step, whose surrogate gradient would defeat a
    /// finite-difference comparison.
    pub fn unquantized_loss<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pose_padded: &Tensor<S>,
        refs: &DanceLossRefs<S>,
        skel: &std::sync::Arc<Skeleton<S>>,
        fps: S,
    ) -> Result<ValueId> {
        let pose = tape.constant(pose_padded.clone());
        let lower_in = tape.slice_cols(pose, 0, LOWER_DIMS)?;
        let upper_in = tape.slice_cols(pose, LOWER_DIMS, POSE_DIMS)?;
        let z_lo = self.lower.encode(tape, lower_in)?;
        let rec_lo = self.lower.decode(tape, z_lo)?;
        let z_up = self.upper.encode(tape, upper_in)?;
        let rec_up = self.upper.decode(tape, z_up)?;
        let joined = tape.concat_cols(rec_lo, rec_up)?;
        motion::dance_loss(tape, joined, refs, skel, fps)
    }

    /// Encode -> quantize -> decode both halves and rejoin; returns the
    /// reconstructed full pose and the two digit-row value ids.
    fn reconstruct_on_tape<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pose: ValueId,
    ) -> Result<(ValueId, ValueId, ValueId)> {
        let lower_in = tape.slice_cols(pose, 0, LOWER_DIMS)?;
        let upper_in = tape.slice_cols(pose, LOWER_DIMS, POSE_DIMS)?;

        let z_lo = self.lower.encode(tape, lower_in)?;
        let (zq_lo, dig_lo) = self.fsq.apply_on_tape(tape, z_lo)?;
        let rec_lo = self.lower.decode(tape, zq_lo)?;

        let z_up = self.upper.encode(tape, upper_in)?;
        let (zq_up, dig_up) = self.fsq.apply_on_tape(tape, z_up)?;
        let rec_up = self.upper.decode(tape, zq_up)?;

        let joined = tape.concat_cols(rec_lo, rec_up)?;
        Ok((joined, dig_up, dig_lo))
    }

    /// Training loss for one clip: the six-term kinematic reconstruction
    /// loss on the rejoined pose. The clip must already be padded.
    pub fn clip_loss<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        pose_padded: &Tensor<S>,
        refs: &DanceLossRefs<S>,
        skel: &std::sync::Arc<Skeleton<S>>,
        fps: S,
    ) -> Result<ValueId> {
        let pose = tape.constant(pose_padded.clone());
        let (rec, _, _) = self.reconstruct_on_tape(tape, pose)?;
        motion::dance_loss(tape, rec, refs, skel, fps)
    }

    /// Tokenize a clip (any length >= 1 frame) into upper/lower streams.
    pub fn encode_clip<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        pose: &Tensor<S>,
    ) -> Result<(TokenStream, TokenStream)> {
        let frames = pose.rows() as u32;
        let padded = pad_rows_to_multiple(pose, DOWNSAMPLE);
        let mut tape = Tape::new(store);
        let p = tape.constant(padded);
        let lower_in = tape.slice_cols(p, 0, LOWER_DIMS)?;
        let upper_in = tape.slice_cols(p, LOWER_DIMS, POSE_DIMS)?;
        let z_lo = self.lower.encode(&mut tape, lower_in)?;
        let (_, dig_lo) = self.fsq.apply_on_tape(&mut tape, z_lo)?;
        let z_up = self.upper.encode(&mut tape, upper_in)?;
        let (_, dig_up) = self.fsq.apply_on_tape(&mut tape, z_up)?;
        let levels = self.levels_header();
        Ok((
            TokenStream {
                stream: StreamId::DanceUpper,
                levels,
                frame_count: frames,
                codes: self.fsq.digits_value_to_codes(tape.value(dig_up)),
            },
            TokenStream {
                stream: StreamId::DanceLower,
                levels,
                frame_count: frames,
                codes: self.fsq.digits_value_to_codes(tape.value(dig_lo)),
            },
        ))
    }

    /// Decode token streams back to a pose clip, trimmed to the original
    /// frame count.
    pub fn decode_tokens<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        upper: &TokenStream,
        lower: &TokenStream,
    ) -> Result<Tensor<S>> {
        if upper.stream != StreamId::DanceUpper || lower.stream != StreamId::DanceLower {
            return Err(CoreError::Invalid(format!(
                "stream mismatch: got {} + {}",
                upper.stream.tag(),
                lower.stream.tag()
            )));
        }
        if upper.frame_count != lower.frame_count || upper.codes.len() != lower.codes.len() {
            return Err(CoreError::Invalid(
                "upper/lower token streams disagree on length".into(),
            ));
        }
        let mut tape = Tape::new(store);
        let zq_up = tape.constant(self.fsq.codes_to_rows(&upper.codes));
        let zq_lo = tape.constant(self.fsq.codes_to_rows(&lower.codes));
        let rec_up = self.upper.decode(&mut tape, zq_up)?;
        let rec_lo = self.lower.decode(&mut tape, zq_lo)?;
        let joined = tape.concat_cols(rec_lo, rec_up)?;
        let full = tape.value(joined);
        trim_rows(full, upper.frame_count as usize)
    }

    fn levels_header(&self) -> [u8; 4] {
        let ls = self.fsq.levels();
        [ls[0] as u8, ls[1] as u8, ls[2] as u8, ls[3] as u8]
    }

    /// Plain per-element reconstruction MSE for one clip (no padding kept).
    pub fn recon_mse<S: Scalar>(&self, store: &ParamStore<S>, pose: &Tensor<S>) -> Result<f64> {
        let (up, lo) = self.encode_clip(store, pose)?;
        let rec = self.decode_tokens(store, &up, &lo)?;
        Ok(mean_sq_diff(pose, &rec))
    }
}

// ---------------------------------------------------------------- music ----

pub struct MusicTokenizer {
    pub sem: StreamCoder,
    pub ac: StreamCoder,
    pub fsq: Fsq,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl MusicTokenizer {
    /// `stats` are per-dimension (mean, std) over the training corpus; they
    /// are stored in the parameter store as non-trainable buffers so a saved
    /// checkpoint carries them.
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        channels: usize,
        stats: &FeatureStats,
    ) -> MusicTokenizer {
        let fsq = Fsq::standard();
        let d = fsq.dims();
        let tok = MusicTokenizer {
            sem: StreamCoder::init(store, rng, "sem", SEMANTIC_DIMS, channels, d),
            ac: StreamCoder::init(store, rng, "ac", ACOUSTIC_DIMS, channels, d),
            fsq,
            mean: stats.mean.clone(),
            std: stats.std.clone(),
        };
        store.add_buffer(
            "norm.mean",
            Tensor::from_vec(&[1, FEAT_DIMS], stats.mean.iter().map(|&v| S::of(v)).collect())
                .expect("norm mean"),
        );
        store.add_buffer(
            "norm.std",
            Tensor::from_vec(&[1, FEAT_DIMS], stats.std.iter().map(|&v| S::of(v)).collect())
                .expect("norm std"),
        );
        tok
    }

    /// Rebuild the coder view over a store loaded from a checkpoint,
    /// recovering the normalization buffers from it.
    pub fn from_store<S: Scalar>(store: &ParamStore<S>, channels: usize) -> Result<MusicTokenizer> {
        let mean_id = store
            .id_of("norm.mean")
            .ok_or_else(|| CoreError::Untrained("music tokenizer store lacks norm.mean".into()))?;
        let std_id = store
            .id_of("norm.std")
            .ok_or_else(|| CoreError::Untrained("music tokenizer store lacks norm.std".into()))?;
        let stats = FeatureStats {
            mean: store.get(mean_id).data().iter().map(|v| v.as_f64()).collect(),
            std: store.get(std_id).data().iter().map(|v| v.as_f64()).collect(),
        };
        // names must line up with an init-built store; rebuild the structure
        // against a scratch store and re-point ids by name
        let mut scratch = ParamStore::<S>::new();
        let mut r = stream(0, "rebuild", 0);
        let built = MusicTokenizer::init(&mut scratch, &mut r, channels, &stats);
        for (pid, name, _) in scratch.iter() {
            if store.id_of(name).is_none() {
                return Err(CoreError::Untrained(format!(
                    "music tokenizer store lacks `{name}`"
                )));
            }
            let _ = pid;
        }
        // ParamIds are insertion-ordered; init order is deterministic, so as
        // long as the name sets match and the caller built the store with the
        // same channels, ids align.
        if store.len() != scratch.len() {
            return Err(CoreError::Untrained(format!(
                "music tokenizer store has {} entries, expected {}",
                store.len(),
                scratch.len()
            )));
        }
        Ok(built)
    }

    fn norm_mul_add<S: Scalar>(&self, lo: usize, hi: usize) -> (Vec<S>, Vec<S>) {
        let mul: Vec<S> = (lo..hi).map(|i| S::of(1.0 / self.std[i])).collect();
        let add: Vec<S> = (lo..hi).map(|i| S::of(-self.mean[i] / self.std[i])).collect();
        (mul, add)
    }

    fn denorm_mul_add<S: Scalar>(&self, lo: usize, hi: usize) -> (Vec<S>, Vec<S>) {
        let mul: Vec<S> = (lo..hi).map(|i| S::of(self.std[i])).collect();
        let add: Vec<S> = (lo..hi).map(|i| S::of(self.mean[i])).collect();
        (mul, add)
    }

    /// Joint training loss for one padded clip: standardized-space MSE of
    /// both stream reconstructions, summed.
    pub fn clip_loss<S: Scalar>(&self, tape: &mut Tape<S>, feats_padded: &Tensor<S>) -> Result<ValueId> {
        let x = tape.constant(feats_padded.clone());
        let sem_in = tape.slice_cols(x, 0, SEMANTIC_DIMS)?;
        let ac_in = tape.slice_cols(x, SEMANTIC_DIMS, FEAT_DIMS)?;

        let (m, a) = self.norm_mul_add::<S>(0, SEMANTIC_DIMS);
        let sem_std = tape.col_affine(sem_in, m, a)?;
        let (m, a) = self.norm_mul_add::<S>(SEMANTIC_DIMS, FEAT_DIMS);
        let ac_std = tape.col_affine(ac_in, m, a)?;

        let z_s = self.sem.encode(tape, sem_std)?;
        let (zq_s, _) = self.fsq.apply_on_tape(tape, z_s)?;
        let rec_s = self.sem.decode(tape, zq_s)?;

        let z_a = self.ac.encode(tape, ac_std)?;
        let (zq_a, _) = self.fsq.apply_on_tape(tape, z_a)?;
        let rec_a = self.ac.decode(tape, zq_a)?;

        let l_s = tape.mse(rec_s, sem_std)?;
        let l_a = tape.mse(rec_a, ac_std)?;
        tape.add(l_s, l_a)
    }

    /// Same graph as [`clip_loss`](Self::clip_loss) with the quantizer
    /// bypassed (continuous latents straight through). The training graph's
    /// rounding step has a surrogate gradient, so finite-difference
    /// validation runs against this variant.
    pub fn unquantized_loss<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        feats_padded: &Tensor<S>,
    ) -> Result<ValueId> {
        let x = tape.constant(feats_padded.clone());
        let sem_in = tape.slice_cols(x, 0, SEMANTIC_DIMS)?;
        let ac_in = tape.slice_cols(x, SEMANTIC_DIMS, FEAT_DIMS)?;
        let (m, a) = self.norm_mul_add::<S>(0, SEMANTIC_DIMS);
        let sem_std = tape.col_affine(sem_in, m, a)?;
        let (m, a) = self.norm_mul_add::<S>(SEMANTIC_DIMS, FEAT_DIMS);
        let ac_std = tape.col_affine(ac_in, m, a)?;
        let z_s = self.sem.encode(tape, sem_std)?;
        let rec_s = self.sem.decode(tape, z_s)?;
        let z_a = self.ac.encode(tape, ac_std)?;
        let rec_a = self.ac.decode(tape, z_a)?;
        let l_s = tape.mse(rec_s, sem_std)?;
        let l_a = tape.mse(rec_a, ac_std)?;
        tape.add(l_s, l_a)
    }

    pub fn encode_clip<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        feats: &Tensor<S>,
    ) -> Result<(TokenStream, TokenStream)> {
        let frames = feats.rows() as u32;
        let padded = pad_rows_to_multiple(feats, DOWNSAMPLE);
        let mut tape = Tape::new(store);
        let x = tape.constant(padded);
        let sem_in = tape.slice_cols(x, 0, SEMANTIC_DIMS)?;
        let ac_in = tape.slice_cols(x, SEMANTIC_DIMS, FEAT_DIMS)?;
        let (m, a) = self.norm_mul_add::<S>(0, SEMANTIC_DIMS);
        let sem_std = tape.col_affine(sem_in, m, a)?;
        let (m, a) = self.norm_mul_add::<S>(SEMANTIC_DIMS, FEAT_DIMS);
        let ac_std = tape.col_affine(ac_in, m, a)?;

        let z_s = self.sem.encode(&mut tape, sem_std)?;
        let (_, dig_s) = self.fsq.apply_on_tape(&mut tape, z_s)?;
        let z_a = self.ac.encode(&mut tape, ac_std)?;
        let (_, dig_a) = self.fsq.apply_on_tape(&mut tape, z_a)?;

        let ls = self.fsq.levels();
        let levels = [ls[0] as u8, ls[1] as u8, ls[2] as u8, ls[3] as u8];
        Ok((
            TokenStream {
                stream: StreamId::MusicSemantic,
                levels,
                frame_count: frames,
                codes: self.fsq.digits_value_to_codes(tape.value(dig_s)),
            },
            TokenStream {
                stream: StreamId::MusicAcoustic,
                levels,
                frame_count: frames,
                codes: self.fsq.digits_value_to_codes(tape.value(dig_a)),
            },
        ))
    }

    /// Decode to RAW feature space (de-standardized), trimmed.
    pub fn decode_tokens<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        sem: &TokenStream,
        ac: &TokenStream,
    ) -> Result<Tensor<S>> {
        if sem.stream != StreamId::MusicSemantic || ac.stream != StreamId::MusicAcoustic {
            return Err(CoreError::Invalid(format!(
                "stream mismatch: got {} + {}",
                sem.stream.tag(),
                ac.stream.tag()
            )));
        }
        if sem.frame_count != ac.frame_count || sem.codes.len() != ac.codes.len() {
            return Err(CoreError::Invalid(
                "semantic/acoustic token streams disagree on length".into(),
            ));
        }
        let mut tape = Tape::new(store);
        let zq_s = tape.constant(self.fsq.codes_to_rows(&sem.codes));
        let zq_a = tape.constant(self.fsq.codes_to_rows(&ac.codes));
        let rec_s = self.sem.decode(&mut tape, zq_s)?;
        let rec_a = self.ac.decode(&mut tape, zq_a)?;
        let (m, a) = self.denorm_mul_add::<S>(0, SEMANTIC_DIMS);
        let raw_s = tape.col_affine(rec_s, m, a)?;
        let (m, a) = self.denorm_mul_add::<S>(SEMANTIC_DIMS, FEAT_DIMS);
        let raw_a = tape.col_affine(rec_a, m, a)?;
        let joined = tape.concat_cols(raw_s, raw_a)?;
        trim_rows(tape.value(joined), sem.frame_count as usize)
    }

    /// Mean absolute reconstruction error in RAW feature units, split as
    /// (semantic dims, acoustic dims, all dims).
    pub fn recon_mae<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        feats: &Tensor<S>,
    ) -> Result<(f64, f64, f64)> {
        let (sem, ac) = self.encode_clip(store, feats)?;
        let rec = self.decode_tokens(store, &sem, &ac)?;
        crate::metrics::mae_report(&rec, feats)
    }
}

/// Ablation arm: all 35 feature dims through ONE coder and ONE token
/// stream, i.e. the split into semantic/acoustic streams removed. Per-stream
/// capacity matches [`MusicTokenizer`], so the comparison isolates the
/// decomposition itself.
pub struct UndecomposedMusicTokenizer {
    full: StreamCoder,
    fsq: Fsq,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl UndecomposedMusicTokenizer {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        channels: usize,
        stats: &FeatureStats,
    ) -> UndecomposedMusicTokenizer {
        let fsq = Fsq::standard();
        let d = fsq.dims();
        let tok = UndecomposedMusicTokenizer {
            full: StreamCoder::init(store, rng, "full", FEAT_DIMS, channels, d),
            fsq,
            mean: stats.mean.clone(),
            std: stats.std.clone(),
        };
        store.add_buffer(
            "norm.mean",
            Tensor::from_vec(&[1, FEAT_DIMS], stats.mean.iter().map(|&v| S::of(v)).collect())
                .expect("norm mean"),
        );
        store.add_buffer(
            "norm.std",
            Tensor::from_vec(&[1, FEAT_DIMS], stats.std.iter().map(|&v| S::of(v)).collect())
                .expect("norm std"),
        );
        tok
    }

    /// Rebuild the coder view over a store loaded from a checkpoint,
    /// recovering the normalization buffers from it.
    pub fn from_store<S: Scalar>(
        store: &ParamStore<S>,
        channels: usize,
    ) -> Result<UndecomposedMusicTokenizer> {
        let mean_id = store.id_of("norm.mean").ok_or_else(|| {
            CoreError::Untrained("undecomposed tokenizer store lacks norm.mean".into())
        })?;
        let std_id = store.id_of("norm.std").ok_or_else(|| {
            CoreError::Untrained("undecomposed tokenizer store lacks norm.std".into())
        })?;
        let stats = FeatureStats {
            mean: store.get(mean_id).data().iter().map(|v| v.as_f64()).collect(),
            std: store.get(std_id).data().iter().map(|v| v.as_f64()).collect(),
        };
        let mut scratch = ParamStore::<S>::new();
        let mut r = stream(0, "rebuild", 0);
        let built = UndecomposedMusicTokenizer::init(&mut scratch, &mut r, channels, &stats);
        for (_, name, _) in scratch.iter() {
            if store.id_of(name).is_none() {
                return Err(CoreError::Untrained(format!(
                    "undecomposed tokenizer store lacks `{name}`"
                )));
            }
        }
        if store.len() != scratch.len() {
            return Err(CoreError::Untrained(format!(
                "undecomposed tokenizer store has {} entries, expected {}",
                store.len(),
                scratch.len()
            )));
        }
        Ok(built)
    }

    fn standardize<S: Scalar>(&self, tape: &mut Tape<S>, x: ValueId) -> Result<ValueId> {
        let mul: Vec<S> = self.std.iter().map(|&s| S::of(1.0 / s)).collect();
        let add: Vec<S> = (0..FEAT_DIMS)
            .map(|i| S::of(-self.mean[i] / self.std[i]))
            .collect();
        tape.col_affine(x, mul, add)
    }

    pub fn clip_loss<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        feats_padded: &Tensor<S>,
    ) -> Result<ValueId> {
        let x = tape.constant(feats_padded.clone());
        let std = self.standardize(tape, x)?;
        let z = self.full.encode(tape, std)?;
        let (zq, _) = self.fsq.apply_on_tape(tape, z)?;
        let rec = self.full.decode(tape, zq)?;
        tape.mse(rec, std)
    }

    /// Mean absolute reconstruction error in RAW feature units, split as
    /// (semantic dims, acoustic dims, all dims).
    pub fn recon_mae<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        feats: &Tensor<S>,
    ) -> Result<(f64, f64, f64)> {
        let frames = feats.rows();
        let padded = pad_rows_to_multiple(feats, DOWNSAMPLE);
        let mut tape = Tape::new(store);
        let x = tape.constant(padded);
        let std = self.standardize(&mut tape, x)?;
        let z = self.full.encode(&mut tape, std)?;
        let (_, dig) = self.fsq.apply_on_tape(&mut tape, z)?;
        let codes = self.fsq.digits_value_to_codes(tape.value(dig));
        let zq = tape.constant(self.fsq.codes_to_rows(&codes));
        let rec_std = self.full.decode(&mut tape, zq)?;
        let mul: Vec<S> = self.std.iter().map(|&s| S::of(s)).collect();
        let add: Vec<S> = self.mean.iter().map(|&m| S::of(m)).collect();
        let raw = tape.col_affine(rec_std, mul, add)?;
        let rec = trim_rows(tape.value(raw), frames)?;
        crate::metrics::mae_report(&rec, feats)
    }
}

/// Same loop as [`train_music`] over the single-stream ablation model.
pub fn train_music_undecomposed<S: Scalar>(
    clips: &[Tensor<S>],
    cfg: &Stage1Config,
) -> Result<(ParamStore<S>, UndecomposedMusicTokenizer, LossCurve)> {
    if clips.len() < 2 * cfg.batch {
        return Err(CoreError::Invalid(format!(
            "{} clips cannot support batch size {} (need at least 2x)",
            clips.len(),
            cfg.batch
        )));
    }
    let stats = FeatureStats::compute(&clips.iter().collect::<Vec<_>>())?;
    let mut init_rng = stream(cfg.seed, "stage1-music-init", 0);
    let mut store = ParamStore::<S>::new();
    let tok = UndecomposedMusicTokenizer::init(&mut store, &mut init_rng, cfg.channels, &stats);

    let padded: Vec<Tensor<S>> = clips.iter().map(|c| pad_rows_to_multiple(c, DOWNSAMPLE)).collect();

    let mut opt = Adam::new(adam_for(cfg), &store);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut shuffle_rng = stream(cfg.seed, "stage1-music-shuffle", 0);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(clips.len(), cfg.batch, &mut shuffle_rng);
        let n_batches = batches.len();
        for batch in batches {
            epoch_loss += batched_step(&mut store, &mut opt, cfg.clip_norm, &batch, |st, ci| {
                let mut tape = Tape::new(st);
                let loss = tok.clip_loss(&mut tape, &padded[ci])?;
                let l = tape.value(loss).item().as_f64();
                let g = tape.backward(loss)?;
                Ok((l, g))
            })?;
        }
        curve.push((epoch, epoch_loss / n_batches as f64));
    }
    Ok((store, tok, curve))
}

/// Overwrite a decoder output bias so each 6-wide rotation block starts at
/// the identity rotation's coordinates; the first `lead` columns (root
/// translation) stay zero.
fn bias_to_identity_rot<S: Scalar>(
    store: &mut ParamStore<S>,
    bias: crate::autodiff::ParamId,
    lead: usize,
) {
    let t = store.get_mut(bias);
    let cols = t.cols();
    debug_assert_eq!((cols - lead) % 6, 0);
    let data = t.data_mut();
    let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut j = lead;
    while j + 6 <= cols {
        for (k, v) in ident.iter().enumerate() {
            data[j + k] = S::of(*v);
        }
        j += 6;
    }
}

fn trim_rows<S: Scalar>(x: &Tensor<S>, rows: usize) -> Result<Tensor<S>> {
    if rows > x.rows() {
        return Err(CoreError::Invalid(format!(
            "cannot trim to {} rows, tensor has {}",
            rows,
            x.rows()
        )));
    }
    let c = x.cols();
    Tensor::from_vec(&[rows, c], x.data()[..rows * c].to_vec())
}

fn mean_sq_diff<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    let n = a.numel() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

/// Per-dimension corpus statistics for feature standardization.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Pooled over all frames of all clips; std floored at 1e-6 so constant
    /// dimensions stay finite.
    pub fn compute<S: Scalar>(clips: &[&Tensor<S>]) -> Result<FeatureStats> {
        let c = clips
            .first()
            .ok_or_else(|| CoreError::Invalid("no clips for feature stats".into()))?
            .cols();
        let mut sum = vec![0.0f64; c];
        let mut sumsq = vec![0.0f64; c];
        let mut count = 0usize;
        for clip in clips {
            if clip.cols() != c {
                return Err(CoreError::Shape {
                    op: "feature_stats",
                    detail: format!("mixed widths {c} vs {}", clip.cols()),
                });
            }
            for r in 0..clip.rows() {
                for (j, v) in clip.row(r).iter().enumerate() {
                    let x = v.as_f64();
                    sum[j] += x;
                    sumsq[j] += x * x;
                }
            }
            count += clip.rows();
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sumsq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / n - m * m).max(0.0)).sqrt().max(1e-6))
            .collect();
        Ok(FeatureStats { mean, std })
    }
}

// ------------------------------------------------------------- training ----

#[derive(Debug, Clone, Copy)]
pub struct Stage1Config {
    pub channels: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            channels: 256,
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.99,
            epochs: 200,
            batch: 4,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Per-epoch mean training loss, for the loss-curve artifact.
pub type LossCurve = Vec<(usize, f64)>;

fn adam_for(cfg: &Stage1Config) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
    }
}

/// Train the dance tokenizer from scratch on pose clips (all the same fps).
pub fn train_dance<S: Scalar>(
    clips: &[Tensor<S>],
    fps: u32,
    cfg: &Stage1Config,
) -> Result<(ParamStore<S>, DanceTokenizer, LossCurve)> {
    if clips.len() < 2 * cfg.batch {
        return Err(CoreError::Invalid(format!(
            "{} clips cannot support batch size {} (need at least 2x)",
            clips.len(),
            cfg.batch
        )));
    }
    let skel = Skeleton::<S>::smpl24();
    let fps_s = S::of(fps as f64);
    let mut init_rng = stream(cfg.seed, "stage1-dance-init", 0);
    let mut store = ParamStore::<S>::new();
    let tok = DanceTokenizer::init(&mut store, &mut init_rng, cfg.channels);

    // padded clips + loss references are fixed across epochs
    let padded: Vec<Tensor<S>> = clips.iter().map(|c| pad_rows_to_multiple(c, DOWNSAMPLE)).collect();
    let refs: Vec<DanceLossRefs<S>> = padded
        .iter()
        .map(|p| DanceLossRefs::new(p, &skel, fps_s))
        .collect::<Result<_>>()?;

    let mut opt = Adam::new(adam_for(cfg), &store);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut shuffle_rng = stream(cfg.seed, "stage1-dance-shuffle", 0);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(clips.len(), cfg.batch, &mut shuffle_rng);
        let n_batches = batches.len();
        for batch in batches {
            epoch_loss += batched_step(&mut store, &mut opt, cfg.clip_norm, &batch, |st, ci| {
                let mut tape = Tape::new(st);
                let loss = tok.clip_loss(&mut tape, &padded[ci], &refs[ci], &skel, fps_s)?;
                let l = tape.value(loss).item().as_f64();
                let g = tape.backward(loss)?;
                Ok((l, g))
            })?;
        }
        curve.push((epoch, epoch_loss / n_batches as f64));
    }
    Ok((store, tok, curve))
}

/// Train the music tokenizer from scratch on feature clips.
pub fn train_music<S: Scalar>(
    clips: &[Tensor<S>],
    cfg: &Stage1Config,
) -> Result<(ParamStore<S>, MusicTokenizer, LossCurve)> {
    if clips.len() < 2 * cfg.batch {
        return Err(CoreError::Invalid(format!(
            "{} clips cannot support batch size {} (need at least 2x)",
            clips.len(),
            cfg.batch
        )));
    }
    let stats = FeatureStats::compute(&clips.iter().collect::<Vec<_>>())?;
    let mut init_rng = stream(cfg.seed, "stage1-music-init", 0);
    let mut store = ParamStore::<S>::new();
    let tok = MusicTokenizer::init(&mut store, &mut init_rng, cfg.channels, &stats);

    let padded: Vec<Tensor<S>> = clips.iter().map(|c| pad_rows_to_multiple(c, DOWNSAMPLE)).collect();

    let mut opt = Adam::new(adam_for(cfg), &store);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut shuffle_rng = stream(cfg.seed, "stage1-music-shuffle", 0);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(clips.len(), cfg.batch, &mut shuffle_rng);
        let n_batches = batches.len();
        for batch in batches {
            epoch_loss += batched_step(&mut store, &mut opt, cfg.clip_norm, &batch, |st, ci| {
                let mut tape = Tape::new(st);
                let loss = tok.clip_loss(&mut tape, &padded[ci])?;
                let l = tape.value(loss).item().as_f64();
                let g = tape.backward(loss)?;
                Ok((l, g))
            })?;
        }
        curve.push((epoch, epoch_loss / n_batches as f64));
    }
    Ok((store, tok, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_repeats_last_row() {
        let x = Tensor::<f64>::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = pad_rows_to_multiple(&x, 8);
        assert_eq!(p.shape(), &[8, 2]);
        for r in 3..8 {
            assert_eq!(p.row(r), &[5.0, 6.0]);
        }
        // already a multiple: untouched
        let y = Tensor::<f64>::zeros(&[8, 2]);
        assert_eq!(pad_rows_to_multiple(&y, 8).shape(), &[8, 2]);
    }

    #[test]
    fn coder_shapes_round_trip() {
        let mut store = ParamStore::<f64>::new();
        let mut r = stream(3, "coder-shapes", 0);
        let coder = StreamCoder::init(&mut store, &mut r, "t", 10, 8, 4);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(&[24, 10]));
        let z = coder.encode(&mut tape, x).unwrap();
        assert_eq!(tape.value(z).shape(), &[3, 4]);
        let y = coder.decode(&mut tape, z).unwrap();
        assert_eq!(tape.value(y).shape(), &[24, 10]);
    }

    #[test]
    fn encoder_rejects_unpadded_length() {
        let mut store = ParamStore::<f64>::new();
        let mut r = stream(3, "coder-shapes", 1);
        let coder = StreamCoder::init(&mut store, &mut r, "t", 4, 8, 4);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(&[10, 4]));
        assert!(coder.encode(&mut tape, x).is_err());
    }

    #[test]
    fn token_count_is_frames_over_eight() {
        // 240 frames -> 30 codes per stream
        let mut store = ParamStore::<f64>::new();
        let mut r = stream(5, "tok-count", 0);
        let tok = DanceTokenizer::init(&mut store, &mut r, 8);
        let pose = Tensor::from_vec(&[240, POSE_DIMS], vec![0.1; 240 * POSE_DIMS]).unwrap();
        let (up, lo) = tok.encode_clip(&store, &pose).unwrap();
        assert_eq!(up.codes.len(), 30);
        assert_eq!(lo.codes.len(), 30);
        assert_eq!(up.frame_count, 240);
        // unpadded 13 frames -> 2 codes, trims back to 13
        let pose13 = Tensor::from_vec(&[13, POSE_DIMS], vec![0.1; 13 * POSE_DIMS]).unwrap();
        let (up13, lo13) = tok.encode_clip(&store, &pose13).unwrap();
        assert_eq!(up13.codes.len(), 2);
        let dec = tok.decode_tokens(&store, &up13, &lo13).unwrap();
        assert_eq!(dec.shape(), &[13, POSE_DIMS]);
    }

    #[test]
    fn feature_stats_standardize() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 10.0, 3.0, 10.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 2], vec![5.0, 10.0, 7.0, 10.0]).unwrap();
        let s = FeatureStats::compute(&[&a, &b]).unwrap();
        assert_eq!(s.mean[0], 4.0);
        assert!((s.std[0] - (5.0f64).sqrt()).abs() < 1e-12); // var of {1,3,5,7} = 5
        assert_eq!(s.mean[1], 10.0);
        assert_eq!(s.std[1], 1e-6); // constant dim hits the floor
    }
}
