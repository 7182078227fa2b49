//! Core library for a two-stage music-to-dance pipeline.
//!
//! Stage 1 trains finite-scalar-quantized (FSQ) autoencoders that turn motion
//! (split into upper/lower body halves) and music features (split into
//! semantic/acoustic streams) into discrete token sequences at 1/8 frame rate.
//! Stage 2 trains a Local-Global-Local stack of bidirectional selective
//! state-space blocks that maps music tokens plus a genre id to dance tokens in
//! a single non-autoregressive pass.
//!
//! Everything numeric is generic over the scalar type ([`Scalar`], implemented
//! for `f32`/`f64`). Training and inference run at f32 (see the aliases below);
//! test oracles instantiate the same code at f64, which is what makes
//! finite-difference and high-precision reference checks trustworthy.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode tape, primitive ops with hand-written adjoints,
//!   Adam, parameter store, checkpoint I/O.
//! - [`fsq`]: finite scalar quantization, token pack/unpack, token stream I/O.
//! - [`motion`]: 24-joint skeleton, 6D rotations, forward kinematics, the
//!   six-term dance reconstruction loss.
//! - [`audiofeat`]: WAV ingest, STFT/mel/MFCC/chroma/onset/beat features, the
//!   35-dim feature layout and its cache format.
//! - [`tokenizer`]: stage-1 FSQ autoencoders and their training loop.
//! - [`ssm`]: selective state-space machinery — ZOH discretization, sequential
//!   and work-efficient parallel scans, Mamba and BiMamba blocks.
//! - [`generator`]: the Local-Global-Local generator, stage-2 training,
//!   non-autoregressive inference, and the bypass-tokenization variant.
//! - [`metrics`]: kinetic/geometric motion features, FID, diversity, beat
//!   alignment, and feature-reconstruction MAE reports.

pub mod autodiff;
pub mod audiofeat;
pub mod error;
pub mod fsq;
pub mod generator;
pub mod gradcheck;
pub mod metrics;
pub mod motion;
pub mod rng;
pub mod scalar;
pub mod ssm;
pub mod tokenizer;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// Scalar type used by the production pipeline.
pub type Real = f32;

/// f32 instantiations (the production precision).
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape32<'a> = autodiff::Tape<'a, f32>;
pub type ParamStore32 = autodiff::ParamStore<f32>;

/// f64 instantiations (oracle / reference precision).
pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape64<'a> = autodiff::Tape<'a, f64>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
