//! Finite scalar quantization.
//!
//! A latent row `z` in R^4 is squashed per channel to the open band
//! `(0, L-1)` by `f(z) = h*tanh(alpha*z) + h` with `h = (L-1)/2`, rounded to
//! an integer digit, and the digit vector is packed big-endian mixed-radix
//! into one code. Levels `[8, 5, 5, 5]` give 1000 codes. Gradients flow
//! through the rounding straight-through.
//!
//! `alpha` matters: with the plain `tanh(z)` bound the extreme digits are
//! unreachable after a round trip (for L = 8, digit 7 dequantizes to 1.0 and
//! `3.5*tanh(1.0) + 3.5 = 6.17` rounds back to 6, not 7). Construction
//! verifies digit-by-digit that `quantize(dequantize(g)) == g` and rejects
//! level counts where the fixed bound cannot separate the digits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Channel bound steepness; verified at construction to round-trip every
/// digit for every configured level count.
const ALPHA: f64 = 1.4;

/// The quantizer grid: per-channel level counts and the derived half-ranges.
#[derive(Debug, Clone)]
pub struct Fsq {
    levels: Vec<u16>,
    half: Vec<f64>,
}

impl Fsq {
    pub fn new(levels: &[u16]) -> Result<Fsq> {
        if levels.is_empty() {
            return Err(CoreError::Invalid("quantizer needs at least one channel".into()));
        }
        let mut size: u64 = 1;
        for &l in levels {
            if l < 2 {
                return Err(CoreError::Invalid(format!("level count {l} < 2")));
            }
            size *= l as u64;
        }
        if size > u16::MAX as u64 + 1 {
            return Err(CoreError::Invalid(format!(
                "codebook size {size} exceeds the 16-bit token range"
            )));
        }
        let fsq = Fsq {
            levels: levels.to_vec(),
            half: levels.iter().map(|&l| (l as f64 - 1.0) / 2.0).collect(),
        };
        // every digit of every channel must survive a quantize round trip
        for (ch, &l) in levels.iter().enumerate() {
            for g in 0..l {
                let z = fsq.dequantize_digit(ch, g);
                let back = fsq.quantize_digit(ch, z);
                if back != g {
                    return Err(CoreError::Invalid(format!(
                        "channel {ch}: digit {g} of {l} levels round-trips to {back}; \
                         level count too high for the tanh bound"
                    )));
                }
            }
        }
        Ok(fsq)
    }

    /// The grid used throughout the pipeline: 8*5*5*5 = 1000 codes over 4 channels.
    pub fn standard() -> Fsq {
        Fsq::new(&[8, 5, 5, 5]).expect("standard levels are valid")
    }

    pub fn dims(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[u16] {
        &self.levels
    }

    pub fn codebook_size(&self) -> usize {
        self.levels.iter().map(|&l| l as usize).product()
    }

    fn quantize_digit(&self, ch: usize, z: f64) -> u16 {
        let h = self.half[ch];
        let v = h * (ALPHA * z).tanh() + h;
        v.round() as u16
    }

    fn dequantize_digit(&self, ch: usize, g: u16) -> f64 {
        let h = self.half[ch];
        (g as f64 - h) / h
    }

    /// Big-endian mixed radix: the first channel is the most significant.
    pub fn pack(&self, digits: &[u16]) -> u16 {
        debug_assert_eq!(digits.len(), self.levels.len());
        let mut idx: u32 = 0;
        for (d, &l) in digits.iter().zip(&self.levels) {
            debug_assert!(*d < l);
            idx = idx * l as u32 + *d as u32;
        }
        idx as u16
    }

    pub fn unpack(&self, code: u16) -> Vec<u16> {
        let mut rest = code as u32;
        let mut out = vec![0u16; self.levels.len()];
        for (slot, &l) in out.iter_mut().zip(&self.levels).rev() {
            *slot = (rest % l as u32) as u16;
            rest /= l as u32;
        }
        debug_assert_eq!(rest, 0);
        out
    }

    /// Quantize each latent row to a code, off-tape.
    pub fn quantize_rows<S: Scalar>(&self, z: &Tensor<S>) -> Result<Vec<u16>> {
        if z.cols() != self.dims() {
            return Err(CoreError::Shape {
                op: "fsq_quantize",
                detail: format!("latent has {} channels, quantizer {}", z.cols(), self.dims()),
            });
        }
        let mut out = Vec::with_capacity(z.rows());
        for r in 0..z.rows() {
            let row = z.row(r);
            let digits: Vec<u16> = row
                .iter()
                .enumerate()
                .map(|(ch, &v)| self.quantize_digit(ch, v.as_f64()))
                .collect();
            out.push(self.pack(&digits));
        }
        Ok(out)
    }

    /// Centered dequantized latent for one code, each channel in [-1, 1].
    pub fn dequantize_code(&self, code: u16) -> Vec<f64> {
        self.unpack(code)
            .iter()
            .enumerate()
            .map(|(ch, &g)| self.dequantize_digit(ch, g))
            .collect()
    }

    /// Dequantize a token sequence into decoder input rows `[T, dims]`.
    pub fn codes_to_rows<S: Scalar>(&self, codes: &[u16]) -> Tensor<S> {
        let d = self.dims();
        let mut data = Vec::with_capacity(codes.len() * d);
        for &c in codes {
            data.extend(self.dequantize_code(c).into_iter().map(S::of));
        }
        Tensor::from_vec(&[codes.len(), d], data).expect("code rows")
    }

    /// Record bound + round + center on the tape. Returns the centered
    /// straight-through output (each channel in [-1, 1], gradients pass the
    /// rounding unchanged) and the id of the raw digit rows, from which the
    /// discrete codes can be read without re-running anything.
    pub fn apply_on_tape<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        z: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let alphas = vec![S::of(ALPHA); self.dims()];
        let zeros = vec![S::zero(); self.dims()];
        let halves: Vec<S> = self.half.iter().map(|&h| S::of(h)).collect();
        let inv_halves: Vec<S> = self.half.iter().map(|&h| S::of(1.0 / h)).collect();
        let neg_ones = vec![-S::one(); self.dims()];

        let scaled = tape.col_affine(z, alphas, zeros)?;
        let squashed = tape.tanh(scaled)?;
        let banded = tape.col_affine(squashed, halves.clone(), halves)?;
        let digits = tape.round_st(banded)?;
        let centered = tape.col_affine(digits, inv_halves, neg_ones)?;
        Ok((centered, digits))
    }

    /// Pack the digit rows recorded by [`Fsq::apply_on_tape`] into codes.
    pub fn digits_value_to_codes<S: Scalar>(&self, digits: &Tensor<S>) -> Vec<u16> {
        (0..digits.rows())
            .map(|r| {
                let row: Vec<u16> = digits.row(r).iter().map(|v| v.as_f64() as u16).collect();
                self.pack(&row)
            })
            .collect()
    }
}

/// Token stream ids used in the token file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    DanceUpper = 0,
    DanceLower = 1,
    MusicSemantic = 2,
    MusicAcoustic = 3,
}

impl StreamId {
    pub fn from_u8(v: u8) -> Result<StreamId> {
        Ok(match v {
            0 => StreamId::DanceUpper,
            1 => StreamId::DanceLower,
            2 => StreamId::MusicSemantic,
            3 => StreamId::MusicAcoustic,
            _ => return Err(CoreError::Invalid(format!("unknown stream id {v}"))),
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            StreamId::DanceUpper => "dance-upper",
            StreamId::DanceLower => "dance-lower",
            StreamId::MusicSemantic => "music-semantic",
            StreamId::MusicAcoustic => "music-acoustic",
        }
    }
}

const TOKEN_MAGIC: &[u8; 4] = b"TDTK";

/// A stored token stream: which stream, the quantizer levels it was made
/// with, the clip's original frame count (pre-padding), and the codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub stream: StreamId,
    pub levels: [u8; 4],
    pub frame_count: u32,
    pub codes: Vec<u16>,
}

/// 16-byte header (magic, stream id, 4 level bytes, frame count, padding),
/// then the codes as little-endian u16.
pub fn save_tokens(path: &Path, ts: &TokenStream) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| {
        w.write_all(TOKEN_MAGIC)?;
        w.write_all(&[ts.stream as u8])?;
        w.write_all(&ts.levels)?;
        w.write_all(&ts.frame_count.to_le_bytes())?;
        w.write_all(&[0u8; 3])?;
        for &c in &ts.codes {
            w.write_all(&c.to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(|e| CoreError::io(path, e))
}

pub fn load_tokens(path: &Path) -> Result<TokenStream> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|e| CoreError::io(path, e))?;
    if &header[0..4] != TOKEN_MAGIC {
        return Err(CoreError::format(path, "bad magic, not a token file"));
    }
    let stream = StreamId::from_u8(header[4]).map_err(|_| {
        CoreError::format(path, format!("unknown stream id {}", header[4]))
    })?;
    let levels = [header[5], header[6], header[7], header[8]];
    let frame_count = u32::from_le_bytes([header[9], header[10], header[11], header[12]]);

    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| CoreError::io(path, e))?;
    if body.len() % 2 != 0 {
        return Err(CoreError::format(path, "token payload has odd byte length"));
    }
    let codes: Vec<u16> = body
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let expected = (frame_count as usize).div_ceil(8);
    if codes.len() != expected {
        return Err(CoreError::format(
            path,
            format!(
                "{} codes for {} frames; expected {} (one code per 8 frames, padded)",
                codes.len(),
                frame_count,
                expected
            ),
        ));
    }
    Ok(TokenStream {
        stream,
        levels,
        frame_count,
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    #[test]
    fn standard_grid_is_one_thousand_codes() {
        let f = Fsq::standard();
        assert_eq!(f.codebook_size(), 1000);
        assert_eq!(f.dims(), 4);
    }

    #[test]
    fn pack_corners() {
        let f = Fsq::standard();
        assert_eq!(f.pack(&[0, 0, 0, 0]), 0);
        assert_eq!(f.pack(&[7, 4, 4, 4]), 999);
        assert_eq!(f.unpack(999), vec![7, 4, 4, 4]);
        assert_eq!(f.unpack(0), vec![0, 0, 0, 0]);
    }

    #[test]
    fn pack_unpack_bijective_over_all_codes() {
        let f = Fsq::standard();
        let mut seen = vec![false; 1000];
        for code in 0..1000u16 {
            let d = f.unpack(code);
            for (ch, &g) in d.iter().enumerate() {
                assert!(g < f.levels()[ch]);
            }
            let back = f.pack(&d);
            assert_eq!(back, code);
            assert!(!seen[code as usize]);
            seen[code as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn quantize_center_and_extremes() {
        let f = Fsq::new(&[5]).unwrap();
        assert_eq!(f.quantize_digit(0, 0.0), 2);
        assert_eq!(f.quantize_digit(0, 100.0), 4);
        assert_eq!(f.quantize_digit(0, -100.0), 0);
    }

    #[test]
    fn quantize_dequantize_idempotent_for_every_code() {
        let f = Fsq::standard();
        for code in 0..1000u16 {
            let z = f.dequantize_code(code);
            let zt = Tensor::<f64>::from_vec(&[1, 4], z).unwrap();
            let back = f.quantize_rows(&zt).unwrap();
            assert_eq!(back, vec![code]);
        }
    }

    #[test]
    fn infeasible_level_counts_are_rejected() {
        for l in 2..=9u16 {
            assert!(Fsq::new(&[l]).is_ok(), "levels {l} should work");
        }
        assert!(Fsq::new(&[10]).is_err(), "10 levels cannot round-trip at this bound");
        assert!(Fsq::new(&[8, 5, 5, 5, 5, 5, 5]).is_err(), "codebook too large for u16");
        assert!(Fsq::new(&[1]).is_err());
        assert!(Fsq::new(&[]).is_err());
    }

    #[test]
    fn tape_path_matches_offline_quantization() {
        let f = Fsq::standard();
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let z = Tensor::from_vec(
            &[3, 4],
            vec![
                0.0, 0.0, 0.0, 0.0, //
                5.0, -5.0, 0.3, -0.3, //
                -0.9, 0.9, 2.0, -2.0,
            ],
        )
        .unwrap();
        let zi = tape.constant(z.clone());
        let (centered, digits) = f.apply_on_tape(&mut tape, zi).unwrap();
        let codes_tape = f.digits_value_to_codes(tape.value(digits));
        let codes_off = f.quantize_rows(&z).unwrap();
        assert_eq!(codes_tape, codes_off);

        // centered output equals the dequantization of those codes
        for (r, &code) in codes_tape.iter().enumerate() {
            let want = f.dequantize_code(code);
            for (a, b) in tape.value(centered).row(r).iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn token_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.tdtk");
        let ts = TokenStream {
            stream: StreamId::MusicAcoustic,
            levels: [8, 5, 5, 5],
            frame_count: 240,
            codes: (0..30).map(|i| (i * 31) % 1000).collect(),
        };
        save_tokens(&path, &ts).unwrap();
        let back = load_tokens(&path).unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn token_file_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tdtk");
        let ts = TokenStream {
            stream: StreamId::DanceUpper,
            levels: [8, 5, 5, 5],
            frame_count: 240, // 240 frames need 30 codes, not 29
            codes: vec![0; 29],
        };
        save_tokens(&path, &ts).unwrap();
        assert!(load_tokens(&path).is_err());
    }
}
