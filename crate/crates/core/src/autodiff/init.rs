//! Layer parameter bundles. A bundle owns [`ParamId`]s only — the scalar type
//! lives in the store — so model structs stay plain data and one architecture
//! description can be instantiated at f32 or f64.
//!
//! Weights draw from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start
//! at zero. `Linear::init_small` tightens the bound to 1/fan_in for heads
//! whose output should start near zero (for example gating projections that
//! must begin in the linear region of the sigmoid).

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;

use super::ops::ValueId;
use super::tape::{ParamId, ParamStore, Tape};
use super::tensor::Tensor;

pub fn uniform_tensor<S: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::of((2.0 * rng.gen::<f64>() - 1.0) * bound))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/data mismatch in init")
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Linear {
        Self::init_bound(store, rng, name, din, dout, bias, 1.0 / (din as f64).sqrt())
    }

    /// Bound 1/fan_in instead of 1/sqrt(fan_in).
    pub fn init_small<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
    ) -> Linear {
        Self::init_bound(store, rng, name, din, dout, bias, 1.0 / din as f64)
    }

    fn init_bound<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        bound: f64,
    ) -> Linear {
        let w = store.add(&format!("{name}.w"), uniform_tensor(rng, &[din, dout], bound));
        let b = bias.then(|| store.add(&format!("{name}.b"), Tensor::zeros(&[1, dout])));
        Linear { w, b, din, dout }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: ValueId) -> Result<ValueId> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let bv = tape.param(b);
                tape.add_row(y, bv)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv1d {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Conv1d {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let w = store.add(&format!("{name}.w"), uniform_tensor(rng, &[k, cin, cout], bound));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[1, cout]));
        Conv1d { w, b, stride, pad, cin, cout, k }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: ValueId) -> Result<ValueId> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv1d(x, w, b, self.stride, self.pad)
    }
}

/// Transposed 1-D convolution; weight layout `[cin, k, cout]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvT1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvT1d {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> ConvT1d {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        let w = store.add(&format!("{name}.w"), uniform_tensor(rng, &[cin, k, cout], bound));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[1, cout]));
        ConvT1d { w, b, stride, pad, cin, cout, k }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: ValueId) -> Result<ValueId> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv1d_transpose(x, w, b, self.stride, self.pad)
    }
}

/// Depthwise causal 1-D convolution; weight layout `[k, channels]`.
#[derive(Clone, Copy, Debug)]
pub struct DwConvCausal {
    pub w: ParamId,
    pub b: ParamId,
    pub channels: usize,
    pub k: usize,
}

impl DwConvCausal {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        k: usize,
    ) -> DwConvCausal {
        let bound = 1.0 / (k as f64).sqrt();
        let w = store.add(&format!("{name}.w"), uniform_tensor(rng, &[k, channels], bound));
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[1, channels]));
        DwConvCausal { w, b, channels, k }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: ValueId) -> Result<ValueId> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.dwconv_causal(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Embedding {
        let bound = 1.0 / (dim as f64).sqrt();
        let table = store.add(&format!("{name}.table"), uniform_tensor(rng, &[vocab, dim], bound));
        Embedding { table, vocab, dim }
    }

    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, ids: &[usize]) -> Result<ValueId> {
        let t = tape.param(self.table);
        tape.embedding(t, ids)
    }
}
