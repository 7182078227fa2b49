//! Define-by-run reverse-mode tape. A forward pass eagerly evaluates each
//! primitive, checks the result for non-finite values, and records the node;
//! `backward` walks the record once in reverse. Parameters live outside the
//! tape in a [`ParamStore`] so one store can feed many tapes (the batch map
//! builds one tape per clip and reduces gradients in a fixed order).

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::motion::Skeleton;
use crate::scalar::Scalar;

use super::ops::{Op, ValueId};
use super::tensor::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

struct ParamEntry<S> {
    name: String,
    value: Tensor<S>,
    trainable: bool,
}

/// Named parameter registry. Insertion order is the canonical order for
/// checkpoints, gradient reduction, and optimizer state.
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        self.insert(name, value, true)
    }

    /// Non-trainable entry (normalization statistics and similar): saved in
    /// checkpoints, never touched by the optimizer.
    pub fn add_buffer(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        self.insert(name, value, false)
    }

    fn insert(&mut self, name: &str, value: Tensor<S>, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let id = self.entries.len();
        self.index.insert(name.to_string(), id);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &e.value))
    }

    /// Total element count over trainable entries.
    pub fn trainable_numel(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }
}

/// Per-parameter gradients, indexed by [`ParamId`], in store order.
pub struct Gradients<S> {
    slots: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            slots: (0..n_params).map(|_| None).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.slots[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Tensor<S>) {
        self.slots[id.0] = Some(g);
    }

    /// Elementwise accumulate; slot order is fixed by the store, so reducing a
    /// batch of these sequentially is deterministic regardless of how the
    /// per-clip gradients were produced.
    pub fn accumulate(&mut self, other: &Gradients<S>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
            }
        }
    }

    pub fn scale(&mut self, c: S) {
        for slot in self.slots.iter_mut().flatten() {
            for v in slot.data_mut().iter_mut() {
                *v = *v * c;
            }
        }
    }

    /// Global L2 norm over all present slots, accumulated at f64.
    pub fn global_norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|t| t.sq_norm_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(S::of(max_norm / norm));
        }
        norm
    }

    pub fn first_nonfinite(&self) -> Option<usize> {
        self.slots
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.as_ref().and_then(|t| t.first_nonfinite().map(|_| i)))
    }
}

enum Node<S: Scalar> {
    Constant,
    Param(ParamId),
    Op(Op<S>),
}

/// One forward recording. Borrow of the parameter store is immutable, so many
/// tapes can be built in parallel from one store.
pub struct Tape<'p, S: Scalar> {
    store: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    values: Vec<Tensor<S>>,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(store: &'p ParamStore<S>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.values[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bind a constant (input data); not differentiated.
    pub fn constant(&mut self, t: Tensor<S>) -> ValueId {
        self.nodes.push(Node::Constant);
        self.values.push(t);
        self.values.len() - 1
    }

    /// Bind a parameter leaf; its gradient lands in the [`Gradients`] slot.
    pub fn param(&mut self, id: ParamId) -> ValueId {
        self.nodes.push(Node::Param(id));
        self.values.push(self.store.get(id).clone());
        self.values.len() - 1
    }

    fn push(&mut self, op: Op<S>) -> Result<ValueId> {
        for &input in &op.inputs() {
            debug_assert!(input < self.values.len(), "op input from a different tape");
        }
        let out = op.forward(&self.values)?;
        if let Some(idx) = out.first_nonfinite() {
            return Err(CoreError::NonFinite {
                op: op.name(),
                index: idx,
            });
        }
        self.nodes.push(Node::Op(op));
        self.values.push(out);
        Ok(self.values.len() - 1)
    }

    // ---- primitive builders ----

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::MatMul { a, b })
    }
    pub fn conv1d(&mut self, x: ValueId, w: ValueId, b: ValueId, stride: usize, pad: usize) -> Result<ValueId> {
        self.push(Op::Conv1d { x, w, b, stride, pad })
    }
    pub fn conv1d_transpose(&mut self, x: ValueId, w: ValueId, b: ValueId, stride: usize, pad: usize) -> Result<ValueId> {
        self.push(Op::ConvT1d { x, w, b, stride, pad })
    }
    pub fn dwconv_causal(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::DwConvCausal { x, w, b })
    }
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::Add { a, b })
    }
    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::Sub { a, b })
    }
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::Mul { a, b })
    }
    pub fn scale(&mut self, x: ValueId, c: S) -> Result<ValueId> {
        self.push(Op::Scale { x, c })
    }
    pub fn add_row(&mut self, x: ValueId, v: ValueId) -> Result<ValueId> {
        self.push(Op::AddRow { x, v })
    }
    pub fn mul_row(&mut self, x: ValueId, v: ValueId) -> Result<ValueId> {
        self.push(Op::MulRow { x, v })
    }
    pub fn col_affine(&mut self, x: ValueId, mul: Vec<S>, add: Vec<S>) -> Result<ValueId> {
        self.push(Op::ColAffine { x, mul, add })
    }
    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Sigmoid { x })
    }
    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Tanh { x })
    }
    pub fn silu(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Silu { x })
    }
    pub fn exp(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Exp { x })
    }
    pub fn softplus(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Softplus { x })
    }
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Softmax { x })
    }
    pub fn embedding(&mut self, table: ValueId, ids: &[usize]) -> Result<ValueId> {
        self.push(Op::Embedding { table, ids: ids.to_vec() })
    }
    pub fn cumsum(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::CumSum { x })
    }
    pub fn round_st(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::RoundSt { x })
    }
    pub fn reverse_time(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Reverse { x })
    }
    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::ConcatCols { a, b })
    }
    pub fn slice_cols(&mut self, x: ValueId, lo: usize, hi: usize) -> Result<ValueId> {
        self.push(Op::SliceCols { x, lo, hi })
    }
    pub fn time_diff(&mut self, x: ValueId, scale: S) -> Result<ValueId> {
        self.push(Op::TimeDiff { x, scale })
    }
    pub fn selective_scan(&mut self, u: ValueId, delta: ValueId, a: ValueId, b: ValueId, c: ValueId) -> Result<ValueId> {
        self.push(Op::SelectiveScan { u, delta, a, b, c })
    }
    pub fn rot6d_to_mats(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Rot6d { x })
    }
    pub fn forward_kinematics(&mut self, mats: ValueId, tau: ValueId, skel: Arc<Skeleton<S>>) -> Result<ValueId> {
        self.push(Op::FkChain { mats, tau, skel })
    }
    pub fn cross_entropy(&mut self, logits: ValueId, targets: &[usize]) -> Result<ValueId> {
        self.push(Op::CrossEntropy { logits, targets: targets.to_vec() })
    }
    pub fn mse(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::Mse { a, b })
    }
    pub fn l1(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.push(Op::L1 { a, b })
    }

    /// Reverse sweep from a scalar loss. Visits each node exactly once;
    /// gradients for a node are complete before the node itself is processed
    /// because consumers always come later in the record.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<S>> {
        if loss >= self.values.len() {
            return Err(CoreError::Invalid(format!(
                "backward target {} does not exist on this tape",
                loss
            )));
        }
        if self.values[loss].numel() != 1 {
            return Err(CoreError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss].shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(S::one()));

        let mut out = Gradients::empty(self.store.len());
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id] {
                Node::Constant => {}
                Node::Param(pid) => match out.slots_mut(pid.0) {
                    Some(existing) => existing.add_assign(&g),
                    None => out.set(*pid, g),
                },
                Node::Op(op) => op.backward(&self.values, id, &g, &mut grads),
            }
        }
        Ok(out)
    }
}

impl<S: Scalar> Gradients<S> {
    fn slots_mut(&mut self, i: usize) -> Option<&mut Tensor<S>> {
        self.slots[i].as_mut()
    }
}
