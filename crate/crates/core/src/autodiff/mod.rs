//! Reverse-mode automatic differentiation on dense row-major tensors.
//!
//! The design is a flat eager tape: every primitive evaluates immediately,
//! validates shapes, rejects non-finite outputs (naming the offending op),
//! and records itself. `Tape::backward` then replays the record once in
//! reverse. Structured kernels that would blow up the tape if expressed
//! pointwise — the selective state-space scan, rotation construction, and the
//! kinematic chain — are single primitives with hand-written adjoints.

pub mod adam;
pub mod checkpoint;
pub mod init;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use init::{Conv1d, ConvT1d, DwConvCausal, Embedding, Linear};
pub use ops::{Op, ValueId};
pub use tape::{Gradients, ParamId, ParamStore, Tape};
pub use tensor::Tensor;
