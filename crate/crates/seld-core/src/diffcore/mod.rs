//! Minimal reverse-mode differentiable tensor engine.
//!
//! Provides exactly the primitives the network needs: batched matmul, 3x3
//! same-padding convolution, batch/layer normalization, activations, pooling,
//! per-channel mixing, concatenation and reductions — each with a hand-derived
//! backward step verified by the finite-difference harness in [`gradcheck`].

mod array;
mod checkpoint;
mod element;
mod gradcheck;
mod ops;
mod params;
mod tape;

pub use array::{numel_of, strides_of, Array};
pub use checkpoint::{Checkpoint, CkptValue, CKPT_MAGIC, CKPT_VERSION};
pub use element::Element;
pub use gradcheck::{grad_check, grad_check_multi, rel_err, DEFAULT_H};
pub use params::{InitSpec, ParamStore, Parameter};
pub use tape::{Tape, TensorId};
