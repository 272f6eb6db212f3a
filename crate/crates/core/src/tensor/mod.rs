//! Dense tensors, reverse-mode differentiation and the Adam optimiser.

mod adam;
mod dense;
mod tape;

pub use adam::Adam;
pub use dense::Tensor;
pub use tape::{masked_softmax, BatchStats, Gradients, Tape, Var, BN_EPS, LOG_CLAMP};
