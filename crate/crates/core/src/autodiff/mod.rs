//! Minimal reverse-mode differentiation used by the learners and losses.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::gradient_check;
pub use tape::{Gradients, Tape, Var, KL_CLAMP};
pub(crate) use tape::softmax_in_place;
pub use tensor::Tensor;
