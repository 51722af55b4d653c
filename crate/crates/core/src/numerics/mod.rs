//! Differentiable computation substrate: tensors, the tape, LSTM cells and
//! finite-difference gradient checking.

pub mod gradcheck;
pub mod lstm;
pub mod ops;
#[cfg(test)]
pub(crate) mod reference;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use lstm::{lstm_step, lstm_step_projected, LstmParams, LstmState};
pub use ops::{cosine_similarity, log_sigmoid, masked_log_softmax, sigmoid, softmax};
pub use tape::{Tape, Var};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};
