//! Dense tensors, a gradient tape, Adam, and finite-difference checking.

mod adam;
mod dd;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use adam::{adam_step, step_decay_lr, AdamState};
pub use dd::{DoubleDouble, Scalar};
pub use gradcheck::{finite_difference_check, group_of, probe_entries, relative_error, GradCheckReport, ParamCheck};
pub use param::{GradBuffer, ParamId, ParamStore, Parameter};
pub use tape::{dropout, Tape, Var};
pub use tensor::{elementwise, matmul, relu, sigmoid, softmax_rows, Elementwise, Tensor};
