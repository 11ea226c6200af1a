//! Dense `f64` numerics: matrices, layer primitives with hand-written
//! backward passes, Adam, the learning-rate schedule, and the
//! finite-difference gradient oracle.

pub mod gradcheck;
pub mod layers;
mod matrix;
pub mod optim;
mod param;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use layers::{
    batchnorm1d, batchnorm1d_backward, matmul_bias, matmul_bias_backward, relu, relu_backward,
    row_maxpool, row_maxpool_backward, Mode, RunningStats,
};
pub use matrix::{dot, Matrix};
pub use optim::{adam_step, Adam, AdamHyper, AdamState, LrSchedule};
pub use param::{Param, ParamSet};
