//! Small differentiable core: parameters with gradient accumulators, dense
//! primitives with hand-written backward passes, a gated recurrent cell,
//! first-order optimizers and a central-difference gradient checker.
//!
//! Gradients are explicit: callers zero the accumulators, run one or more
//! backward passes (which add into `Param::grad`), then take one optimizer step.

mod cell;
mod gradcheck;
mod ops;
mod optim;
mod param;

pub use cell::{CellCache, CellGrads, GatedCell, GatedCellState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{
    bernoulli_log, concat, dsigmoid_from_output, dtanh_from_output, hadamard, matvec_add,
    matvec_t_add, outer_add, sigmoid, tanh, Affine,
};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use param::{Param, ParamStore};
