//! Dense tensor kernels with reverse-mode differentiation.

pub mod gradcheck;
pub mod kernels;
mod param;
mod tape;

pub use param::{Param, ParamId, ParamKind, ParamSet};
pub use tape::{Gradients, OpKind, Tape, Var};
