//! Dense tensors, reverse-mode differentiation and the supporting plumbing
//! (parameter sets, seeded initialization, gradient checking).

mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck, DEFAULT_EPS};
pub use params::{glorot_uniform, Bound, Linear, Param, ParamKind, ParamSet};
pub use rng::{derive_seed, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub mod optim;
