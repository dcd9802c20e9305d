//! Differentiable building blocks: tensors ops, a reverse-mode tape,
//! parameters, Adam and the learning-rate schedule.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod param;
pub mod recurrent;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::Mode;
pub use optim::{Adam, AdamConfig, AdamState, LrSchedule};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
