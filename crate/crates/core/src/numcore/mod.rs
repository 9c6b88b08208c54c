//! Dense double-precision tensors, a reverse-mode tape, and the optimizer
//! pieces the trainer needs.

pub mod checkpoint;
pub mod dropout;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Container;
pub use dropout::{dropout, Mode};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use optim::{adam_step, clip_global_norm, AdamState};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{CustomOp, Tape, Var};
pub use tensor::Tensor;
