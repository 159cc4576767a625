//! Dense f64 tensor engine with tape-based reverse-mode autodiff.
//!
//! Everything in this workspace computes in 64-bit floats with row-major
//! layout (NCHW for image tensors). Forward passes are recorded on a
//! [`Tape`] that is rebuilt per pass; [`Tape::backward`] walks it once in
//! reverse and yields one gradient per `requires_grad` leaf.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod threads;

pub use gradcheck::gradient_check;
pub use params::ParamSet;
pub use rng::{Rng, Seed};
pub use tape::{Graph, NodeId, Tape};
pub use tensor::{Tensor, TensorError};
