//! Deterministic CPU tensor core: tensors, layer kernels with hand-written
//! backward passes, Adam, and finite-difference gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod ops;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tensor::{Scalar, Tensor};
