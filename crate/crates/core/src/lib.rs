//! Mamba-enhanced UNet (MEUNet) and the multiple-contrast loss for
//! CBCT → synthetic-CT translation, on a small self-contained autograd core.

pub mod dataset;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod phantom;
pub mod real;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{GlfcError, Result};
pub use real::Real;
pub use tensor::Tensor;
