//! Numerical core of the `mgcast` forecaster.
//!
//! Dense kernels, a recording tape with an exact reverse sweep, the three
//! V-cycle MgNet architectures, error metrics and the Adam optimizer. The
//! crate is `no_std` and only needs `alloc`; all I/O lives in the `mgcast`
//! crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod exec;
pub mod init;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tape;

pub use error::{Error, Result};
pub use init::{init_bias, init_matrix, InitScheme, InitSpec};
pub use linalg::{affine_apply, conv1d_apply, relu, ConvShape, Matrix, Vector};
pub use model::{
    forward, forward_batch, param_count, record_forward, record_forward_batch, Gradients, Layout,
    ModelConfig, ModelParams, OpChoice, ParamId, Variant,
};
pub use tape::Tape;

/// Reverse sweep of `tape` seeded with `dl_dy` at its recorded output.
pub fn backward(tape: &Tape<'_>, dl_dy: &Matrix) -> Result<Gradients> {
    tape.backward(dl_dy)
}
