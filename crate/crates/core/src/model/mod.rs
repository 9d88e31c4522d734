//! V-cycle MgNet forecasters: configuration, parameters and forward passes.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{ModelConfig, OpChoice, Variant};
pub use forward::{
    down_phase, forward, forward_batch, head, prolongate, record_forward, record_forward_batch,
    restrict, run, smooth_step, up_phase, DownState, RestrictOps,
};
pub use params::{
    param_count, Gradients, Layout, ModelParams, OpKind, Operator, OperatorSpec, ParamId, Role,
};
