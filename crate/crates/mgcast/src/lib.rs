//! Data pipeline, training loop, checkpoints and command-line tooling for
//! the V-cycle MgNet forecaster in [`mgcast_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod records;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, TrainConfig};
pub use data::{RawSeries, Split, SplitSpec, Standardizer, WindowedDataset};
pub use error::{Error, Result};
pub use train::{EvalMetrics, PreparedData};
