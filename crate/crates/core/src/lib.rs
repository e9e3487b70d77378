//! Next-day forecasting of a univariate daily series with small neural
//! networks, built from scratch: dense tensors, four layer kinds with
//! analytic backward passes, three optimizers, a windowed data pipeline
//! and a benchmark harness that sweeps a model zoo against each optimizer.

pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod optim;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
