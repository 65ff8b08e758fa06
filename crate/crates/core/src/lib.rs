//! Framework-free kernels for BEV road-surface elevation reconstruction:
//! depth-aware view transformation with precomputed look-up tables,
//! shuttle-shaped elevation discretization, group-wise correlation stereo
//! matching with spatial and confidence attention, plus the synthetic-scene
//! generator and file formats that let the pipelines run end to end.

pub mod config;
pub mod discretize;
pub mod error;
pub mod geometry;
pub mod io;
pub mod mono;
pub mod pipeline;
pub mod stereo;
pub mod supervision;
pub mod synthetic;
pub mod tensor;
pub mod viewtrans;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use tensor::DenseTensor;
