//! Pipeline driver for the `gmm-imm` estimator.
//!
//! Stages, in order: `synth` (optional synthetic corpus), `fit` (windowed
//! model cloud + global model), `cluster` (one mixture per component count),
//! `estimate` (baseline KF and IMM banks per run) and `report` (NIS reports,
//! summary table, SVG plots). Each stage is a plain function over a
//! [`PipelineConfig`](config::PipelineConfig).

pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::PipelineConfig;
pub use error::CliError;
