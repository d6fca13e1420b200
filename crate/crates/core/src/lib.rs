//! Identification of locally linear skid-steer yaw-rate models, Gaussian
//! mixture clustering of the resulting model cloud, and an Interacting
//! Multiple Model (IMM) Kalman filter bank built from the cluster means.
//!
//! The pipeline, bottom-up:
//!
//! 1. [`trajectory`] loads `(ω_k, u_k, ω_{k+1})` transitions from CSV logs and
//!    slices them into sliding windows.
//! 2. [`sysid`] fits one `x_{k+1} = a·x_k + b1·φ̇_l + b2·φ̇_r` model per window
//!    by least squares, producing a cloud of `[a, b1, b2]` points.
//! 3. [`gmm`] clusters that cloud with a diagonal-covariance mixture fit by
//!    expectation-maximization; component means become bank models.
//! 4. [`filter`] and [`imm`] run a scalar Kalman filter per model, mixed and
//!    weighted by the IMM recursion.
//! 5. [`consistency`] scores the innovations with NIS against chi-squared
//!    bounds.
//!
//! [`synth`] generates regime-switching trajectories for closed-loop tests.
//!
//! Data-parallel loops (window fits, E-step sweeps, independent runs) go
//! through [`Execution`]; the `parallel` feature (on by default) backs them
//! with rayon, and every reduction is chunked in a fixed order so both
//! strategies produce bit-identical results.

pub mod consistency;
mod error;
mod exec;
pub mod filter;
pub mod gmm;
pub mod imm;
pub mod synth;
pub mod sysid;
pub mod trajectory;

pub use error::{Error, Result};
pub use exec::Execution;
