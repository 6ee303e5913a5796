//! Deformable generalized Procrustes analysis.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod kernel_gpa;
pub mod kernels;
pub mod linalg;
pub mod registration;
pub mod scale;
pub mod synth;
pub mod warps;

pub use error::{Error, Result};
