//! Lindblad simulator for magnetically induced coherent population trapping
//! in a single trapped Ba+ ion.
//!
//! The library builds the 18-level optical Bloch equations of the ion's
//! double-lambda scheme, solves for steady states and the Liouvillian
//! spectrum, derives fluorescence-versus-field curves and their
//! derivatives, evaluates shot-noise-limited magnetometric sensitivity, and
//! simulates a three-axis coil nulling procedure on the fluorescence dip.

// link the BLAS backing ndarray's complex matrix products
use blas_src as _;

pub mod atomic;
pub mod config;
pub mod error;
pub mod linalg;
pub mod liouville;
pub mod model;
pub mod nulling;
pub mod observe;
pub mod solve;
pub mod toymodel;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use model::CompiledModel;
