//! Lippmann-Schwinger-Lanczos inversion for one-dimensional lossy media.
//!
//! The crate generates synthetic transfer-function data for a damped
//! first-order wave system, builds data-driven reduced-order models, lifts
//! their states into internal fields and recovers loss and reflectivity by a
//! linearized Lippmann-Schwinger solve.

pub mod adaptrom;
pub mod error;
pub mod fdembed;
pub mod forward;
pub mod internal;
pub mod io;
pub mod medium;
pub mod specrom;
pub mod lanczos;
pub mod lslinv;
pub mod tridiag;

pub use error::{LslError, Result};
pub use num_complex::Complex64 as C64;
