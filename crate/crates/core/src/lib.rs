//! Numerical machinery for the partial-data inverse problem of the
//! first-order perturbed biharmonic operator Δ² + A·D + q on a half-space
//! box: Navier solves, partial Dirichlet-to-Neumann maps, reflected complex
//! geometric optics solutions and Fourier-sample reconstruction of dA, the
//! Hodge scalar φ and q.

pub mod calibration;
pub mod cgo;
pub mod domain;
pub mod dtn;
mod error;
pub mod families;
pub mod fields;
pub mod forward;
pub mod io;
mod krylov;
pub mod recover;
mod sparse;
pub mod spectral;
mod stencil;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Version string embedded into outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// faer runs sequentially so that every factorization and solve is
/// bitwise reproducible.
pub fn init_deterministic() {
    faer::set_global_parallelism(faer::Par::Seq);
}
