//! Deterministic particle approximation of the one-dimensional
//! aggregation-diffusion equation
//!
//! ```text
//! ∂t ρ = ∂x(ρ ∂x(K ∗ ρ) + ∂x φ(ρ))
//! ```
//!
//! on a torus of period `L`, together with energy, Sobolev and Wasserstein
//! diagnostics and independent reference solutions (a finite-volume solver
//! and Barenblatt profiles).

pub mod diagnostics;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod kernels;
pub mod nonlinearity;
pub mod oracle;
pub mod particles;
pub mod quad;
pub mod validation;

pub use domain::TorusDomain;
pub use error::{Error, Result};
pub use kernels::{build_kernel, Kernel, KernelNorms, KernelSpec};
pub use nonlinearity::{build_nonlinearity, Nonlinearity, NonlinearitySpec};
pub use particles::{GridDensity, ParticleState};
