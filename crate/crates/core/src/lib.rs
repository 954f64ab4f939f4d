//! Numerical laboratory for the self-diffusion SKT reaction-diffusion system
//!
//! ```text
//! u1_t - Δ[(d1 + α1 u1) u1] = u1 (-a1 + b1 u1 - c1 u2)
//! u2_t - Δ[(d2 + α2 u2) u2] = u2 (-a2 - b2 u1 + c2 u2)
//! ```
//!
//! with homogeneous Neumann boundary conditions on an interval or rectangle.
//!
//! - [`model`]: parameters, reaction terms, the diffusion transform `h = (d + αu)u`
//!   and the growth constants used by the blow-up analysis.
//! - [`grid`]: vertex-centred grids, the discrete Neumann Laplacian, quadrature and
//!   the eigenpair `(λ0, Φ0)`.
//! - [`iteration`]: the coupled upper/lower monotone iteration in the transformed
//!   variable, one backward-Euler step at a time.
//! - [`regimes`]: closed-form global-existence and blow-up conditions.
//! - [`blowup`]: weighted averages, the Riccati comparison bound and overflow analysis.
//! - [`oracle`]: independent references (homogeneous ODE reduction, Riccati solution).

pub mod banded;
pub mod blowup;
pub mod error;
pub mod grid;
pub mod iteration;
pub mod model;
pub mod oracle;
pub mod regimes;

pub use error::{Error, Result};
