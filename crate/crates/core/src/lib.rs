//! Numerical laboratory for the parabolic-elliptic chemotaxis system
//!
//! ```text
//! u_t = Δu − χ ∇·((u/v) ∇v) + u (a(t,x) − b(t,x) u)
//!  0  = Δv − μ v + ν u
//! ```
//!
//! on an interval or rectangle with homogeneous Neumann walls. The signal v
//! is slaved to the density u through the elliptic equation, the sensitivity
//! χ/v is singular at v = 0, and the logistic coefficients a, b may depend on
//! space and time within declared uniform bounds.
//!
//! The crate provides the discretization (finite-volume upwind/IMEX stepping
//! with a strict positivity contract), the elliptic solver with its discrete
//! Green-kernel floor δ₀ʰ, threshold and envelope diagnostics for the
//! persistence theory (carrying-capacity-type mass bounds, exponential
//! envelopes for the negative moment, absorbing rectangles), fixed-point
//! constructions for periodic/steady/pullback entire solutions, and a
//! reproducible experiment harness with a CLI.

pub mod analysis;
pub mod elliptic;
pub mod entire;
pub mod error;
pub mod harness;
pub mod model;
pub mod stepper;

pub use error::{Error, Result};
