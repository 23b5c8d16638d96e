//! Weak-form input-output parameter estimation for ODE models with
//! unobserved states, plus Monte Carlo (e,q) practical-identifiability
//! analysis and an output-error / profile-likelihood baseline.
//!
//! The pipeline, bottom to top:
//!
//! 1. [`models`] — forward ODE models (blood-tissue diffusion, SIR) and an
//!    adaptive Dormand-Prince integrator for data generation.
//! 2. [`testfn`] — compactly supported test functions and the discretized,
//!    quadrature-weighted basis matrices.
//! 3. [`weakform`] — assembly of the weak-form regression system (G, b) and
//!    its analytic data-Jacobian for each input-output equation.
//! 4. [`wendy`] — ordinary least squares plus iteratively reweighted
//!    generalized least squares with a first-order residual covariance,
//!    confidence intervals included.
//! 5. [`noise`] — observation-error-ratio noise injection with counter-based
//!    reproducible seeding.
//! 6. [`identifiability`] — Monte Carlo sweeps over noise ratios, (e,q)
//!    identifiability maps, minimum-q parameter scans, hyperparameter scans.
//! 7. [`baseline`] — output-error nonlinear least squares, profile
//!    likelihood, and the timing harness comparing the two estimators.

pub mod baseline;
pub mod error;
pub mod identifiability;
pub mod models;
pub mod noise;
pub mod presets;
pub mod stats;
pub mod testfn;
pub mod weakform;
pub mod wendy;

pub use error::{Error, Result};
