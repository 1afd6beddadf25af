//! Numerical toolkit for weak equilibria of time-inconsistent
//! stopping-control problems: closed-form diffusion quantities, the
//! investment-withdrawal model with a wealth-dependent reference level, a
//! discount-ambiguity exclusion check, a grid verifier for the stationary
//! generator system, and Monte Carlo probes of the equilibrium conditions.

pub mod ambiguity;
pub mod diffusion;
pub mod error;
pub mod habit;
pub mod mc;
pub mod verifier;

pub use error::{Error, Result};
