//! Generalized normalized Yamabe flows `∂_t g = (f(S) − A) g` on periodic lattices.
//!
//! The conformal factor `u` of `g = u^{4/(n−2)} g₀` is evolved by explicit
//! method-of-lines integration, and every run can be checked against the
//! evolution identities and a-priori bounds the continuum flow satisfies.

pub mod conformal;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod fzoo;
pub mod grid;
pub mod io;

pub use conformal::{Background, ConformalState, Constants, CurvatureCase};
pub use error::{Error, Result};
pub use flow::{RunConfig, Termination, Trajectory};
pub use fzoo::{FSpec, FunctionRegistry};
pub use grid::{GridSpec, ScalarField};
