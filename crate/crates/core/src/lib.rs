//! Cone synthesis and LP certificates for strict K-cooperativity.
//!
//! Given a finite family of matrices whose conic hull contains every
//! Jacobian of a nonlinear system, the crate searches for a polyhedral cone
//! on which every family member acts strictly positively, and emits LP
//! certificates for it. A certified system has almost all bounded
//! trajectories converging to fixed points.

// `!(x > y)` comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cone;
pub mod conefind;
pub mod error;
pub mod lp;
pub mod sim;
pub mod spectral;
pub mod systems;

pub use error::{Error, Result};
