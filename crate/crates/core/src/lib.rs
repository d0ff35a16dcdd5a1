//! Shape optimization of max-type costs `J(Omega) = max_x Psi(x, u(x))`
//! constrained by a (quasi-)linear elliptic equation.
//!
//! Descent directions come from pointwise adjoints, volume-form shape
//! derivatives and the min-norm point of the convex hull of the gradients of
//! the nearly active points. A smooth `L2` tracking cost is available for
//! comparison.

pub mod config;
pub mod error;
pub mod fem;
pub mod functions;
pub mod geometry;
pub mod io;
pub mod nonsmooth;
pub mod optimizer;
pub mod pde;
pub mod problem;
pub mod shape_deriv;
pub mod verify;

pub use error::{Error, Result};
