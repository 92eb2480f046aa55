//! Numerical laboratory for Tonelli Hamiltonians on `T*T^n`.

// `!(x > 0.0)` rejects NaN as well; index loops follow the formulas.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod acceptance;
pub mod action;
pub mod error;
pub mod fourier;
pub mod green;
pub mod hamiltonian;
pub mod integrator;
pub mod kam;
pub mod legendre;
pub mod periodic;
pub mod state;
pub mod weak_kam;

/// Version of this crate, recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{ErrorClass, LabError, Result};
pub use hamiltonian::{Catalogue, Hamiltonian};
pub use integrator::{flow, tangent_flow, vector_field, IntegratorSpec, Scheme};
pub use state::{CotangentState, LiftedState, TangentFrame};
