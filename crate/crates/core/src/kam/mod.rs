//! Normal form near a periodic torus, the Euler-composition law, the
//! parameterization-method Newton solver and the family of quasi-periodic tori
//! accumulating on `Γ_{T,r}`.

pub mod diophantine;
pub mod equidistribution;
pub mod euler;
pub mod family;
pub mod invariance;
pub mod normal_form;

use nalgebra::DMatrix;

use crate::error::Result;

pub use diophantine::{golden, DiophantineVector};
pub use equidistribution::{default_observables, equidistribution_probe, EquidistributionReport, Observable};
pub use euler::{euler_composition_error, EulerReport, HamiltonianField, LinearShearField, VectorField};
pub use family::{torus_family, DistanceFit, FamilyFailure, FamilyMember, FamilyOptions, FamilyReport};
pub use invariance::{
    invariance_error, solve_invariance, InvarianceOptions, InvarianceResult, StandardMap, TorusEmbedding, TwistMap,
};
pub use normal_form::{extract_twist, taylor_gap, NormalFormData, RescaledMap};

/// A map of `T^n × R^n` written on the lift, with its Jacobian in the
/// coordinates `(θ, I)`.
pub trait TorusMap: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    fn eval_with_jacobian(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)>;
}
