//! Hamiltonian models on `T*T^n`, angles measured in turns (`θ ∈ [0,1)^n`).
//!
//! Every catalogue entry supplies analytic first and second derivatives. User
//! models can be wrapped in [`FiniteDifferenceModel`], which differentiates the
//! energy numerically.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Version tag of the catalogue, embedded in every run report.
pub const CATALOGUE_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// `∂_θ H`
    pub theta: DVector<f64>,
    /// `∂_p H`
    pub p: DVector<f64>,
}

/// Second derivatives of `H`. `p_theta[(i, j)] = ∂²H / ∂p_i ∂θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub theta_theta: DMatrix<f64>,
    pub p_theta: DMatrix<f64>,
    pub p_p: DMatrix<f64>,
}

/// Named parameters of a model. Scalars are stored as one-element vectors.
pub type ParamRecord = BTreeMap<String, Vec<f64>>;

pub trait Hamiltonian: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> &str;

    fn params(&self) -> ParamRecord {
        ParamRecord::new()
    }

    fn energy(&self, theta: &[f64], p: &[f64]) -> f64;

    fn gradient(&self, theta: &[f64], p: &[f64]) -> Gradient;

    fn hessian(&self, theta: &[f64], p: &[f64]) -> Hessian;

    /// `H(θ, p) = K(p) + V(θ)`, which allows the Störmer–Verlet splitting.
    fn is_separable(&self) -> bool {
        false
    }

    /// `H` does not depend on `θ` at all.
    fn is_angle_independent(&self) -> bool {
        false
    }

    /// Closed-form Lagrangian, when one is known.
    fn lagrangian(&self, _x: &[f64], _v: &[f64]) -> Option<f64> {
        None
    }
}

/// The built-in models, selected by the `hamiltonian.name` config key.
#[derive(Debug, Clone, PartialEq)]
pub enum Catalogue {
    /// `H = ½|p|²`
    Flat { n: usize },
    /// `H = Σ ½p_i² + (q/4) p_i⁴`
    ConvexFlat { n: usize, quartic: f64 },
    /// `H = ½|p − c − dg(θ)|²` with `g(θ) = a sin(2πθ₁)/(2π)`.
    Shear { c: Vec<f64>, amplitude: f64 },
    /// `H = ½p² + cos(2πθ)`
    Pendulum,
    /// `H = ½|p|² + ε(cos 2πθ₁ + cos 2πθ₂)`
    Mech2d { epsilon: f64 },
}

fn scalar(params: &ParamRecord, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) if v.len() == 1 => Ok(v[0]),
        Some(_) => Err(LabError::Config(format!("parameter {key} must be a scalar"))),
    }
}

fn check_keys(name: &str, params: &ParamRecord, allowed: &[&str]) -> Result<()> {
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(LabError::Config(format!(
                "unknown parameter {key:?} for hamiltonian {name:?} (allowed: {allowed:?})"
            )));
        }
    }
    Ok(())
}

impl Catalogue {
    pub fn from_name(name: &str, params: &ParamRecord) -> Result<Self> {
        let dim = |default: usize| -> Result<usize> {
            let n = scalar(params, "n", default as f64)?;
            if n < 1.0 || n.fract() != 0.0 || n > 3.0 {
                return Err(LabError::Config(format!("dimension n must be 1, 2 or 3, got {n}")));
            }
            Ok(n as usize)
        };
        match name {
            "flat" => {
                check_keys(name, params, &["n"])?;
                Ok(Catalogue::Flat { n: dim(1)? })
            }
            "convex-flat" => {
                check_keys(name, params, &["n", "quartic"])?;
                let quartic = scalar(params, "quartic", 1.0)?;
                if quartic < 0.0 {
                    return Err(LabError::Config("quartic coefficient must be >= 0".into()));
                }
                Ok(Catalogue::ConvexFlat { n: dim(1)?, quartic })
            }
            "shear" => {
                check_keys(name, params, &["n", "c", "a"])?;
                let amplitude = scalar(params, "a", 0.3)?;
                let c = match params.get("c") {
                    Some(c) => c.clone(),
                    None => vec![0.0; dim(1)?],
                };
                if c.is_empty() || c.len() > 3 {
                    return Err(LabError::Config("shear form c must have 1..=3 entries".into()));
                }
                if params.contains_key("n") && dim(1)? != c.len() {
                    return Err(LabError::Config("shear: n disagrees with the length of c".into()));
                }
                Ok(Catalogue::Shear { c, amplitude })
            }
            "pendulum" => {
                check_keys(name, params, &[])?;
                Ok(Catalogue::Pendulum)
            }
            "mech2d" => {
                check_keys(name, params, &["epsilon"])?;
                Ok(Catalogue::Mech2d {
                    epsilon: scalar(params, "epsilon", 0.2)?,
                })
            }
            other => Err(LabError::Config(format!(
                "unknown hamiltonian {other:?} (expected flat, convex-flat, shear, pendulum, mech2d)"
            ))),
        }
    }

    /// Generating function `g` of the exact part of the shear form, and its
    /// first two derivatives along `θ₁`.
    fn shear_generator(amplitude: f64, theta1: f64) -> (f64, f64, f64) {
        let s = (TWO_PI * theta1).sin();
        let c = (TWO_PI * theta1).cos();
        (amplitude * s / TWO_PI, amplitude * c, -TWO_PI * amplitude * s)
    }

    /// `g'(θ₁)` for the shear model; zero for the other entries.
    pub fn shear_dg(&self, theta1: f64) -> f64 {
        match self {
            Catalogue::Shear { amplitude, .. } => Self::shear_generator(*amplitude, theta1).1,
            _ => 0.0,
        }
    }

    /// `g''(θ₁)` for the shear model; zero for the other entries.
    pub fn shear_ddg(&self, theta1: f64) -> f64 {
        match self {
            Catalogue::Shear { amplitude, .. } => Self::shear_generator(*amplitude, theta1).2,
            _ => 0.0,
        }
    }
}

impl Hamiltonian for Catalogue {
    fn dim(&self) -> usize {
        match self {
            Catalogue::Flat { n } | Catalogue::ConvexFlat { n, .. } => *n,
            Catalogue::Shear { c, .. } => c.len(),
            Catalogue::Pendulum => 1,
            Catalogue::Mech2d { .. } => 2,
        }
    }

    fn name(&self) -> &str {
        match self {
            Catalogue::Flat { .. } => "flat",
            Catalogue::ConvexFlat { .. } => "convex-flat",
            Catalogue::Shear { .. } => "shear",
            Catalogue::Pendulum => "pendulum",
            Catalogue::Mech2d { .. } => "mech2d",
        }
    }

    fn params(&self) -> ParamRecord {
        let mut rec = ParamRecord::new();
        match self {
            Catalogue::Flat { n } => {
                rec.insert("n".into(), vec![*n as f64]);
            }
            Catalogue::ConvexFlat { n, quartic } => {
                rec.insert("n".into(), vec![*n as f64]);
                rec.insert("quartic".into(), vec![*quartic]);
            }
            Catalogue::Shear { c, amplitude } => {
                rec.insert("c".into(), c.clone());
                rec.insert("a".into(), vec![*amplitude]);
            }
            Catalogue::Pendulum => {}
            Catalogue::Mech2d { epsilon } => {
                rec.insert("epsilon".into(), vec![*epsilon]);
            }
        }
        rec
    }

    fn energy(&self, theta: &[f64], p: &[f64]) -> f64 {
        match self {
            Catalogue::Flat { .. } => 0.5 * p.iter().map(|x| x * x).sum::<f64>(),
            Catalogue::ConvexFlat { quartic, .. } => p.iter().map(|x| 0.5 * x * x + 0.25 * quartic * x.powi(4)).sum(),
            Catalogue::Shear { c, amplitude } => {
                let dg = Self::shear_generator(*amplitude, theta[0]).1;
                p.iter()
                    .zip(c)
                    .enumerate()
                    .map(|(i, (pi, ci))| {
                        let q = pi - ci - if i == 0 { dg } else { 0.0 };
                        0.5 * q * q
                    })
                    .sum()
            }
            Catalogue::Pendulum => 0.5 * p[0] * p[0] + (TWO_PI * theta[0]).cos(),
            Catalogue::Mech2d { epsilon } => {
                0.5 * (p[0] * p[0] + p[1] * p[1]) + epsilon * ((TWO_PI * theta[0]).cos() + (TWO_PI * theta[1]).cos())
            }
        }
    }

    fn gradient(&self, theta: &[f64], p: &[f64]) -> Gradient {
        let n = self.dim();
        match self {
            Catalogue::Flat { .. } => Gradient {
                theta: DVector::zeros(n),
                p: DVector::from_column_slice(p),
            },
            Catalogue::ConvexFlat { quartic, .. } => Gradient {
                theta: DVector::zeros(n),
                p: DVector::from_iterator(n, p.iter().map(|x| x + quartic * x.powi(3))),
            },
            Catalogue::Shear { c, amplitude } => {
                let (_, dg, ddg) = Self::shear_generator(*amplitude, theta[0]);
                let mut q = DVector::from_iterator(n, p.iter().zip(c).map(|(a, b)| a - b));
                q[0] -= dg;
                let mut gt = DVector::zeros(n);
                gt[0] = -ddg * q[0];
                Gradient { theta: gt, p: q }
            }
            Catalogue::Pendulum => Gradient {
                theta: DVector::from_element(1, -TWO_PI * (TWO_PI * theta[0]).sin()),
                p: DVector::from_element(1, p[0]),
            },
            Catalogue::Mech2d { epsilon } => Gradient {
                theta: DVector::from_iterator(2, theta.iter().map(|t| -epsilon * TWO_PI * (TWO_PI * t).sin())),
                p: DVector::from_column_slice(p),
            },
        }
    }

    fn hessian(&self, theta: &[f64], p: &[f64]) -> Hessian {
        let n = self.dim();
        let zeros = || DMatrix::zeros(n, n);
        match self {
            Catalogue::Flat { .. } => Hessian {
                theta_theta: zeros(),
                p_theta: zeros(),
                p_p: DMatrix::identity(n, n),
            },
            Catalogue::ConvexFlat { quartic, .. } => Hessian {
                theta_theta: zeros(),
                p_theta: zeros(),
                p_p: DMatrix::from_diagonal(&DVector::from_iterator(
                    n,
                    p.iter().map(|x| 1.0 + 3.0 * quartic * x * x),
                )),
            },
            Catalogue::Shear { c, amplitude } => {
                let (_, dg, ddg) = Self::shear_generator(*amplitude, theta[0]);
                let dddg = -TWO_PI * TWO_PI * amplitude * (TWO_PI * theta[0]).cos();
                let q0 = p[0] - c[0] - dg;
                let mut tt = zeros();
                tt[(0, 0)] = ddg * ddg - dddg * q0;
                let mut pt = zeros();
                pt[(0, 0)] = -ddg;
                Hessian {
                    theta_theta: tt,
                    p_theta: pt,
                    p_p: DMatrix::identity(n, n),
                }
            }
            Catalogue::Pendulum => Hessian {
                theta_theta: DMatrix::from_element(1, 1, -TWO_PI * TWO_PI * (TWO_PI * theta[0]).cos()),
                p_theta: zeros(),
                p_p: DMatrix::identity(1, 1),
            },
            Catalogue::Mech2d { epsilon } => Hessian {
                theta_theta: DMatrix::from_diagonal(&DVector::from_iterator(
                    2,
                    theta.iter().map(|t| -epsilon * TWO_PI * TWO_PI * (TWO_PI * t).cos()),
                )),
                p_theta: zeros(),
                p_p: DMatrix::identity(2, 2),
            },
        }
    }

    fn is_separable(&self) -> bool {
        !matches!(self, Catalogue::Shear { .. })
    }

    fn is_angle_independent(&self) -> bool {
        matches!(self, Catalogue::Flat { .. } | Catalogue::ConvexFlat { .. })
    }

    fn lagrangian(&self, x: &[f64], v: &[f64]) -> Option<f64> {
        let kinetic = 0.5 * v.iter().map(|a| a * a).sum::<f64>();
        match self {
            Catalogue::Flat { .. } => Some(kinetic),
            Catalogue::Pendulum => Some(kinetic - (TWO_PI * x[0]).cos()),
            Catalogue::Mech2d { epsilon } => Some(kinetic - epsilon * ((TWO_PI * x[0]).cos() + (TWO_PI * x[1]).cos())),
            Catalogue::Shear { c, amplitude } => {
                let dg = Self::shear_generator(*amplitude, x[0]).1;
                let form: f64 = c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + dg * v[0];
                Some(kinetic + form)
            }
            Catalogue::ConvexFlat { .. } => None,
        }
    }
}

/// Wraps a user-supplied energy function and differentiates it by central
/// differences. Hessian accuracy is limited to roughly `1e-6`.
pub struct FiniteDifferenceModel<F> {
    name: String,
    dim: usize,
    energy: F,
    step: f64,
    separable: bool,
}

impl<F> FiniteDifferenceModel<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, dim: usize, energy: F) -> Self {
        FiniteDifferenceModel {
            name: name.into(),
            dim,
            energy,
            step: 1e-5,
            separable: false,
        }
    }

    /// Declare the model separable so the explicit splitting may be used.
    pub fn separable(mut self, separable: bool) -> Self {
        self.separable = separable;
        self
    }

    fn eval_shifted(&self, theta: &[f64], p: &[f64], shifts: &[(usize, f64)]) -> f64 {
        let mut z: Vec<f64> = theta.iter().chain(p).copied().collect();
        for &(i, h) in shifts {
            z[i] += h;
        }
        (self.energy)(&z[..self.dim], &z[self.dim..])
    }

    fn scale(&self, theta: &[f64], p: &[f64], i: usize) -> f64 {
        let v = if i < self.dim { theta[i] } else { p[i - self.dim] };
        self.step * v.abs().max(1.0)
    }
}

impl<F> Hamiltonian for FiniteDifferenceModel<F>
where
    F: Fn(&[f64], &[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn energy(&self, theta: &[f64], p: &[f64]) -> f64 {
        (self.energy)(theta, p)
    }

    fn gradient(&self, theta: &[f64], p: &[f64]) -> Gradient {
        let n = self.dim;
        let mut g = DVector::zeros(2 * n);
        for i in 0..2 * n {
            let h = self.scale(theta, p, i);
            g[i] = (self.eval_shifted(theta, p, &[(i, h)]) - self.eval_shifted(theta, p, &[(i, -h)])) / (2.0 * h);
        }
        Gradient {
            theta: g.rows(0, n).into_owned(),
            p: g.rows(n, n).into_owned(),
        }
    }

    fn hessian(&self, theta: &[f64], p: &[f64]) -> Hessian {
        let n = self.dim;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        let f0 = self.eval_shifted(theta, p, &[]);
        for i in 0..2 * n {
            let hi = 10.0 * self.scale(theta, p, i);
            for j in i..2 * n {
                let hj = 10.0 * self.scale(theta, p, j);
                let v = if i == j {
                    (self.eval_shifted(theta, p, &[(i, hi)]) - 2.0 * f0 + self.eval_shifted(theta, p, &[(i, -hi)]))
                        / (hi * hi)
                } else {
                    (self.eval_shifted(theta, p, &[(i, hi), (j, hj)])
                        - self.eval_shifted(theta, p, &[(i, hi), (j, -hj)])
                        - self.eval_shifted(theta, p, &[(i, -hi), (j, hj)])
                        + self.eval_shifted(theta, p, &[(i, -hi), (j, -hj)]))
                        / (4.0 * hi * hj)
                };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Hessian {
            theta_theta: m.view((0, 0), (n, n)).into_owned(),
            p_theta: m.view((n, 0), (n, n)).into_owned(),
            p_p: m.view((n, n), (n, n)).into_owned(),
        }
    }

    fn is_separable(&self) -> bool {
        self.separable
    }
}

/// Outcome of the Tonelli sanity checks on a model.
#[derive(Debug, Clone, PartialEq)]
pub struct TonelliCheck {
    pub periodicity_defect: f64,
    pub convexity_ok: bool,
    /// `H(θ, s·p)/s` at `s = 10` and `s = 100`, minimum over sampled directions.
    pub superlinearity: (f64, f64),
    pub gradient_fd_error: f64,
    pub hessian_fd_error: f64,
}

impl TonelliCheck {
    pub fn passed(&self) -> bool {
        self.periodicity_defect < 1e-10
            && self.convexity_ok
            && self.superlinearity.1 > self.superlinearity.0
            && self.gradient_fd_error < 1e-6
            && self.hessian_fd_error < 1e-4
    }
}

/// Probe periodicity, fiber convexity, superlinearity and derivative
/// consistency at the given sample points.
pub fn check_tonelli<H: Hamiltonian + ?Sized>(h: &H, samples: &[(Vec<f64>, Vec<f64>)]) -> TonelliCheck {
    let n = h.dim();
    let mut periodicity_defect = 0.0f64;
    let mut convexity_ok = true;
    let mut sl = (f64::INFINITY, f64::INFINITY);
    let mut gerr = 0.0f64;
    let mut herr = 0.0f64;
    let fd = FiniteDifferenceModel::new("fd", n, |t: &[f64], p: &[f64]| h.energy(t, p));
    for (theta, p) in samples {
        let e = h.energy(theta, p);
        for i in 0..n {
            let mut shifted = theta.clone();
            shifted[i] += 1.0;
            periodicity_defect = periodicity_defect.max((h.energy(&shifted, p) - e).abs());
        }
        let hess = h.hessian(theta, p);
        if hess.p_p.clone().cholesky().is_none() {
            convexity_ok = false;
        }
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let unit: Vec<f64> = p.iter().map(|x| x / norm).collect();
            let at = |s: f64| {
                let sp: Vec<f64> = unit.iter().map(|x| s * x).collect();
                h.energy(theta, &sp) / s
            };
            sl.0 = sl.0.min(at(10.0));
            sl.1 = sl.1.min(at(100.0));
        }
        let g = h.gradient(theta, p);
        let gf = fd.gradient(theta, p);
        gerr = gerr
            .max((g.theta - gf.theta).amax() / (1.0 + e.abs()))
            .max((g.p - gf.p).amax() / (1.0 + e.abs()));
        let hf = fd.hessian(theta, p);
        herr = herr
            .max((hess.theta_theta - hf.theta_theta).amax())
            .max((hess.p_theta - hf.p_theta).amax())
            .max((hess.p_p - hf.p_p).amax());
    }
    TonelliCheck {
        periodicity_defect,
        convexity_ok,
        superlinearity: sl,
        gradient_fd_error: gerr,
        hessian_fd_error: herr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalogue() -> Vec<Catalogue> {
        vec![
            Catalogue::Flat { n: 2 },
            Catalogue::ConvexFlat { n: 1, quartic: 1.0 },
            Catalogue::Shear {
                c: vec![0.2, -0.1],
                amplitude: 0.3,
            },
            Catalogue::Pendulum,
            Catalogue::Mech2d { epsilon: 0.2 },
        ]
    }

    #[test]
    fn catalogue_entries_are_tonelli() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for h in catalogue() {
            let n = h.dim();
            let samples: Vec<_> = (0..20)
                .map(|_| {
                    let t: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                    let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    (t, p)
                })
                .collect();
            let check = check_tonelli(&h, &samples);
            assert!(check.passed(), "{}: {check:?}", h.name());
        }
    }

    #[test]
    fn finite_difference_model_matches_pendulum() {
        let fd = FiniteDifferenceModel::new("pend", 1, |t: &[f64], p: &[f64]| {
            0.5 * p[0] * p[0] + (TWO_PI * t[0]).cos()
        });
        let exact = Catalogue::Pendulum;
        let (t, p) = ([0.3], [0.7]);
        let he = exact.hessian(&t, &p);
        let hf = fd.hessian(&t, &p);
        assert!((he.theta_theta - hf.theta_theta).amax() < 1e-5);
        let ge = exact.gradient(&t, &p);
        let gf = fd.gradient(&t, &p);
        assert!((ge.theta - gf.theta).amax() < 1e-8);
    }

    #[test]
    fn lagrangian_closed_forms_satisfy_fenchel_equality() {
        // H(x,p) + L(x,v) = p·v at v = ∂_p H
        for h in catalogue() {
            let n = h.dim();
            let theta: Vec<f64> = (0..n).map(|i| 0.1 + 0.2 * i as f64).collect();
            let p: Vec<f64> = (0..n).map(|i| 0.5 - 0.3 * i as f64).collect();
            let v = h.gradient(&theta, &p).p;
            if let Some(l) = h.lagrangian(&theta, v.as_slice()) {
                let pv: f64 = p.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                assert!((h.energy(&theta, &p) + l - pv).abs() < 1e-12, "{}", h.name());
            }
        }
    }

    #[test]
    fn unknown_parameters_are_rejected() {
        let mut params = ParamRecord::new();
        params.insert("bogus".into(), vec![1.0]);
        assert!(Catalogue::from_name("flat", &params).is_err());
        assert!(Catalogue::from_name("nope", &ParamRecord::new()).is_err());
        let mut params = ParamRecord::new();
        params.insert("c".into(), vec![0.0, 0.5]);
        let shear = Catalogue::from_name("shear", &params).unwrap();
        assert_eq!(shear.dim(), 2);
    }
}
