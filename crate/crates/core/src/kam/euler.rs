use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};

/// A vector field on `T^n × R^n` written on the lift, state `(θ, I)`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &[f64]) -> Vec<f64>;

    /// The time-`t` flow, exact or from a fine reference integrator.
    fn reference_flow(&self, z: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// `X_H = (∂_p H, −∂_θ H)` with a Störmer–Verlet or midpoint reference flow.
pub struct HamiltonianField<'a> {
    pub ham: &'a dyn Hamiltonian,
    pub reference_step: f64,
}

impl<'a> HamiltonianField<'a> {
    pub fn new(ham: &'a dyn Hamiltonian) -> Self {
        HamiltonianField {
            ham,
            reference_step: 1e-4,
        }
    }
}

impl VectorField for HamiltonianField<'_> {
    fn dim(&self) -> usize {
        self.ham.dim()
    }

    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let g = self.ham.gradient(&z[..n], &z[n..]);
        g.p.iter().copied().chain(g.theta.iter().map(|v| -v)).collect()
    }

    fn reference_flow(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        let spec = IntegratorSpec::for_model(self.ham, self.reference_step);
        let mut prop = Propagator::new(self.ham, spec, &z[..n], &z[n..]);
        prop.advance(t)?;
        Ok(prop.x.iter().chain(prop.p.iter()).copied().collect())
    }
}

/// `X(θ, I) = (ĀI, 0)`, whose flow is `(θ + tĀI, I)`.
pub struct LinearShearField {
    pub a: DMatrix<f64>,
}

impl VectorField for LinearShearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = (0..n).map(|j| self.a[(i, j)] * z[n + j]).sum();
        }
        out
    }

    fn reference_flow(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        let mut out = z.to_vec();
        for i in 0..n {
            out[i] += t * (0..n).map(|j| self.a[(i, j)] * z[n + j]).sum::<f64>();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EulerReport {
    pub epsilons: Vec<f64>,
    pub steps: Vec<usize>,
    /// Sup-norm gap between `(id + εX)^m` and `φ_{mε}` over the samples.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log ε`; `None` when fewer
    /// than two errors are nonzero.
    pub slope: Option<f64>,
}

/// Compare `m = ⌊c₀/ε⌋` explicit Euler steps with the time-`mε` flow.
///
/// `window` bounds `|I|` componentwise; an Euler iterate leaving it aborts
/// with the iterate index.
pub fn euler_composition_error(
    field: &dyn VectorField,
    samples: &[Vec<f64>],
    epsilons: &[f64],
    c0: f64,
    window: f64,
) -> Result<EulerReport> {
    let n = field.dim();
    if c0 < 0.0 || epsilons.iter().any(|e| *e <= 0.0) {
        return Err(LabError::Precondition("need c₀ ≥ 0 and positive step sizes".into()));
    }
    let mut steps = Vec::new();
    let mut errors = Vec::new();
    for &eps in epsilons {
        let m = (c0 / eps + 1e-9).floor() as usize;
        let mut err: f64 = 0.0;
        for z0 in samples {
            let mut z = z0.clone();
            for k in 0..m {
                let v = field.eval(&z);
                for (zi, vi) in z.iter_mut().zip(&v) {
                    *zi += eps * vi;
                }
                if z[n..].iter().any(|a| !(a.abs() <= window)) {
                    return Err(LabError::WindowEscape { index: k + 1 });
                }
            }
            let reference = field.reference_flow(z0, m as f64 * eps)?;
            for (a, b) in z.iter().zip(&reference) {
                err = err.max((a - b).abs());
            }
        }
        steps.push(m);
        errors.push(err);
    }
    let pts: Vec<(f64, f64)> = epsilons
        .iter()
        .zip(&errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(x, e)| (x.ln(), e.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(EulerReport {
        epsilons: epsilons.to_vec(),
        steps,
        errors,
        slope,
    })
}
