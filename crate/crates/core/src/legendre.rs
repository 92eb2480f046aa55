//! Legendre transform between `TT^n` and `T*T^n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::state::CotangentState;

const NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX: usize = 60;

/// Solve `∂_p H(x, p) = v` for `p`, starting from `guess`.
pub fn momentum_for_velocity(h: &dyn Hamiltonian, x: &[f64], v: &[f64], guess: Option<&[f64]>) -> Result<DVector<f64>> {
    let target = DVector::from_column_slice(v);
    let mut p = match guess {
        Some(g) => DVector::from_column_slice(g),
        None => target.clone(),
    };
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX {
        let r = h.gradient(x, p.as_slice()).p - &target;
        residual = r.amax();
        if residual <= NEWTON_TOL * (1.0 + target.amax()) {
            return Ok(p);
        }
        let hpp = h.hessian(x, p.as_slice()).p_p;
        let step = hpp
            .cholesky()
            .map(|c| c.solve(&r))
            .ok_or_else(|| LabError::NewtonFailure {
                context: "Legendre transform (fiber Hessian not positive definite)".into(),
                residual,
                iterations: 0,
            })?;
        // damp large steps; the quartic models overshoot from far guesses
        let scale = (1.0f64).min(2.0 * (1.0 + p.amax()) / step.amax().max(1e-300));
        p -= scale * step;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(LabError::NewtonFailure {
        context: "Legendre transform".into(),
        residual,
        iterations: NEWTON_MAX,
    })
}

/// `(x, v) ↦ (x, ∂_v L(x, v))`.
pub fn legendre(h: &dyn Hamiltonian, x: &[f64], v: &[f64]) -> Result<CotangentState> {
    let p = momentum_for_velocity(h, x, v, None)?;
    Ok(CotangentState::new(x, p.as_slice()))
}

/// `(x, p) ↦ (x, ∂_p H(x, p))`.
pub fn inverse_legendre(h: &dyn Hamiltonian, z: &CotangentState) -> (Vec<f64>, Vec<f64>) {
    let v = h.gradient(&z.theta, &z.p).p;
    (z.theta.clone(), v.iter().copied().collect())
}

/// Value and derivatives of the Lagrangian at `(x, v)`, obtained from `H`.
#[derive(Debug, Clone)]
pub struct LagrangianJet {
    pub value: f64,
    /// `∂_v L = p`
    pub p: DVector<f64>,
    /// `∂_x L = −∂_x H(x, p)`
    pub dx: DVector<f64>,
    pub xx: DMatrix<f64>,
    /// `xv[(i, j)] = ∂²L/∂x_i∂v_j`
    pub xv: DMatrix<f64>,
    pub vv: DMatrix<f64>,
}

/// `L(x, v) = p·v − H(x, p)` at the Legendre-dual `p`, with first and second
/// derivatives. `guess` seeds the momentum Newton solve.
pub fn lagrangian_jet(h: &dyn Hamiltonian, x: &[f64], v: &[f64], guess: Option<&[f64]>) -> Result<LagrangianJet> {
    let p = momentum_for_velocity(h, x, v, guess)?;
    let g = h.gradient(x, p.as_slice());
    let hs = h.hessian(x, p.as_slice());
    let vel = DVector::from_column_slice(v);
    let value = p.dot(&vel) - h.energy(x, p.as_slice());
    let hpp_inv = hs.p_p.clone().try_inverse().ok_or_else(|| LabError::Evaluation {
        theta: x.to_vec(),
        p: p.iter().copied().collect(),
        what: "singular fiber Hessian".into(),
    })?;
    // dp/dx = −H_pp⁻¹ H_px
    let dp_dx = -(&hpp_inv * &hs.p_theta);
    let xx = -&hs.theta_theta - hs.p_theta.transpose() * &dp_dx;
    let xv = dp_dx.transpose();
    if !value.is_finite() {
        return Err(LabError::Evaluation {
            theta: x.to_vec(),
            p: p.iter().copied().collect(),
            what: "non-finite Lagrangian".into(),
        });
    }
    Ok(LagrangianJet {
        value,
        p,
        dx: -g.theta,
        xx,
        xv,
        vv: hpp_inv,
    })
}

/// `L(x, v)`, closed form when the model has one.
pub fn lagrangian(h: &dyn Hamiltonian, x: &[f64], v: &[f64]) -> Result<f64> {
    if let Some(l) = h.lagrangian(x, v) {
        return Ok(l);
    }
    Ok(lagrangian_jet(h, x, v, None)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Catalogue;

    #[test]
    fn flat_and_pendulum_are_identity() {
        for h in [Catalogue::Flat { n: 1 }, Catalogue::Pendulum] {
            let z = legendre(&h, &[0.3], &[0.8]).unwrap();
            assert!((z.p[0] - 0.8).abs() < 1e-14);
            let (_, v) = inverse_legendre(&h, &z);
            assert!((v[0] - 0.8).abs() < 1e-14);
        }
    }

    #[test]
    fn convex_flat_root() {
        let h = Catalogue::ConvexFlat { n: 1, quartic: 1.0 };
        let z = legendre(&h, &[0.0], &[1.0]).unwrap();
        // root of p + p³ = 1, checked by bisection
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + mid.powi(3) < 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((z.p[0] - lo).abs() < 1e-12);
        assert!((z.p[0] - 0.6823278).abs() < 1e-7);
    }

    #[test]
    fn jet_matches_closed_forms_and_finite_differences() {
        let h = Catalogue::Shear {
            c: vec![0.2, -0.1],
            amplitude: 0.3,
        };
        let (x, v) = ([0.37, 0.1], [0.4, -0.9]);
        let jet = lagrangian_jet(&h, &x, &v, None).unwrap();
        assert!((jet.value - h.lagrangian(&x, &v).unwrap()).abs() < 1e-13);
        let eps = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            xp[i] += eps;
            let mut xm = x;
            xm[i] -= eps;
            let fd = (h.lagrangian(&xp, &v).unwrap() - h.lagrangian(&xm, &v).unwrap()) / (2.0 * eps);
            assert!((fd - jet.dx[i]).abs() < 1e-7);
            let jp = lagrangian_jet(&h, &xp, &v, None).unwrap();
            let jm = lagrangian_jet(&h, &xm, &v, None).unwrap();
            for j in 0..2 {
                let fdxx = (jp.dx[j] - jm.dx[j]) / (2.0 * eps);
                assert!((fdxx - jet.xx[(i, j)]).abs() < 1e-5, "xx {i}{j}");
                // ∂_x (∂_v L) = ∂_x p
                let fdxv = (jp.p[j] - jm.p[j]) / (2.0 * eps);
                assert!((fdxv - jet.xv[(i, j)]).abs() < 1e-5, "xv {i}{j}");
            }
        }
    }

    #[test]
    fn fenchel_identity_for_convex_flat() {
        let h = Catalogue::ConvexFlat { n: 2, quartic: 0.5 };
        let (x, v) = ([0.1, 0.2], [0.7, -1.3]);
        let jet = lagrangian_jet(&h, &x, &v, None).unwrap();
        let pv = jet.p[0] * v[0] + jet.p[1] * v[1];
        assert!((h.energy(&x, jet.p.as_slice()) + jet.value - pv).abs() < 1e-13);
    }
}
