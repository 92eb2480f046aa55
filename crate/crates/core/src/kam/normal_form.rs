use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::TorusMap;
use crate::error::{LabError, Result};
use crate::fourier::{Grid, Trig};
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};
use crate::periodic::PeriodicTorusData;

/// Torus diagnostics must be at least this good before the normal form is
/// attempted.
const CLOSURE_TOL: f64 = 1e-8;
const FIXEDNESS_TOL: f64 = 1e-7;
const LAGRANGIAN_TOL: f64 = 1e-6;
const THETA_DEPENDENCE_TOL: f64 = 1e-5;

/// `R_ε⁻¹ ∘ G₀⁻¹ ∘ φ_{kT} ∘ G₀ ∘ R_ε` with `G₀(θ, I) = (θ, P(θ) + I)` and
/// `R_ε(θ, I) = (θ, εI)`, written on the lift with `k·r` removed.
///
/// With `k = 1` this is `Φ_ε`; with `ε = 1/m` and `k = m` it is `U_m = Φ_{1/m}^m`.
pub struct RescaledMap<'a> {
    ham: &'a dyn Hamiltonian,
    spec: IntegratorSpec,
    period: f64,
    r: Vec<i64>,
    pub epsilon: f64,
    pub iterates: usize,
    section: Vec<Trig>,
    /// `dsection[i][j]` interpolates `∂_j P_i`.
    dsection: Vec<Vec<Trig>>,
}

/// Fail unless the torus passed its own diagnostics.
pub fn check_torus(torus: &PeriodicTorusData) -> Result<()> {
    let d = &torus.diagnostics;
    if d.closure_residual > CLOSURE_TOL
        || d.fixedness > FIXEDNESS_TOL
        || d.lagrangian_defect > LAGRANGIAN_TOL
        || !d.winding_matches
    {
        return Err(LabError::HypothesisViolated(format!(
            "torus Γ_(T={}, r={:?}) is not an invariant Lagrangian graph: closure {:.2e}, fixedness {:.2e}, \
             Lagrangian defect {:.2e}",
            torus.period, torus.r, d.closure_residual, d.fixedness, d.lagrangian_defect
        )));
    }
    Ok(())
}

impl<'a> RescaledMap<'a> {
    pub fn new(h: &'a dyn Hamiltonian, torus: &PeriodicTorusData, epsilon: f64, iterates: usize) -> Result<Self> {
        check_torus(torus)?;
        if !(epsilon > 0.0 && epsilon <= 1.0) || iterates == 0 {
            return Err(LabError::Precondition(
                "need ε ∈ (0, 1] and at least one iterate".into(),
            ));
        }
        let section = torus.momentum_interpolants();
        let dsection = section
            .iter()
            .map(|f| (0..torus.dim()).map(|j| f.derivative(j)).collect())
            .collect();
        Ok(RescaledMap {
            ham: h,
            spec: IntegratorSpec::for_model(h, torus.step),
            period: torus.period,
            r: torus.r.clone(),
            epsilon,
            iterates,
            section,
            dsection,
        })
    }

    /// Use a different integrator step (the default is the torus step).
    pub fn with_step(mut self, step: f64) -> Self {
        self.spec = self.spec.with_step(step);
        self
    }

    fn section_at(&self, theta: &[f64]) -> Vec<f64> {
        self.section.iter().map(|f| f.eval(theta)).collect()
    }

    fn dsection_at(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = theta.len();
        DMatrix::from_fn(n, n, |i, j| self.dsection[i][j].eval(theta))
    }

    fn run(&self, theta: &[f64], action: &[f64], frame: bool) -> Result<(Vec<f64>, Vec<f64>, Option<DMatrix<f64>>)> {
        let n = self.dim();
        let p: Vec<f64> = self
            .section_at(theta)
            .iter()
            .zip(action)
            .map(|(s, i)| s + self.epsilon * i)
            .collect();
        let mut prop = Propagator::new(self.ham, self.spec, theta, &p);
        if frame {
            prop = prop.with_frame(DMatrix::identity(2 * n, 2 * n));
        }
        prop.advance(self.iterates as f64 * self.period)?;
        let theta2: Vec<f64> = prop
            .x
            .iter()
            .zip(&self.r)
            .map(|(x, k)| x - (self.iterates as i64 * k) as f64)
            .collect();
        let sec2 = self.section_at(&theta2);
        let action2: Vec<f64> = prop.p.iter().zip(&sec2).map(|(p, s)| (p - s) / self.epsilon).collect();
        Ok((theta2, action2, prop.frame.take()))
    }
}

impl TorusMap for RescaledMap<'_> {
    fn dim(&self) -> usize {
        self.ham.dim()
    }

    fn eval(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (t, a, _) = self.run(theta, action, false)?;
        Ok((t, a))
    }

    fn eval_with_jacobian(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let (t, a, m) = self.run(theta, action, true)?;
        let m = m.expect("frame requested");
        let eps = self.epsilon;
        let mut d1 = DMatrix::identity(2 * n, 2 * n);
        d1.view_mut((n, 0), (n, n)).copy_from(&self.dsection_at(theta));
        for i in 0..n {
            d1[(n + i, n + i)] = eps;
        }
        let mut d3 = DMatrix::identity(2 * n, 2 * n);
        d3.view_mut((n, 0), (n, n)).copy_from(&(-self.dsection_at(&t) / eps));
        for i in 0..n {
            d3[(n + i, n + i)] = 1.0 / eps;
        }
        Ok((t, a, d3 * m * d1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Remainder {
    pub radius: f64,
    /// `sup |θ′ − θ − A(θ)I| / ρ²`
    pub angle: f64,
    /// `sup |I′ − I| / ρ²`
    pub action: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormData {
    /// Grid average of `A(θ)`, row-major.
    pub a_bar: Vec<Vec<f64>>,
    pub symmetry_defect: f64,
    pub min_eigenvalue: f64,
    /// `sup |A(θ) − Ā|`
    pub theta_dependence: f64,
    /// `sup |Q(θ) − I|`
    pub q_defect: f64,
    /// `sup |B(θ) + ∂_θ A(θ)|`
    pub b_defect: f64,
    pub remainders: Vec<Remainder>,
}

impl NormalFormData {
    pub fn a_bar_matrix(&self) -> DMatrix<f64> {
        let n = self.a_bar.len();
        DMatrix::from_fn(n, n, |i, j| self.a_bar[i][j])
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue > 0.0
    }
}

/// Twist matrix `A(θ) = ∂_I θ′` of the time-`T` map in the coordinates
/// `p = P(θ) + I`, with the consistency checks `Q = ∂_I I′ = id` and
/// `B = ∂²_I I′ = −∂_θ A`.
pub fn extract_twist(h: &dyn Hamiltonian, torus: &PeriodicTorusData) -> Result<NormalFormData> {
    let n = torus.dim();
    let map = RescaledMap::new(h, torus, 1.0, 1)?;
    let grid: Grid = torus.grid;
    let delta = 1e-4;
    let mut a_samples = Vec::with_capacity(grid.len());
    let mut b_samples = Vec::with_capacity(grid.len());
    let mut q_defect: f64 = 0.0;
    let zero = vec![0.0; n];
    for theta in grid.points() {
        let (_, _, jac) = map.eval_with_jacobian(&theta, &zero)?;
        let a = jac.view((0, n), (n, n)).into_owned();
        let q = jac.view((n, n), (n, n)).into_owned();
        q_defect = q_defect.max((&q - DMatrix::identity(n, n)).amax());
        // b[k][(i, j)] = ∂²I′_k / ∂I_i ∂I_j by central differences of Q
        let mut b = vec![DMatrix::zeros(n, n); n];
        for j in 0..n {
            let mut plus = zero.clone();
            plus[j] = delta;
            let mut minus = zero.clone();
            minus[j] = -delta;
            let (_, _, jp) = map.eval_with_jacobian(&theta, &plus)?;
            let (_, _, jm) = map.eval_with_jacobian(&theta, &minus)?;
            let dq = (jp.view((n, n), (n, n)) - jm.view((n, n), (n, n))) / (2.0 * delta);
            for k in 0..n {
                for i in 0..n {
                    b[k][(i, j)] = dq[(k, i)];
                }
            }
        }
        a_samples.push(a);
        b_samples.push(b);
    }
    if q_defect > 1e-6 {
        return Err(LabError::SymplecticConsistency(format!(
            "∂_I I′ differs from the identity by {q_defect:.2e}"
        )));
    }
    let mut a_bar = DMatrix::zeros(n, n);
    for a in &a_samples {
        a_bar += a;
    }
    a_bar /= grid.len() as f64;
    let theta_dependence = a_samples.iter().map(|a| (a - &a_bar).amax()).fold(0.0, f64::max);
    // Straightening a θ-dependent twist needs the flat-metric change of
    // variables, which is not computed here.
    if theta_dependence > THETA_DEPENDENCE_TOL * a_bar.amax().max(1.0) {
        return Err(LabError::HypothesisViolated(format!(
            "twist matrix depends on θ (sup |A(θ) − Ā| = {theta_dependence:.2e}); not leafwise flat"
        )));
    }
    let mut b_defect: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let entry: Vec<f64> = a_samples.iter().map(|a| a[(i, j)]).collect();
            let f = Trig::from_samples(grid, &entry);
            for k in 0..n {
                let d = f.derivative(k).samples();
                for (node, dk) in d.iter().enumerate() {
                    b_defect = b_defect.max((b_samples[node][k][(i, j)] + dk).abs());
                }
            }
        }
    }
    let symmetry_defect = (&a_bar - a_bar.transpose()).amax();
    let min_eigenvalue = SymmetricEigen::new(0.5 * (&a_bar + a_bar.transpose()))
        .eigenvalues
        .min();
    let mut remainders = Vec::new();
    for radius in [1e-2, 5e-3] {
        let action = vec![radius / (n as f64).sqrt(); n];
        let mut rem = Remainder {
            radius,
            angle: 0.0,
            action: 0.0,
        };
        for (theta, a) in grid.points().iter().zip(&a_samples) {
            let (t2, i2) = map.eval(theta, &action)?;
            let lin = a * nalgebra::DVector::from_column_slice(&action);
            for d in 0..n {
                rem.angle = rem.angle.max((t2[d] - theta[d] - lin[d]).abs() / (radius * radius));
                rem.action = rem.action.max((i2[d] - action[d]).abs() / (radius * radius));
            }
        }
        remainders.push(rem);
    }
    Ok(NormalFormData {
        a_bar: (0..n).map(|i| a_bar.row(i).iter().copied().collect()).collect(),
        symmetry_defect,
        min_eigenvalue,
        theta_dependence,
        q_defect,
        b_defect,
        remainders,
    })
}

/// `|Φ_ε(θ, I) − (θ + εA(θ)I, I)|` split into angle and action parts.
pub fn taylor_gap(map: &RescaledMap, a: &DMatrix<f64>, theta: &[f64], action: &[f64]) -> Result<(f64, f64)> {
    let (t2, i2) = map.eval(theta, action)?;
    let lin = a * nalgebra::DVector::from_column_slice(action) * map.epsilon;
    let angle = (0..theta.len())
        .map(|d| (t2[d] - theta[d] - lin[d]).abs())
        .fold(0.0, f64::max);
    let act = (0..theta.len()).map(|d| (i2[d] - action[d]).abs()).fold(0.0, f64::max);
    Ok((angle, act))
}
