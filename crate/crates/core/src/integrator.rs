//! Symplectic flows and their tangent lifts.
//!
//! Separable models use Störmer–Verlet (kick–drift–kick); everything else uses
//! the implicit midpoint rule solved by fixed-point iteration. Tangent vectors
//! are propagated by the exact derivative of the discrete step, so the
//! discrete tangent map is symplectic to round-off.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::state::{reduce_angle, CotangentState, LiftedState, TangentFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    StormerVerlet,
    ImplicitMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, step: f64) -> Result<Self> {
        let spec = IntegratorSpec {
            scheme,
            step,
            tolerance: 1e-14,
            max_iterations: 60,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Verlet when the model is separable, implicit midpoint otherwise.
    pub fn for_model(h: &dyn Hamiltonian, step: f64) -> Self {
        let scheme = if h.is_separable() {
            Scheme::StormerVerlet
        } else {
            Scheme::ImplicitMidpoint
        };
        IntegratorSpec {
            scheme,
            step,
            tolerance: 1e-14,
            max_iterations: 60,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(LabError::Config(format!(
                "integrator step must be > 0, got {}",
                self.step
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(LabError::Config("integrator tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(LabError::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Number of equal substeps covering `|t|`.
    pub fn steps_for(&self, t: f64) -> usize {
        ((t.abs() / self.step) - 1e-9).ceil().max(1.0) as usize
    }
}

/// `X_H(z) = (∂_p H, −∂_θ H)`.
pub fn vector_field(h: &dyn Hamiltonian, z: &CotangentState) -> Result<DVector<f64>> {
    let n = h.dim();
    let g = h.gradient(&z.theta, &z.p);
    let mut out = DVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&g.p);
    out.rows_mut(n, n).copy_from(&(-g.theta));
    if !out.iter().all(|v| v.is_finite()) {
        return Err(LabError::Evaluation {
            theta: z.theta.clone(),
            p: z.p.clone(),
            what: "non-finite derivative".into(),
        });
    }
    Ok(out)
}

/// Jacobian of `X_H` in `(θ, p)` coordinates.
pub fn vector_field_jacobian(h: &dyn Hamiltonian, theta: &[f64], p: &[f64]) -> DMatrix<f64> {
    let n = h.dim();
    let hs = h.hessian(theta, p);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&hs.p_theta);
    a.view_mut((0, n), (n, n)).copy_from(&hs.p_p);
    a.view_mut((n, 0), (n, n)).copy_from(&(-&hs.theta_theta));
    a.view_mut((n, n), (n, n)).copy_from(&(-hs.p_theta.transpose()));
    a
}

/// Integrates on the universal cover, optionally carrying a tangent frame.
pub struct Propagator<'a> {
    ham: &'a dyn Hamiltonian,
    spec: IntegratorSpec,
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    pub frame: Option<DMatrix<f64>>,
    pub time: f64,
    /// `(x, ∂_θH, ∂²_θθH)` at the last Verlet position; for separable models
    /// these depend on `x` only.
    potential: Option<(DVector<f64>, DVector<f64>, Option<DMatrix<f64>>)>,
}

impl<'a> Propagator<'a> {
    pub fn new(ham: &'a dyn Hamiltonian, spec: IntegratorSpec, x: &[f64], p: &[f64]) -> Self {
        Propagator {
            ham,
            spec,
            x: DVector::from_column_slice(x),
            p: DVector::from_column_slice(p),
            frame: None,
            time: 0.0,
            potential: None,
        }
    }

    pub fn from_lifted(ham: &'a dyn Hamiltonian, spec: IntegratorSpec, z: &LiftedState) -> Self {
        Self::new(ham, spec, &z.x(), &z.p)
    }

    pub fn with_frame(mut self, frame: DMatrix<f64>) -> Self {
        assert_eq!(frame.nrows(), 2 * self.ham.dim());
        self.frame = Some(frame);
        self
    }

    pub fn spec(&self) -> &IntegratorSpec {
        &self.spec
    }

    pub fn lifted(&self) -> LiftedState {
        LiftedState::from_lift(self.x.as_slice(), self.p.as_slice())
    }

    /// One step of size `dt` (may be negative).
    pub fn step(&mut self, dt: f64) -> Result<()> {
        match self.spec.scheme {
            Scheme::StormerVerlet => self.verlet_step(dt),
            Scheme::ImplicitMidpoint => self.midpoint_step(dt),
        }?;
        self.time += dt;
        if !self.x.iter().chain(self.p.iter()).all(|v| v.is_finite()) {
            return Err(LabError::StepFailure {
                t: self.time,
                reason: "state became non-finite".into(),
            });
        }
        Ok(())
    }

    /// Advance by `t` using equal substeps no larger than the configured step.
    pub fn advance(&mut self, t: f64) -> Result<()> {
        if t == 0.0 {
            return Ok(());
        }
        let n = self.spec.steps_for(t);
        let dt = t / n as f64;
        for _ in 0..n {
            self.step(dt)?;
        }
        Ok(())
    }

    fn verlet_step(&mut self, dt: f64) -> Result<()> {
        if !self.ham.is_separable() {
            return Err(LabError::Config(format!(
                "Störmer–Verlet requires a separable Hamiltonian; {} is not",
                self.ham.name()
            )));
        }
        let h = self.ham;
        let half = 0.5 * dt;
        let want_frame = self.frame.is_some();
        let cached = match &self.potential {
            Some((x, g, tt)) if *x == self.x && (tt.is_some() || !want_frame) => Some((g.clone(), tt.clone())),
            _ => None,
        };
        let (g0, tt0) = match cached {
            Some(c) => c,
            None => {
                let g = h.gradient(self.x.as_slice(), self.p.as_slice()).theta;
                let tt = want_frame.then(|| h.hessian(self.x.as_slice(), self.p.as_slice()).theta_theta);
                (g, tt)
            }
        };
        let p_half = &self.p - half * &g0;
        let gp = h.gradient(self.x.as_slice(), p_half.as_slice());
        let x_new = &self.x + dt * &gp.p;
        let g1 = h.gradient(x_new.as_slice(), p_half.as_slice()).theta;
        let p_new = &p_half - half * &g1;
        let mut tt1 = None;
        if let (Some(frame), Some(tt0)) = (self.frame.as_mut(), tt0) {
            let n = h.dim();
            // ∂²_pp H depends on p only, ∂²_θθ H on θ only
            let hs1 = h.hessian(x_new.as_slice(), p_half.as_slice());
            let (mut dx, mut dp) = frame.rows_range_pair_mut(0..n, n..2 * n);
            dp.gemm(-half, &tt0, &dx, 1.0);
            dx.gemm(dt, &hs1.p_p, &dp, 1.0);
            dp.gemm(-half, &hs1.theta_theta, &dx, 1.0);
            tt1 = Some(hs1.theta_theta);
        }
        self.potential = Some((x_new.clone(), g1, tt1));
        self.x = x_new;
        self.p = p_new;
        Ok(())
    }

    fn midpoint_step(&mut self, dt: f64) -> Result<()> {
        let h = self.ham;
        let n = h.dim();
        let field = |x: &DVector<f64>, p: &DVector<f64>| {
            let g = h.gradient(x.as_slice(), p.as_slice());
            (g.p, -g.theta)
        };
        let (fx, fp) = field(&self.x, &self.p);
        let mut x1 = &self.x + dt * fx;
        let mut p1 = &self.p + dt * fp;
        let scale = 1.0 + self.x.amax().max(self.p.amax());
        let mut last = f64::INFINITY;
        let mut converged = false;
        for _ in 0..self.spec.max_iterations {
            let xm = 0.5 * (&self.x + &x1);
            let pm = 0.5 * (&self.p + &p1);
            let (fx, fp) = field(&xm, &pm);
            let xn = &self.x + dt * fx;
            let pn = &self.p + dt * fp;
            let diff = (&xn - &x1).amax().max((&pn - &p1).amax());
            x1 = xn;
            p1 = pn;
            if diff <= self.spec.tolerance * scale {
                converged = true;
                break;
            }
            if !diff.is_finite() || (diff > last && diff > 1e-6 * scale) {
                break;
            }
            last = diff;
        }
        if !converged {
            return Err(LabError::StepFailure {
                t: self.time,
                reason: "implicit midpoint fixed point did not contract".into(),
            });
        }
        if let Some(frame) = self.frame.as_mut() {
            let xm = 0.5 * (&self.x + &x1);
            let pm = 0.5 * (&self.p + &p1);
            let a = vector_field_jacobian(h, xm.as_slice(), pm.as_slice());
            let id = DMatrix::<f64>::identity(2 * n, 2 * n);
            let lhs = &id - (0.5 * dt) * &a;
            let rhs = (&id + (0.5 * dt) * &a) * &*frame;
            let lu = lhs.lu();
            match lu.solve(&rhs) {
                Some(sol) => *frame = sol,
                None => {
                    return Err(LabError::StepFailure {
                        t: self.time,
                        reason: "singular tangent update".into(),
                    })
                }
            }
        }
        self.x = x1;
        self.p = p1;
        Ok(())
    }
}

/// `φ̃_t^H(z)` on the universal cover.
pub fn flow(h: &dyn Hamiltonian, z: &LiftedState, t: f64, spec: &IntegratorSpec) -> Result<LiftedState> {
    spec.validate()?;
    if t == 0.0 {
        return Ok(z.clone());
    }
    // integrate from the reduced base point; the winding is carried separately
    let mut prop = Propagator::new(h, *spec, &z.theta, &z.p);
    prop.advance(t)?;
    let mut out = prop.lifted();
    for (w, w0) in out.winding.iter_mut().zip(&z.winding) {
        *w += w0;
    }
    Ok(out)
}

/// Flow plus the image of `columns` under the tangent map.
pub fn flow_with_frame(
    h: &dyn Hamiltonian,
    z: &LiftedState,
    columns: &DMatrix<f64>,
    t: f64,
    spec: &IntegratorSpec,
) -> Result<(LiftedState, DMatrix<f64>)> {
    spec.validate()?;
    if t == 0.0 {
        return Ok((z.clone(), columns.clone()));
    }
    let mut prop = Propagator::new(h, *spec, &z.theta, &z.p).with_frame(columns.clone());
    prop.advance(t)?;
    let mut out = prop.lifted();
    for (w, w0) in out.winding.iter_mut().zip(&z.winding) {
        *w += w0;
    }
    Ok((out, prop.frame.take().expect("frame present")))
}

/// Push a tangent frame along the flow: columns become `Dφ_t · columns`.
pub fn tangent_flow(h: &dyn Hamiltonian, frame: &TangentFrame, t: f64, spec: &IntegratorSpec) -> Result<TangentFrame> {
    let z = LiftedState::from_base(&frame.base);
    let (end, cols) = flow_with_frame(h, &z, &frame.columns, t, spec)?;
    Ok(TangentFrame {
        base: end.base(),
        columns: cols,
    })
}

/// Full `2n × 2n` monodromy `Dφ_t(z)` together with the lifted endpoint.
pub fn monodromy(
    h: &dyn Hamiltonian,
    x: &[f64],
    p: &[f64],
    t: f64,
    spec: &IntegratorSpec,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let n = h.dim();
    let mut prop = Propagator::new(h, *spec, x, p).with_frame(DMatrix::identity(2 * n, 2 * n));
    prop.advance(t)?;
    let frame = prop.frame.take().expect("frame present");
    Ok((prop.x, prop.p, frame))
}

/// One sample of a trajectory: time, lifted position, momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub p: DVector<f64>,
}

/// Samples after every integrator step, starting with the initial point.
pub fn trajectory(h: &dyn Hamiltonian, x: &[f64], p: &[f64], t: f64, spec: &IntegratorSpec) -> Result<Vec<Sample>> {
    let mut prop = Propagator::new(h, *spec, x, p);
    let n = spec.steps_for(t);
    let dt = t / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(Sample {
        t: 0.0,
        x: prop.x.clone(),
        p: prop.p.clone(),
    });
    for _ in 0..n {
        prop.step(dt)?;
        out.push(Sample {
            t: prop.time,
            x: prop.x.clone(),
            p: prop.p.clone(),
        });
    }
    Ok(out)
}

/// Reduce a lifted position vector to the torus, returning reduced coordinates.
pub fn reduce(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| reduce_angle(v).0).collect()
}
