//! Lagrangian action, fixed-time minimizers between lifted endpoints and the
//! triangle-inequality diagnostics.
//!
//! `min_action` works in two stages. A discrete midpoint action over a uniform
//! grid is minimized by block-tridiagonal Newton; the discrete momentum then
//! seeds a shooting Newton solve of `π∘φ̃_t(x, p) = y`, and the value is the
//! action integral along that extremal.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};
use crate::legendre::{lagrangian, lagrangian_jet, momentum_for_velocity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub times: Vec<f64>,
    /// Lifted positions.
    pub points: Vec<Vec<f64>>,
    /// `x_N − x_0` when the path closes up modulo `Z^n`.
    pub homotopy: Option<Vec<i64>>,
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 3 || times.len() != points.len() {
            return Err(LabError::Precondition(
                "a path needs at least 3 samples and one point per time".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::Precondition("path times must be strictly increasing".into()));
        }
        let n = points[0].len();
        if points.iter().any(|p| p.len() != n) {
            return Err(LabError::Precondition("path points have mixed dimensions".into()));
        }
        let first = &points[0];
        let last = &points[points.len() - 1];
        let diff: Vec<f64> = last.iter().zip(first).map(|(a, b)| a - b).collect();
        let homotopy = if diff.iter().all(|d| (d - d.round()).abs() <= 1e-9) {
            Some(diff.iter().map(|d| d.round() as i64).collect())
        } else {
            None
        };
        Ok(DiscretePath {
            times,
            points,
            homotopy,
        })
    }

    /// Uniform grid on `[0, t]` from a parametrized curve `s ∈ [0,1] ↦ x(s)`.
    pub fn sample(t: f64, segments: usize, curve: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let times: Vec<f64> = (0..=segments).map(|k| t * k as f64 / segments as f64).collect();
        let points = (0..=segments).map(|k| curve(k as f64 / segments as f64)).collect();
        Self::new(times, points)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Symmetric differences inside, one-sided at both ends.
    pub fn velocities(&self) -> Vec<Vec<f64>> {
        let m = self.len();
        let diff = |a: usize, b: usize| -> Vec<f64> {
            let dt = self.times[b] - self.times[a];
            self.points[b]
                .iter()
                .zip(&self.points[a])
                .map(|(xb, xa)| (xb - xa) / dt)
                .collect()
        };
        (0..m)
            .map(|k| match k {
                0 => diff(0, 1),
                k if k == m - 1 => diff(m - 2, m - 1),
                k => diff(k - 1, k + 1),
            })
            .collect()
    }
}

/// Trapezoidal action `∫ L(γ, γ′) dt` of a sampled path.
pub fn action_of_path(h: &dyn Hamiltonian, path: &DiscretePath) -> Result<f64> {
    let v = path.velocities();
    let mut total = 0.0;
    let mut prev = None;
    for (k, (x, vk)) in path.points.iter().zip(&v).enumerate() {
        let l = lagrangian(h, x, vk)?;
        if !l.is_finite() {
            return Err(LabError::Evaluation {
                theta: x.clone(),
                p: vec![],
                what: format!("non-finite Lagrangian at sample {k}"),
            });
        }
        if let Some(lp) = prev {
            total += 0.5 * (path.times[k] - path.times[k - 1]) * (lp + l);
        }
        prev = Some(l);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizerOptions {
    /// Segments per unit time of the discrete stage (at least 16 overall).
    pub segments_per_unit: usize,
    pub max_segments: usize,
    /// Coarse integrator step of the shooting stage; the value is
    /// extrapolated from this step and its half.
    pub step: f64,
    /// Discrete Euler–Lagrange residual target.
    pub tolerance: f64,
    /// Endpoint mismatch target of the shooting stage.
    pub shooting_tolerance: f64,
    pub t_min: f64,
    /// Run the `3^n` offset starts (otherwise only the straight segment).
    pub multi_start: bool,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        MinimizerOptions {
            segments_per_unit: 48,
            max_segments: 768,
            step: 1e-3,
            tolerance: 1e-9,
            shooting_tolerance: 1e-11,
            t_min: 0.05,
            multi_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub value: f64,
    pub path: DiscretePath,
    pub converged: bool,
    /// Euler–Lagrange defect: endpoint mismatch after shooting, discrete
    /// residual otherwise.
    pub gradient_norm: f64,
    pub initial_velocity: Vec<f64>,
    pub initial_momentum: Vec<f64>,
    /// Another start reached the same value with a different extremal.
    pub tie: bool,
}

struct SegmentEval {
    value: f64,
    grad: Vec<DVector<f64>>,
    diag: Vec<DMatrix<f64>>,
    off: Vec<DMatrix<f64>>,
    first_p: DVector<f64>,
    first_lx: DVector<f64>,
}

/// Discrete action `Σ Δt·L((x_k + x_{k+1})/2, (x_{k+1} − x_k)/Δt)` with gradient
/// and block-tridiagonal Hessian in the interior nodes.
fn discrete_action(h: &dyn Hamiltonian, nodes: &[DVector<f64>], dt: f64, hessian: bool) -> Result<SegmentEval> {
    let n = h.dim();
    let segs = nodes.len() - 1;
    let interior = segs - 1;
    let mut value = 0.0;
    let mut grad = vec![DVector::zeros(n); interior];
    let mut diag = if hessian {
        vec![DMatrix::zeros(n, n); interior]
    } else {
        vec![]
    };
    let mut off = if hessian {
        vec![DMatrix::zeros(n, n); interior.saturating_sub(1)]
    } else {
        vec![]
    };
    let mut first_p = DVector::zeros(n);
    let mut first_lx = DVector::zeros(n);
    for k in 0..segs {
        let m = 0.5 * (&nodes[k] + &nodes[k + 1]);
        let w = (&nodes[k + 1] - &nodes[k]) / dt;
        let jet = lagrangian_jet(h, m.as_slice(), w.as_slice(), Some(w.as_slice()))?;
        value += dt * jet.value;
        if k == 0 {
            first_p = jet.p.clone();
            first_lx = jet.dx.clone();
        }
        // dS_k/dx_k = ½Δt L_x − p, dS_k/dx_{k+1} = ½Δt L_x + p
        let ga = 0.5 * dt * &jet.dx - &jet.p;
        let gb = 0.5 * dt * &jet.dx + &jet.p;
        if k >= 1 {
            grad[k - 1] += ga;
        }
        if k < interior {
            grad[k] += gb;
        }
        if hessian {
            let vx = jet.xv.transpose();
            let block = |aa: f64, ab: f64, ba: f64, bb: f64| -> DMatrix<f64> {
                dt * (aa * &jet.xx + ab * &jet.xv + ba * &vx + bb * &jet.vv)
            };
            // coefficients of x_k: (½, −1/Δt); of x_{k+1}: (½, 1/Δt)
            let (ak, bk, al, bl) = (0.5, -1.0 / dt, 0.5, 1.0 / dt);
            let kk = block(ak * ak, ak * bk, bk * ak, bk * bk);
            let ll = block(al * al, al * bl, bl * al, bl * bl);
            // rows x_k, columns x_{k+1}
            let kl = block(ak * al, ak * bl, bk * al, bk * bl);
            if k >= 1 {
                diag[k - 1] += kk;
            }
            if k < interior {
                diag[k] += ll;
            }
            if k >= 1 && k < interior {
                off[k - 1] = kl;
            }
        }
    }
    Ok(SegmentEval {
        value,
        grad,
        diag,
        off,
        first_p,
        first_lx,
    })
}

/// Solve `(A + μI) d = rhs` for a symmetric block-tridiagonal `A` by block
/// Cholesky. `None` when the shifted matrix is not positive definite.
fn block_tridiagonal_solve(
    diag: &[DMatrix<f64>],
    off: &[DMatrix<f64>],
    rhs: &[DVector<f64>],
    mu: f64,
) -> Option<Vec<DVector<f64>>> {
    let m = diag.len();
    let n = diag[0].nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut coupling: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut d = &diag[i] + mu * &id;
        let mut r = rhs[i].clone();
        if i > 0 {
            // C_{i−1} = D̃_{i−1}⁻¹ B_{i−1}
            let b = &off[i - 1];
            d -= b.transpose() * &coupling[i - 1];
            r -= b.transpose() * &y[i - 1];
        }
        let c = d.cholesky()?;
        let yi = c.solve(&r);
        if i + 1 < m {
            coupling.push(c.solve(&off[i]));
        }
        y.push(yi);
    }
    let mut x = vec![DVector::zeros(n); m];
    for i in (0..m).rev() {
        x[i] = y[i].clone();
        if i + 1 < m {
            let next = coupling[i].clone() * &x[i + 1];
            x[i] -= next;
        }
    }
    Some(x)
}

struct DiscreteMinimum {
    nodes: Vec<DVector<f64>>,
    value: f64,
    residual: f64,
    converged: bool,
    momentum: DVector<f64>,
}

fn minimize_discrete(h: &dyn Hamiltonian, mut nodes: Vec<DVector<f64>>, dt: f64, tol: f64) -> Result<DiscreteMinimum> {
    let interior = nodes.len() - 2;
    let mut mu = 0.0;
    let mut eval = discrete_action(h, &nodes, dt, true)?;
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        residual = eval.grad.iter().map(|g| g.amax()).fold(0.0, f64::max) / dt;
        if residual < tol {
            break;
        }
        let rhs: Vec<DVector<f64>> = eval.grad.iter().map(|g| -g).collect();
        let step = loop {
            match block_tridiagonal_solve(&eval.diag, &eval.off, &rhs, mu) {
                Some(d) => break d,
                None => mu = (10.0 * mu).max(1e-6 / dt),
            }
            if mu > 1e12 {
                return Err(LabError::NoMinimizer {
                    best_value: eval.value,
                    best_gradient: residual,
                });
            }
        };
        let slope: f64 = step.iter().zip(&eval.grad).map(|(d, g)| d.dot(g)).sum();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<DVector<f64>> = (0..nodes.len())
                .map(|k| {
                    if k == 0 || k == interior + 1 {
                        nodes[k].clone()
                    } else {
                        &nodes[k] + alpha * &step[k - 1]
                    }
                })
                .collect();
            if let Ok(e) = discrete_action(h, &trial, dt, true) {
                // near the minimum the decrease drowns in round-off
                let floor = 1e-13 * (1.0 + eval.value.abs());
                if e.value <= eval.value + 1e-4 * alpha * slope + floor {
                    accepted = Some((trial, e));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, e)) => {
                nodes = trial;
                eval = e;
                mu = if alpha == 1.0 {
                    mu * 0.1
                } else {
                    (4.0 * mu).max(1e-6 / dt)
                };
                if mu < 1e-12 {
                    mu = 0.0;
                }
            }
            None => {
                mu = (10.0 * mu).max(1e-6 / dt);
                if mu > 1e12 {
                    break;
                }
            }
        }
    }
    // discrete Legendre transform at the left end: p_0 = −∂S/∂x_0
    let momentum = &eval.first_p - 0.5 * dt * &eval.first_lx;
    Ok(DiscreteMinimum {
        value: eval.value,
        residual,
        converged: residual < tol,
        nodes,
        momentum,
    })
}

/// Endpoint, monodromy position block and action along the extremal from
/// `(x, p0)` over `[0, t]`, with `segments + 1` path samples.
struct Shot {
    end: DVector<f64>,
    dx_dp: DMatrix<f64>,
    value: f64,
    path: Vec<Vec<f64>>,
    velocity0: Vec<f64>,
    dt: f64,
}

fn shoot(h: &dyn Hamiltonian, spec: &IntegratorSpec, x: &[f64], p0: &[f64], t: f64, segments: usize) -> Result<Shot> {
    let n = h.dim();
    // an even number of steps, a multiple of `segments`
    let mut per = ((t / (spec.step * segments as f64)).ceil() as usize).max(1);
    if (per * segments) % 2 == 1 {
        per += 1;
    }
    let steps = per * segments;
    let dt = t / steps as f64;
    let mut frame = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        frame[(n + i, i)] = 1.0;
    }
    let mut prop = Propagator::new(h, *spec, x, p0).with_frame(frame);
    let lag = |prop: &Propagator| {
        let g = h.gradient(prop.x.as_slice(), prop.p.as_slice());
        prop.p.dot(&g.p) - h.energy(prop.x.as_slice(), prop.p.as_slice())
    };
    let velocity0: Vec<f64> = h.gradient(x, p0).p.iter().copied().collect();
    let mut path = vec![x.to_vec()];
    let mut simpson = lag(&prop);
    for k in 1..=steps {
        prop.step(dt)?;
        let l = lag(&prop);
        let w = if k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        simpson += w * l;
        if k % per == 0 {
            path.push(prop.x.iter().copied().collect());
        }
    }
    let frame = prop.frame.take().expect("frame present");
    Ok(Shot {
        end: prop.x.clone(),
        dx_dp: frame.rows(0, n).into_owned(),
        value: simpson * dt / 3.0,
        path,
        velocity0,
        dt,
    })
}

#[allow(clippy::too_many_arguments)]
fn shooting_newton(
    h: &dyn Hamiltonian,
    x: &[f64],
    y: &[f64],
    t: f64,
    p_seed: DVector<f64>,
    segments: usize,
    step: f64,
    opts: &MinimizerOptions,
) -> Result<(Shot, DVector<f64>, f64)> {
    let spec = IntegratorSpec::for_model(h, step);
    let target = DVector::from_column_slice(y);
    let mut p = p_seed;
    let mut shot = shoot(h, &spec, x, p.as_slice(), t, segments)?;
    let mut mismatch = (&shot.end - &target).amax();
    for _ in 0..40 {
        if mismatch < opts.shooting_tolerance {
            break;
        }
        let lu = shot.dx_dp.clone().lu();
        let delta = lu
            .solve(&(&target - &shot.end))
            .ok_or_else(|| LabError::NewtonFailure {
                context: "shooting (singular ∂x/∂p, conjugate point)".into(),
                residual: mismatch,
                iterations: 0,
            })?;
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-4 {
            let trial = &p + lambda * &delta;
            if let Ok(s) = shoot(h, &spec, x, trial.as_slice(), t, segments) {
                let m = (&s.end - &target).amax();
                if m < mismatch {
                    p = trial;
                    shot = s;
                    mismatch = m;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if mismatch >= opts.shooting_tolerance {
        return Err(LabError::NewtonFailure {
            context: "shooting".into(),
            residual: mismatch,
            iterations: 40,
        });
    }
    Ok((shot, p, mismatch))
}

/// Shooting at steps `h` and `h/2`; the value is Richardson-extrapolated
/// (both schemes are symmetric, so the error expands in `h²`).
fn shooting_polish(
    h: &dyn Hamiltonian,
    x: &[f64],
    y: &[f64],
    t: f64,
    p_seed: DVector<f64>,
    segments: usize,
    opts: &MinimizerOptions,
) -> Result<(Shot, DVector<f64>, f64)> {
    let (coarse, p, _) = shooting_newton(h, x, y, t, p_seed, segments, opts.step, opts)?;
    let (mut fine, p, mismatch) = shooting_newton(h, x, y, t, p, segments, 0.5 * opts.step, opts)?;
    let (hc, hf) = (coarse.dt * coarse.dt, fine.dt * fine.dt);
    fine.value += (fine.value - coarse.value) * hf / (hc - hf);
    Ok((fine, p, mismatch))
}

/// Polish a discrete minimum into an extremal that tracks it. A seed off the
/// extremal can send Newton to a different branch where the flow is
/// sensitive, so a shot that leaves the discrete path triggers a refinement
/// of the discrete problem and a Richardson-extrapolated seed.
fn polish_candidate(
    h: &dyn Hamiltonian,
    x: &[f64],
    y: &[f64],
    t: f64,
    start: &DiscreteMinimum,
    segments: usize,
    opts: &MinimizerOptions,
) -> Result<(Shot, DVector<f64>, f64, usize)> {
    let mut segs = segments;
    let mut nodes = start.nodes.clone();
    let mut seed = start.momentum.clone();
    let mut last_err = None;
    for refinement in 0..=3 {
        match shooting_polish(h, x, y, t, seed.clone(), segs, opts) {
            Ok((shot, p, mismatch)) => {
                let deviation = shot
                    .path
                    .iter()
                    .zip(&nodes)
                    .map(|(a, b)| a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
                    .fold(0.0, f64::max);
                if deviation < 1e-2 {
                    return Ok((shot, p, mismatch, segs));
                }
                debug!("shot left the discrete path by {deviation:.2e}");
                last_err = Some(LabError::NewtonFailure {
                    context: "shooting left the discrete minimizer".into(),
                    residual: deviation,
                    iterations: refinement,
                });
            }
            Err(e) => last_err = Some(e),
        }
        if refinement == 3 {
            break;
        }
        let mut fine = Vec::with_capacity(2 * segs + 1);
        for w in nodes.windows(2) {
            fine.push(w[0].clone());
            fine.push(0.5 * (&w[0] + &w[1]));
        }
        fine.push(nodes[segs].clone());
        segs *= 2;
        let refined = minimize_discrete(h, fine, t / segs as f64, opts.tolerance)?;
        // the discrete momentum is accurate to second order in the step
        seed = (4.0 * &refined.momentum - &seed) / 3.0;
        nodes = refined.nodes;
    }
    Err(last_err.expect("at least one attempt"))
}

fn segments_for(t: f64, opts: &MinimizerOptions) -> usize {
    ((opts.segments_per_unit as f64 * t).ceil() as usize).clamp(16, opts.max_segments.max(16))
}

/// Start offsets `k ∈ {−1,0,1}^n`, in lexicographic order.
fn offsets(n: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-1..=1).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

/// `A_t(x, y)`: minimal action over curves from `x` to `y` (lifted) in time `t`.
pub fn min_action(h: &dyn Hamiltonian, x: &[f64], y: &[f64], t: f64, opts: &MinimizerOptions) -> Result<ActionResult> {
    let n = h.dim();
    if x.len() != n || y.len() != n {
        return Err(LabError::Precondition(format!("endpoints must have dimension {n}")));
    }
    if !(t >= opts.t_min) {
        return Err(LabError::Precondition(format!(
            "time {t} is below t_min = {}",
            opts.t_min
        )));
    }
    let segs = segments_for(t, opts);
    let dt = t / segs as f64;
    let xa = DVector::from_column_slice(x);
    let ya = DVector::from_column_slice(y);
    let starts = if opts.multi_start { offsets(n) } else { vec![vec![0; n]] };
    let discrete: Vec<Result<DiscreteMinimum>> = starts
        .par_iter()
        .map(|k| {
            let bump = DVector::from_iterator(n, k.iter().map(|&v| 0.5 * v as f64));
            let nodes: Vec<DVector<f64>> = (0..=segs)
                .map(|j| {
                    let s = j as f64 / segs as f64;
                    &xa + s * (&ya - &xa) + (std::f64::consts::PI * s).sin() * &bump
                })
                .collect();
            minimize_discrete(h, nodes, dt, opts.tolerance)
        })
        .collect();
    let mut candidates: Vec<DiscreteMinimum> = discrete.into_iter().filter_map(|r| r.ok()).collect();
    if candidates.is_empty() {
        return Err(LabError::NoMinimizer {
            best_value: f64::NAN,
            best_gradient: f64::NAN,
        });
    }
    let best_discrete = candidates.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
    // only starts near the best discrete value are polished; distinct extremals
    // whose values differ by more than the discretization error cannot tie
    let window = 1e-3 * (1.0 + best_discrete.abs());
    candidates.retain(|c| c.value <= best_discrete + window);
    let mut distinct: Vec<DiscreteMinimum> = Vec::new();
    for c in candidates {
        let same = distinct
            .iter()
            .any(|d| d.nodes.iter().zip(&c.nodes).all(|(a, b)| (a - b).amax() < 1e-6));
        if !same {
            distinct.push(c);
        }
    }
    let polished: Vec<(usize, Result<(Shot, DVector<f64>, f64, usize)>)> = distinct
        .par_iter()
        .enumerate()
        .map(|(i, c)| (i, polish_candidate(h, x, y, t, c, segs, opts)))
        .collect();
    let mut results: Vec<ActionResult> = Vec::new();
    for (i, r) in polished {
        let c = &distinct[i];
        let times = |m: usize| -> Vec<f64> { (0..=m).map(|j| t * j as f64 / m as f64).collect() };
        let res = match r {
            Ok((shot, p, mismatch, m)) => ActionResult {
                value: shot.value,
                path: DiscretePath::new(times(m), shot.path)?,
                converged: true,
                gradient_norm: mismatch,
                initial_velocity: shot.velocity0,
                initial_momentum: p.iter().copied().collect(),
                tie: false,
            },
            Err(e) => {
                debug!("shooting failed from start {i}: {e}");
                let p0: Vec<f64> = c.momentum.iter().copied().collect();
                ActionResult {
                    value: c.value,
                    path: DiscretePath::new(
                        times(segs),
                        c.nodes.iter().map(|v| v.iter().copied().collect()).collect(),
                    )?,
                    converged: c.converged,
                    gradient_norm: c.residual,
                    initial_velocity: h.gradient(x, &p0).p.iter().copied().collect(),
                    initial_momentum: p0,
                    tie: false,
                }
            }
        };
        results.push(res);
    }
    let best = results.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let tie_tol = 1e-9 * (1.0 + best.abs());
    let mut tied: Vec<ActionResult> = results.into_iter().filter(|r| r.value <= best + tie_tol).collect();
    tied.sort_by(|a, b| {
        a.initial_velocity
            .iter()
            .zip(&b.initial_velocity)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let tie = tied.len() > 1
        && tied[1..].iter().any(|r| {
            r.initial_velocity
                .iter()
                .zip(&tied[0].initial_velocity)
                .any(|(a, b)| (a - b).abs() > 1e-6)
        });
    if tie {
        log::info!("equal-value minimizers from {x:?} to {y:?} in time {t}: conjugate points likely");
    }
    let mut chosen = tied.swap_remove(0);
    chosen.tie = tie;
    if !chosen.converged {
        return Err(LabError::NoMinimizer {
            best_value: chosen.value,
            best_gradient: chosen.gradient_norm,
        });
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleRecord {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`, non-negative up to tolerance.
    pub gap: f64,
    /// `|c(t) − y|` with `c` the extremal from `x` to `z` in time `t + t′`.
    pub witness_distance: f64,
    pub equality_witness: bool,
}

/// `A_{t+t′}(x, z) ≤ A_t(x, y) + A_{t′}(y, z)` with the equality-case witness.
pub fn check_triangle(
    h: &dyn Hamiltonian,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    t: f64,
    t2: f64,
    opts: &MinimizerOptions,
) -> Result<TriangleRecord> {
    let long = min_action(h, x, z, t + t2, opts)?;
    let a = min_action(h, x, y, t, opts)?;
    let b = min_action(h, y, z, t2, opts)?;
    let spec = IntegratorSpec::for_model(h, opts.step);
    let mut prop = Propagator::new(h, spec, x, &long.initial_momentum);
    prop.advance(t)?;
    let witness_distance = prop.x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rhs = a.value + b.value;
    Ok(TriangleRecord {
        lhs: long.value,
        rhs,
        gap: rhs - long.value,
        witness_distance,
        equality_witness: witness_distance < 1e-6,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// `min |F(v₁) − F(v₂)| / |v₁ − v₂|` over grid pairs.
    pub collision_proxy: f64,
    /// `min |det D_vF|` over the grid.
    pub min_abs_det: f64,
    /// Some `det D_vF ≤ 0`. The determinant starts at `t^n > 0` for small
    /// times, so this means it crossed zero: a conjugate point.
    pub det_crossed_zero: bool,
    pub determinants: Vec<f64>,
}

/// Probe `F(v) = π∘φ̃_t(x, v)` for injectivity and local invertibility.
pub fn exp_injectivity_probe(
    h: &dyn Hamiltonian,
    x: &[f64],
    t: f64,
    velocities: &[Vec<f64>],
    step: f64,
) -> Result<InjectivityReport> {
    let n = h.dim();
    if velocities.len() < 2 {
        return Err(LabError::Precondition("need at least two velocities".into()));
    }
    let spec = IntegratorSpec::for_model(h, step);
    let images: Vec<Result<(DVector<f64>, f64)>> = velocities
        .par_iter()
        .map(|v| {
            let p = momentum_for_velocity(h, x, v, None)?;
            let hpp = h.hessian(x, p.as_slice()).p_p;
            let mut frame = DMatrix::zeros(2 * n, n);
            for i in 0..n {
                frame[(n + i, i)] = 1.0;
            }
            let mut prop = Propagator::new(h, spec, x, p.as_slice()).with_frame(frame);
            prop.advance(t)?;
            let m12 = prop.frame.as_ref().expect("frame present").rows(0, n).into_owned();
            // D_vF = ∂x/∂p · ∂p/∂v = M₁₂ · H_pp⁻¹
            let det = m12.determinant() / hpp.determinant();
            Ok((prop.x.clone(), det))
        })
        .collect();
    let images: Vec<(DVector<f64>, f64)> = images.into_iter().collect::<Result<_>>()?;
    let mut collision = f64::INFINITY;
    for i in 0..velocities.len() {
        for j in i + 1..velocities.len() {
            let dv = velocities[i]
                .iter()
                .zip(&velocities[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dv > 0.0 {
                collision = collision.min((&images[i].0 - &images[j].0).norm() / dv);
            }
        }
    }
    let determinants: Vec<f64> = images.iter().map(|(_, d)| *d).collect();
    let min_abs_det = determinants.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    Ok(InjectivityReport {
        collision_proxy: collision,
        min_abs_det,
        det_crossed_zero: determinants.iter().any(|&d| d <= 0.0),
        determinants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Catalogue;

    #[test]
    fn trapezoid_on_straight_and_constant_paths() {
        let flat = Catalogue::Flat { n: 2 };
        let path = DiscretePath::sample(1.0, 100, |s| vec![s, 0.0]).unwrap();
        assert!((action_of_path(&flat, &path).unwrap() - 0.5).abs() < 1e-12);
        let pend = Catalogue::Pendulum;
        let rest = DiscretePath::sample(2.0, 10, |_| vec![0.2]).unwrap();
        let v = (2.0 * std::f64::consts::PI * 0.2).cos();
        assert!((action_of_path(&pend, &rest).unwrap() + 2.0 * v).abs() < 1e-12);
        assert_eq!(rest.homotopy, Some(vec![0]));
    }

    #[test]
    fn flat_minimizers_are_straight_lines() {
        let flat = Catalogue::Flat { n: 2 };
        let opts = MinimizerOptions::default();
        let r = min_action(&flat, &[0.0, 0.0], &[0.5, 0.0], 1.0, &opts).unwrap();
        assert!((r.value - 0.125).abs() < 1e-10);
        assert!(r.converged && !r.tie);
        assert!((r.initial_velocity[0] - 0.5).abs() < 1e-10);
        let z = min_action(&flat, &[0.3, 0.1], &[0.3, 0.1], 0.7, &opts).unwrap();
        assert!(z.value.abs() < 1e-12);
    }

    #[test]
    fn lifted_action_is_deck_invariant() {
        let h = Catalogue::Shear {
            c: vec![0.2],
            amplitude: 0.3,
        };
        let opts = MinimizerOptions::default();
        let a = min_action(&h, &[0.1], &[0.8], 1.0, &opts).unwrap();
        let b = min_action(&h, &[2.1], &[2.8], 1.0, &opts).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn pendulum_conjugate_point_flips_the_determinant() {
        let h = Catalogue::Pendulum;
        let grid: Vec<Vec<f64>> = (0..21).map(|k| vec![-0.2 + 0.02 * k as f64]).collect();
        let r = exp_injectivity_probe(&h, &[0.5], 0.6, &grid, 1e-3).unwrap();
        assert!(r.det_crossed_zero);
        assert!(
            !exp_injectivity_probe(&h, &[0.5], 0.4, &grid, 1e-3)
                .unwrap()
                .det_crossed_zero
        );
        let flat = Catalogue::Flat { n: 1 };
        let r = exp_injectivity_probe(&flat, &[0.5], 0.6, &grid, 1e-3).unwrap();
        assert!((r.min_abs_det - 0.6).abs() < 1e-12);
        assert!((r.collision_proxy - 0.6).abs() < 1e-9);
    }
}
