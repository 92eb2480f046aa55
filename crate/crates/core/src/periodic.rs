//! Totally periodic tori `Γ_{T,r}`: the graph of momenta whose orbits are
//! `T`-periodic loops in the class `r`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::action::{min_action, MinimizerOptions};
use crate::error::{LabError, Result};
use crate::fourier::{spectral_gradient, Grid, Trig};
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};
use crate::legendre::momentum_for_velocity;
use crate::state::reduce_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorusOptions {
    /// Coarse step; orbits are re-solved at half this step and actions are
    /// extrapolated from the pair.
    pub step: f64,
    pub newton_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for TorusOptions {
    fn default() -> Self {
        TorusOptions {
            step: 1e-3,
            newton_tolerance: 1e-12,
            max_iterations: 30,
        }
    }
}

impl TorusOptions {
    pub fn fine_spec(&self, h: &dyn Hamiltonian) -> IntegratorSpec {
        IntegratorSpec::for_model(h, 0.5 * self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusDiagnostics {
    /// `sup |π∘φ̃_T(x, P(x)) − x − r|`
    pub closure_residual: f64,
    /// `max f − min f` for the per-orbit action `f`.
    pub action_spread: f64,
    /// `sup |∂_j P_i − ∂_i P_j|`
    pub lagrangian_defect: f64,
    /// `sup |p(T) − P(x)|`; with the closure residual this is `φ_T`-fixedness.
    pub fixedness: f64,
    /// `sup dist(φ_t(x, P(x)), graph P)` at `t = T/4` and `t = T/2`.
    pub invariance_quarter: f64,
    pub invariance_half: f64,
    /// Every orbit winds exactly `r` times.
    pub winding_matches: bool,
    /// Spectral energy of `P` beyond a quarter of the grid.
    pub tail_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicTorusData {
    pub period: f64,
    /// Integrator step of the orbits the torus is made of.
    pub step: f64,
    pub r: Vec<i64>,
    pub grid: Grid,
    /// `X(x) = ∂_p H(x, P(x))` per grid node.
    pub velocity: Vec<Vec<f64>>,
    /// `P(x)` per grid node.
    pub momentum: Vec<Vec<f64>>,
    /// `f(x)`: action of the orbit through each node.
    pub actions: Vec<f64>,
    pub action_per_orbit: f64,
    pub diagnostics: TorusDiagnostics,
}

impl PeriodicTorusData {
    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Interpolants of the momentum components.
    pub fn momentum_interpolants(&self) -> Vec<Trig> {
        (0..self.dim())
            .map(|i| {
                let comp: Vec<f64> = self.momentum.iter().map(|p| p[i]).collect();
                Trig::from_samples(self.grid, &comp)
            })
            .collect()
    }

    /// `P` at an arbitrary point of the torus.
    pub fn momentum_at(&self, theta: &[f64]) -> Vec<f64> {
        self.momentum_interpolants().iter().map(|f| f.eval(theta)).collect()
    }
}

struct NodeSolution {
    p: DVector<f64>,
    closure: f64,
    end_p: DVector<f64>,
    action: f64,
    winding: Vec<i64>,
    dt: f64,
}

/// Solve `π∘φ̃_T(x, p) = x + r` by Newton in `p`.
fn solve_node(
    h: &dyn Hamiltonian,
    spec: &IntegratorSpec,
    x: &[f64],
    r: &[i64],
    period: f64,
    seed: DVector<f64>,
    opts: &TorusOptions,
) -> Result<NodeSolution> {
    let n = h.dim();
    let target = DVector::from_iterator(n, x.iter().zip(r).map(|(a, k)| a + *k as f64));
    let mut steps = spec.steps_for(period);
    if steps % 2 == 1 {
        steps += 1;
    }
    let dt = period / steps as f64;
    let run = |p: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>, f64)> {
        let mut frame = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            frame[(n + i, i)] = 1.0;
        }
        let mut prop = Propagator::new(h, *spec, x, p.as_slice()).with_frame(frame);
        let lag = |prop: &Propagator| {
            let g = h.gradient(prop.x.as_slice(), prop.p.as_slice());
            prop.p.dot(&g.p) - h.energy(prop.x.as_slice(), prop.p.as_slice())
        };
        let mut simpson = lag(&prop);
        for k in 1..=steps {
            prop.step(dt)?;
            let w = if k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            simpson += w * lag(&prop);
        }
        let m12 = prop.frame.as_ref().expect("frame present").rows(0, n).into_owned();
        Ok((prop.x.clone(), prop.p.clone(), m12, simpson * dt / 3.0))
    };
    let mut p = seed;
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let (end, end_p, m12, action) = run(&p)?;
        let f = &end - &target;
        residual = f.amax();
        if residual < opts.newton_tolerance {
            let winding = end.iter().zip(x).map(|(e, a)| (e - a).round() as i64).collect();
            return Ok(NodeSolution {
                p,
                closure: residual,
                end_p,
                action,
                winding,
                dt,
            });
        }
        let delta = m12.lu().solve(&f).ok_or_else(|| LabError::NewtonFailure {
            context: "closure Newton (singular ∂x/∂p)".into(),
            residual,
            iterations: 0,
        })?;
        // cap the step; a large jump usually lands on another branch
        let cap = 0.5 * (1.0 + p.amax());
        let scale = (cap / delta.amax().max(1e-300)).min(1.0);
        p -= scale * delta;
    }
    Err(LabError::NewtonFailure {
        context: "closure Newton".into(),
        residual,
        iterations: opts.max_iterations,
    })
}

/// Seed index for continuation: the row-major predecessor along the last axis
/// that varies, i.e. a grid neighbour.
fn neighbour(grid: &Grid, idx: usize) -> Option<usize> {
    let mut m = grid.multi_index(idx);
    for d in (0..grid.dim).rev() {
        if m[d] > 0 {
            m[d] -= 1;
            return Some(grid.flat_index(&m));
        }
    }
    None
}

/// Build `Γ_{T,r}` on a regular grid by Newton continuation.
pub fn build_torus(
    h: &dyn Hamiltonian,
    period: f64,
    r: &[i64],
    grid_size: usize,
    opts: &TorusOptions,
) -> Result<PeriodicTorusData> {
    let n = h.dim();
    if r.len() != n {
        return Err(LabError::Precondition(format!("class r must have {n} entries")));
    }
    if !(period > 0.0) {
        return Err(LabError::Precondition("period must be positive".into()));
    }
    if grid_size < 8 {
        return Err(LabError::Precondition(
            "grid must have at least 8 points per axis".into(),
        ));
    }
    let grid = Grid::new(n, grid_size);
    let coarse = IntegratorSpec::for_model(h, opts.step);
    let fine = opts.fine_spec(h);
    let v0: Vec<f64> = r.iter().map(|&k| k as f64 / period).collect();
    let mut solutions: Vec<NodeSolution> = Vec::with_capacity(grid.len());
    let mut coarse_actions = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let seed = match neighbour(&grid, idx) {
            Some(j) => solutions[j].p.clone(),
            None => momentum_for_velocity(h, &x, &v0, None)?,
        };
        let fail = |e: LabError| LabError::TorusConstruction {
            node: idx,
            reason: e.to_string(),
        };
        let c = solve_node(h, &coarse, &x, r, period, seed, opts).map_err(fail)?;
        coarse_actions.push((c.action, c.dt));
        let f = solve_node(h, &fine, &x, r, period, c.p, opts).map_err(fail)?;
        solutions.push(f);
    }
    // Richardson: both schemes are symmetric, so the error expands in h²
    let actions: Vec<f64> = solutions
        .iter()
        .zip(&coarse_actions)
        .map(|(f, (ca, cdt))| {
            let (hc, hf) = (cdt * cdt, f.dt * f.dt);
            f.action + (f.action - ca) * hf / (hc - hf)
        })
        .collect();
    let momentum: Vec<Vec<f64>> = solutions.iter().map(|s| s.p.iter().copied().collect()).collect();
    let velocity: Vec<Vec<f64>> = grid
        .points()
        .iter()
        .zip(&momentum)
        .map(|(x, p)| h.gradient(x, p).p.iter().copied().collect())
        .collect();
    let closure_residual = solutions.iter().map(|s| s.closure).fold(0.0, f64::max);
    let fixedness = solutions.iter().map(|s| (&s.end_p - &s.p).amax()).fold(0.0, f64::max);
    let winding_matches = solutions.iter().all(|s| s.winding == r);
    let amax = actions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let amin = actions.iter().copied().fold(f64::INFINITY, f64::min);
    let action_per_orbit = actions.iter().sum::<f64>() / actions.len() as f64;

    let mut data = PeriodicTorusData {
        period,
        step: fine.step,
        r: r.to_vec(),
        grid,
        velocity,
        momentum,
        actions,
        action_per_orbit,
        diagnostics: TorusDiagnostics {
            closure_residual,
            action_spread: amax - amin,
            lagrangian_defect: 0.0,
            fixedness,
            invariance_quarter: 0.0,
            invariance_half: 0.0,
            winding_matches,
            tail_ratio: 0.0,
        },
    };
    data.diagnostics.lagrangian_defect = lagrangian_defect(&data);
    data.diagnostics.tail_ratio = data
        .momentum_interpolants()
        .iter()
        .map(|f| f.tail_ratio())
        .fold(0.0, f64::max);
    data.diagnostics.invariance_quarter = invariance_defect(h, &data, 0.25 * period, &fine)?;
    data.diagnostics.invariance_half = invariance_defect(h, &data, 0.5 * period, &fine)?;
    Ok(data)
}

/// `sup |∂_j P_i − ∂_i P_j|` by spectral differentiation.
pub fn lagrangian_defect(data: &PeriodicTorusData) -> f64 {
    let n = data.dim();
    let grads: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| {
            let comp: Vec<f64> = data.momentum.iter().map(|p| p[i]).collect();
            spectral_gradient(data.grid, &comp)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            for k in 0..data.grid.len() {
                worst = worst.max((grads[i][j][k] - grads[j][i][k]).abs());
            }
        }
    }
    worst
}

/// `sup_x |p_t − P(θ_t)|` along `φ_t(x, P(x))`.
pub fn invariance_defect(h: &dyn Hamiltonian, data: &PeriodicTorusData, t: f64, spec: &IntegratorSpec) -> Result<f64> {
    let interp = data.momentum_interpolants();
    let mut worst: f64 = 0.0;
    for (x, p) in data.grid.points().iter().zip(&data.momentum) {
        let mut prop = Propagator::new(h, *spec, x, p);
        prop.advance(t)?;
        let theta: Vec<f64> = prop.x.iter().map(|&v| reduce_angle(v).0).collect();
        for (i, f) in interp.iter().enumerate() {
            worst = worst.max((prop.p[i] - f.eval(&theta)).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProfile {
    pub grid: Grid,
    /// `f(x) = A_T(x, x + r)`; `None` where the minimizer failed.
    pub values: Vec<Option<f64>>,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    pub spread: f64,
    pub failed_nodes: usize,
}

/// Sample `f(x) = A_T(x, x + r)` on a grid.
pub fn period_action_profile(
    h: &dyn Hamiltonian,
    period: f64,
    r: &[i64],
    grid_size: usize,
    opts: &MinimizerOptions,
) -> Result<ActionProfile> {
    let n = h.dim();
    if grid_size < 8 {
        return Err(LabError::Precondition(
            "grid must have at least 8 points per axis".into(),
        ));
    }
    let grid = Grid::new(n, grid_size);
    let values: Vec<Option<f64>> = grid
        .points()
        .iter()
        .map(|x| {
            let y: Vec<f64> = x.iter().zip(r).map(|(a, k)| a + *k as f64).collect();
            min_action(h, x, &y, period, opts).ok().map(|res| res.value)
        })
        .collect();
    let ok: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if ok.is_empty() {
        return Err(LabError::NoMinimizer {
            best_value: f64::NAN,
            best_gradient: f64::NAN,
        });
    }
    let (imin, vmin) = ok
        .iter()
        .copied()
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let (imax, vmax) = ok
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Ok(ActionProfile {
        grid,
        failed_nodes: values.len() - ok.len(),
        values,
        argmin: grid.point(imin),
        argmax: grid.point(imax),
        spread: vmax - vmin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroClassReport {
    pub torus: PeriodicTorusData,
    /// `sup |X|`, i.e. `sup |∂_p H(x, P(x))|`.
    pub max_velocity: f64,
}

/// `Γ_{T,0}` and the check that it is the graph of fiberwise critical points.
pub fn zero_class_check(
    h: &dyn Hamiltonian,
    period: f64,
    grid_size: usize,
    opts: &TorusOptions,
) -> Result<ZeroClassReport> {
    let torus = build_torus(h, period, &vec![0; h.dim()], grid_size, opts)?;
    let max_velocity = torus
        .velocity
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    Ok(ZeroClassReport { torus, max_velocity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohomologyClass {
    pub c: Vec<f64>,
    pub closedness_defect: f64,
    pub warning: Option<String>,
}

/// Cohomology class of the section `P`: its grid average.
pub fn cohomology_class_of(data: &PeriodicTorusData, tolerance: f64) -> CohomologyClass {
    let n = data.dim();
    let c: Vec<f64> = (0..n)
        .map(|i| data.momentum.iter().map(|p| p[i]).sum::<f64>() / data.grid.len() as f64)
        .collect();
    let closedness_defect = lagrangian_defect(data);
    let warning = (closedness_defect > tolerance)
        .then(|| format!("section is not closed: defect {closedness_defect:.3e} > {tolerance:.1e}"));
    CohomologyClass {
        c,
        closedness_defect,
        warning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Catalogue;

    #[test]
    fn flat_torus_is_constant() {
        let h = Catalogue::Flat { n: 2 };
        let t = build_torus(&h, 2.0, &[1, 0], 8, &TorusOptions::default()).unwrap();
        for (p, v) in t.momentum.iter().zip(&t.velocity) {
            assert!((p[0] - 0.5).abs() < 1e-12 && p[1].abs() < 1e-12);
            assert!((v[0] - 0.5).abs() < 1e-12);
        }
        assert!((t.action_per_orbit - 0.25).abs() < 1e-12);
        assert!(t.diagnostics.winding_matches);
        let c = cohomology_class_of(&t, 1e-6);
        assert!((c.c[0] - 0.5).abs() < 1e-12 && c.warning.is_none());
    }

    #[test]
    fn continuation_visits_neighbours() {
        let g = Grid::new(2, 4);
        assert_eq!(neighbour(&g, 0), None);
        assert_eq!(neighbour(&g, 1), Some(0));
        assert_eq!(neighbour(&g, 4), Some(0));
        assert_eq!(neighbour(&g, 5), Some(4));
    }
}
