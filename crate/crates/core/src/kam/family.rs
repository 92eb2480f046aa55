use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::invariance::FourierCoeff;
use super::normal_form::NormalFormData;
use super::{extract_twist, solve_invariance, DiophantineVector, InvarianceOptions, RescaledMap, TorusEmbedding};
use crate::error::{LabError, Result};
use crate::fourier::{Grid, Trig};
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};
use crate::periodic::PeriodicTorusData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyOptions {
    /// Fourier grid per axis; `None` picks 128 for n = 1, 64 for n = 2, 16 for n = 3.
    pub grid_size: Option<usize>,
    /// Integrator step for `U_m`; `None` uses one step per period for
    /// angle-independent models (where the splitting is exact) and the torus
    /// step otherwise.
    pub step: Option<f64>,
    pub invariance: InvarianceOptions,
    /// Largest `|k|` of the Fourier coefficients kept in the report.
    pub keep_coeffs: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            grid_size: None,
            step: None,
            invariance: InvarianceOptions::default(),
            keep_coeffs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub m: usize,
    /// Newton residual history of `U_m(ρ(η)) = ρ(η + ω̄)`.
    pub history: Vec<f64>,
    pub residual: f64,
    pub quadratic_constant: Option<f64>,
    /// `sup dist(φ_t(i_m(η)), i_m(T^n))` for `t = T/2` and `t = T`.
    pub flow_invariance: [f64; 2],
    /// Measured pullback field `i_m^* X_H`, averaged over the grid.
    pub rotation: Vec<f64>,
    /// `sup |i_m^* X_H − r/T − ω̄/(mT)|`
    pub rotation_error: f64,
    /// `sup_η |p(i_m(η)) − P(θ(i_m(η)))|`
    pub c0_distance: f64,
    pub lagrangian_defect: f64,
    pub tail_ratio: f64,
    /// Embedding of `ρ_m` in the rescaled coordinates.
    pub embedding: TorusEmbedding,
    pub fourier_coeffs: Vec<FourierCoeff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFailure {
    pub m: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceFit {
    /// Least-squares `c` in `d ≈ c/m`.
    pub c: f64,
    /// `max |m·d/c − 1|`
    pub max_relative_deviation: f64,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub normal_form: NormalFormData,
    pub omega: DiophantineVector,
    pub members: Vec<FamilyMember>,
    pub failures: Vec<FamilyFailure>,
    /// Smallest `m` from which every larger `m` of the sweep converged.
    pub m0: Option<usize>,
    pub fit: Option<DistanceFit>,
}

fn default_grid(n: usize) -> usize {
    match n {
        1 => 128,
        2 => 64,
        _ => 16,
    }
}

/// Quasi-periodic tori `i_m` with rotation `r/T + ω̄/(mT)` accumulating on the
/// periodic torus, one Newton solve of `U_m = Φ_{1/m}^m` per `m`.
pub fn torus_family(
    h: &dyn Hamiltonian,
    torus: &PeriodicTorusData,
    omega: &DiophantineVector,
    ms: &[usize],
    opts: &FamilyOptions,
) -> Result<FamilyReport> {
    let n = torus.dim();
    if omega.dim() != n {
        return Err(LabError::Precondition("ω̄ has the wrong dimension".into()));
    }
    let normal_form = extract_twist(h, torus)?;
    let a_bar = normal_form.a_bar_matrix();
    if !normal_form.is_positive_definite() {
        return Err(LabError::HypothesisViolated(
            "averaged twist Ā is not positive definite".into(),
        ));
    }
    let base = a_bar
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(&omega.omega))
        .ok_or_else(|| LabError::HypothesisViolated("Ā is singular".into()))?;
    let grid = Grid::new(n, opts.grid_size.unwrap_or_else(|| default_grid(n)));
    let step = opts.step.unwrap_or(if h.is_angle_independent() {
        torus.period
    } else {
        torus.step
    });
    let seed = TorusEmbedding::flat(grid, base.as_slice());
    let outcomes: Vec<(usize, Result<FamilyMember>)> = ms
        .par_iter()
        .map(|&m| (m, family_member(h, torus, omega, &seed, m, step, opts)))
        .collect();
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (m, out) in outcomes {
        match out {
            Ok(member) => members.push(member),
            Err(e) => failures.push(FamilyFailure {
                m,
                error: e.to_string(),
            }),
        }
    }
    let m0 = ms
        .iter()
        .copied()
        .filter(|m| failures.iter().all(|f| f.m < *m))
        .min()
        .filter(|m| members.iter().any(|x| x.m == *m));
    let fit = if members.len() >= 2 {
        let num: f64 = members.iter().map(|x| x.c0_distance / x.m as f64).sum();
        let den: f64 = members.iter().map(|x| 1.0 / (x.m as f64).powi(2)).sum();
        let c = num / den;
        let max_relative_deviation = members
            .iter()
            .map(|x| (x.m as f64 * x.c0_distance / c - 1.0).abs())
            .fold(0.0, f64::max);
        let mut sorted: Vec<&FamilyMember> = members.iter().collect();
        sorted.sort_by_key(|x| x.m);
        let monotone = sorted.windows(2).all(|w| w[1].c0_distance < w[0].c0_distance);
        Some(DistanceFit {
            c,
            max_relative_deviation,
            monotone,
        })
    } else {
        None
    };
    Ok(FamilyReport {
        normal_form,
        omega: omega.clone(),
        members,
        failures,
        m0,
        fit,
    })
}

fn family_member(
    h: &dyn Hamiltonian,
    torus: &PeriodicTorusData,
    omega: &DiophantineVector,
    seed: &TorusEmbedding,
    m: usize,
    step: f64,
    opts: &FamilyOptions,
) -> Result<FamilyMember> {
    if m == 0 {
        return Err(LabError::Precondition("m must be positive".into()));
    }
    let eps = 1.0 / m as f64;
    let map = RescaledMap::new(h, torus, eps, m)?.with_step(step);
    let solved = solve_invariance(&map, omega, seed, &opts.invariance)?;
    let emb = &solved.embedding;
    let n = emb.dim();
    let grid = emb.grid;
    let section = torus.momentum_interpolants();
    let dsection: Vec<Vec<Trig>> = section
        .iter()
        .map(|f| (0..n).map(|j| f.derivative(j)).collect())
        .collect();
    let u_trig: Vec<Trig> = emb.u.iter().map(|c| Trig::from_samples(grid, c)).collect();
    let v_trig: Vec<Trig> = emb.v.iter().map(|c| Trig::from_samples(grid, c)).collect();
    let lift = |theta: &[f64], action: &[f64]| -> Vec<f64> {
        section
            .iter()
            .zip(action)
            .map(|(f, a)| f.eval(theta) + eps * a)
            .collect()
    };
    let spec = IntegratorSpec::for_model(h, step);

    let mut flow_invariance = [0.0f64; 2];
    for (slot, t) in [0.5 * torus.period, torus.period].into_iter().enumerate() {
        for idx in 0..grid.len() {
            let (theta, action) = emb.node(idx);
            let p = lift(&theta, &action);
            let mut prop = Propagator::new(h, spec, &theta, &p);
            prop.advance(t)?;
            let x = prop.x.as_slice();
            // solve η′ + u(η′) = x′ on the lift
            let mut eta: Vec<f64> = x.to_vec();
            for _ in 0..100 {
                let next: Vec<f64> = (0..n).map(|i| x[i] - u_trig[i].eval(&eta)).collect();
                let change = next.iter().zip(&eta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                eta = next;
                if change < 1e-15 {
                    break;
                }
            }
            let act: Vec<f64> = (0..n).map(|i| emb.base[i] + v_trig[i].eval(&eta)).collect();
            let p_expected = lift(x, &act);
            let angle_gap = (0..n)
                .map(|i| (eta[i] + u_trig[i].eval(&eta) - x[i]).abs())
                .fold(0.0, f64::max);
            let gap = prop
                .p
                .iter()
                .zip(&p_expected)
                .map(|(a, b)| (a - b).abs())
                .fold(angle_gap, f64::max);
            flow_invariance[slot] = flow_invariance[slot].max(gap);
        }
    }

    // pullback of X_H by least squares against the embedding's tangent
    let expected: Vec<f64> = (0..n)
        .map(|i| (torus.r[i] as f64 + omega.omega[i] * eps) / torus.period)
        .collect();
    let tangent = emb.tangent();
    let mut rotation = vec![0.0; n];
    let mut rotation_error: f64 = 0.0;
    for (idx, l) in tangent.iter().enumerate() {
        let (theta, action) = emb.node(idx);
        let p = lift(&theta, &action);
        let dtheta = l.rows(0, n).into_owned();
        let dp_dtheta = DMatrix::from_fn(n, n, |i, j| dsection[i][j].eval(&theta));
        let dp = &dp_dtheta * &dtheta + l.rows(n, n) * eps;
        let mut di = DMatrix::zeros(2 * n, n);
        di.view_mut((0, 0), (n, n)).copy_from(&dtheta);
        di.view_mut((n, 0), (n, n)).copy_from(&dp);
        let g = h.gradient(&theta, &p);
        let xh = DVector::from_iterator(2 * n, g.p.iter().copied().chain(g.theta.iter().map(|v| -v)));
        let y = (di.transpose() * &di)
            .lu()
            .solve(&(di.transpose() * xh))
            .ok_or_else(|| LabError::Precondition("embedding tangent is degenerate".into()))?;
        for i in 0..n {
            rotation[i] += y[i] / grid.len() as f64;
            rotation_error = rotation_error.max((y[i] - expected[i]).abs());
        }
    }

    let c0_distance = (0..grid.len())
        .map(|idx| {
            let (_, action) = emb.node(idx);
            eps * action.iter().map(|a| a * a).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);

    Ok(FamilyMember {
        m,
        residual: solved.residual(),
        history: solved.history.clone(),
        quadratic_constant: solved.quadratic_constant,
        flow_invariance,
        rotation,
        rotation_error,
        c0_distance,
        lagrangian_defect: solved.lagrangian_defect,
        tail_ratio: solved.tail_ratio,
        fourier_coeffs: emb.fourier_coeffs(opts.keep_coeffs),
        embedding: solved.embedding,
    })
}
