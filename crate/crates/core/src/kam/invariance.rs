use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DiophantineVector, TorusMap};
use crate::error::{LabError, Result};
use crate::fourier::{forward, solve_cohomological, Grid, Trig};

/// `η ↦ (η + u(η), I₀ + v(η))`, stored as grid samples of `u` and `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusEmbedding {
    pub grid: Grid,
    /// `u[i]` holds the samples of the `i`-th component.
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub base: Vec<f64>,
}

impl TorusEmbedding {
    /// The flat torus `η ↦ (η, I₀)`.
    pub fn flat(grid: Grid, base: &[f64]) -> Self {
        TorusEmbedding {
            grid,
            u: vec![vec![0.0; grid.len()]; grid.dim],
            v: vec![vec![0.0; grid.len()]; grid.dim],
            base: base.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Point of the embedding at grid node `idx`, angle on the lift.
    pub fn node(&self, idx: usize) -> (Vec<f64>, Vec<f64>) {
        let eta = self.grid.point(idx);
        let theta = (0..self.dim()).map(|i| eta[i] + self.u[i][idx]).collect();
        let action = (0..self.dim()).map(|i| self.base[i] + self.v[i][idx]).collect();
        (theta, action)
    }

    /// Point of the embedding at an arbitrary `η`.
    pub fn eval(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let theta = (0..self.dim())
            .map(|i| eta[i] + Trig::from_samples(self.grid, &self.u[i]).eval(eta))
            .collect();
        let action = (0..self.dim())
            .map(|i| self.base[i] + Trig::from_samples(self.grid, &self.v[i]).eval(eta))
            .collect();
        (theta, action)
    }

    /// Samples of `η ↦ K(η + shift) − (η, 0)`, i.e. `(shift + u(η+shift), I₀ + v(η+shift))`.
    fn shifted(&self, shift: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.dim();
        let u = (0..n)
            .map(|i| {
                Trig::from_samples(self.grid, &self.u[i])
                    .shifted_samples(shift)
                    .into_iter()
                    .map(|x| x + shift[i])
                    .collect()
            })
            .collect();
        let v = (0..n)
            .map(|i| {
                Trig::from_samples(self.grid, &self.v[i])
                    .shifted_samples(shift)
                    .into_iter()
                    .map(|x| x + self.base[i])
                    .collect()
            })
            .collect();
        (u, v)
    }

    /// `DK(η)` at every node, `2n × n`.
    pub fn tangent(&self) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        let du: Vec<Vec<Trig>> = (0..n)
            .map(|i| {
                let f = Trig::from_samples(self.grid, &self.u[i]);
                (0..n).map(|j| f.derivative(j)).collect()
            })
            .collect();
        let dv: Vec<Vec<Trig>> = (0..n)
            .map(|i| {
                let f = Trig::from_samples(self.grid, &self.v[i]);
                (0..n).map(|j| f.derivative(j)).collect()
            })
            .collect();
        let du: Vec<Vec<Vec<f64>>> = du.iter().map(|r| r.iter().map(|t| t.samples()).collect()).collect();
        let dv: Vec<Vec<Vec<f64>>> = dv.iter().map(|r| r.iter().map(|t| t.samples()).collect()).collect();
        (0..self.grid.len())
            .map(|idx| {
                DMatrix::from_fn(2 * n, n, |r, c| {
                    if r < n {
                        du[r][c][idx] + if r == c { 1.0 } else { 0.0 }
                    } else {
                        dv[r - n][c][idx]
                    }
                })
            })
            .collect()
    }

    /// Fraction of the spectral energy of `u` and `I₀ + v` in modes `max|k| > N/4`.
    pub fn tail_ratio(&self) -> f64 {
        let cut = (self.grid.size / 4) as i64;
        let len = self.grid.len() as f64;
        let mut total: f64 = self.base.iter().map(|b| (b * len).powi(2)).sum();
        let mut tail = 0.0;
        for comp in self.u.iter().chain(&self.v) {
            for (idx, c) in forward(&self.grid, comp).iter().enumerate() {
                let e = c.norm_sqr();
                total += e;
                if self.grid.modes(idx).iter().any(|k| k.abs() > cut) {
                    tail += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// `sup |(I + Du)ᵀ Dv − Dvᵀ (I + Du)|`, zero for a Lagrangian embedding.
    pub fn lagrangian_defect(&self) -> f64 {
        let n = self.dim();
        self.tangent()
            .iter()
            .map(|l| {
                let a = l.rows(0, n);
                let b = l.rows(n, n);
                let w = a.transpose() * b;
                (&w - w.transpose()).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Leading Fourier coefficients `(mode, û, v̂)` with `max|k| ≤ keep`,
    /// normalised so that a pure `cos 2πkη` has coefficient 1/2.
    pub fn fourier_coeffs(&self, keep: usize) -> Vec<FourierCoeff> {
        let n = self.dim();
        let len = self.grid.len() as f64;
        let cu: Vec<Vec<Complex64>> = self.u.iter().map(|c| forward(&self.grid, c)).collect();
        let cv: Vec<Vec<Complex64>> = self.v.iter().map(|c| forward(&self.grid, c)).collect();
        let mut out = Vec::new();
        for idx in 0..self.grid.len() {
            let mode = self.grid.modes(idx);
            if mode.iter().any(|k| k.unsigned_abs() as usize > keep) {
                continue;
            }
            out.push(FourierCoeff {
                mode,
                u: (0..n).map(|i| [cu[i][idx].re / len, cu[i][idx].im / len]).collect(),
                v: (0..n).map(|i| [cv[i][idx].re / len, cv[i][idx].im / len]).collect(),
            });
        }
        out
    }

    /// Reparametrise by `η ↦ η + s` so that `mean(u) = 0`, and move the mean
    /// of `v` into `I₀`.
    fn normalize(&mut self) {
        let n = self.dim();
        let shift: Vec<f64> = self.u.iter().map(|c| -c.iter().sum::<f64>() / c.len() as f64).collect();
        let (u, v) = self.shifted(&shift);
        // u(η + s) + s has mean zero by the choice of s
        self.u = u;
        for i in 0..n {
            let mean = v[i].iter().sum::<f64>() / v[i].len() as f64;
            self.base[i] = mean;
            self.v[i] = v[i].iter().map(|x| x - mean).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierCoeff {
    pub mode: Vec<i64>,
    pub u: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
}

/// The integrable twist `(θ, I) ↦ (θ + ĀI, I)`.
pub struct TwistMap {
    pub a: DMatrix<f64>,
}

impl TorusMap for TwistMap {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let t = (0..n)
            .map(|i| theta[i] + (0..n).map(|j| self.a[(i, j)] * action[j]).sum::<f64>())
            .collect();
        Ok((t, action.to_vec()))
    }

    fn eval_with_jacobian(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let (t, a) = self.eval(theta, action)?;
        let mut jac = DMatrix::identity(2 * n, 2 * n);
        jac.view_mut((0, n), (n, n)).copy_from(&self.a);
        Ok((t, a, jac))
    }
}

/// The standard family `I′ = I + (κ/2π) sin 2πθ`, `θ′ = θ + I′`.
pub struct StandardMap {
    pub kappa: f64,
}

impl TorusMap for StandardMap {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let i2 = action[0] + self.kappa / (2.0 * PI) * (2.0 * PI * theta[0]).sin();
        Ok((vec![theta[0] + i2], vec![i2]))
    }

    fn eval_with_jacobian(&self, theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
        let (t, a) = self.eval(theta, action)?;
        let k = self.kappa * (2.0 * PI * theta[0]).cos();
        let jac = DMatrix::from_row_slice(2, 2, &[1.0 + k, 1.0, k, 1.0]);
        Ok((t, a, jac))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub min_divisor: f64,
    /// Largest seed residual accepted.
    pub basin: f64,
    pub tail_tolerance: f64,
}

impl Default for InvarianceOptions {
    fn default() -> Self {
        InvarianceOptions {
            tolerance: 1e-10,
            max_iterations: 20,
            min_divisor: 1e-14,
            basin: 1.0,
            tail_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResult {
    pub embedding: TorusEmbedding,
    /// `sup |E|` before each Newton step and after the last.
    pub history: Vec<f64>,
    /// `max r_{k+1}/r_k²` over the steps with `r_k > 1e-8`.
    pub quadratic_constant: Option<f64>,
    pub lagrangian_defect: f64,
    pub tail_ratio: f64,
}

impl InvarianceResult {
    pub fn residual(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }

    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

/// `E(η) = U(K(η)) − K(η + ω)` at every node, angle rows first.
pub fn invariance_error(map: &dyn TorusMap, k: &TorusEmbedding, omega: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = k.dim();
    let (us, vs) = k.shifted(omega);
    (0..k.grid.len())
        .map(|idx| {
            let (theta, action) = k.node(idx);
            let (t2, a2) = map.eval(&theta, &action)?;
            let eta = k.grid.point(idx);
            Ok((0..n)
                .map(|i| t2[i] - eta[i] - us[i][idx])
                .chain((0..n).map(|i| a2[i] - vs[i][idx]))
                .collect())
        })
        .collect()
}

fn sup(err: &[Vec<f64>]) -> f64 {
    err.iter()
        .flatten()
        .fold(0.0, |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e.abs()) })
}

/// Parameterization-method Newton solve of `U(K(η)) = K(η + ω)` for an exact
/// symplectic twist map `U`, with `ω` fixed and `I₀` free.
pub fn solve_invariance(
    map: &dyn TorusMap,
    omega: &DiophantineVector,
    seed: &TorusEmbedding,
    opts: &InvarianceOptions,
) -> Result<InvarianceResult> {
    let n = seed.dim();
    let grid = seed.grid;
    if map.dim() != n || omega.dim() != n {
        return Err(LabError::Precondition(
            "dimension mismatch between map, ω̄ and seed".into(),
        ));
    }
    // resolved modes have max|k| ≤ N/2, hence |k|₁ ≤ n·N/2
    if omega.verified_up_to < n * grid.size / 2 {
        return Err(LabError::Precondition(format!(
            "ω̄ is certified up to |k|₁ = {} but the grid resolves |k|₁ = {}",
            omega.verified_up_to,
            n * grid.size / 2
        )));
    }
    let w = &omega.omega;
    let mut k = seed.clone();
    let mut err = invariance_error(map, &k, w)?;
    let mut history = vec![sup(&err)];
    if !(history[0] <= opts.basin) {
        return Err(LabError::Precondition(format!(
            "seed residual {:.3e} is outside the basin {:.1e}",
            history[0], opts.basin
        )));
    }
    let nonconv = |history: &Vec<f64>| LabError::NonConvergence {
        history: history.clone(),
    };
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    let j_inv = -&j;
    while history.last().unwrap() >= &opts.tolerance {
        if history.len() > opts.max_iterations {
            return Err(nonconv(&history));
        }
        // adapted frame M = [L, J⁻¹LN] along K and along K(· + ω)
        let tangent = k.tangent();
        let frames: Vec<DMatrix<f64>> = tangent
            .iter()
            .map(|l| {
                let nrm = (l.transpose() * l).try_inverse().expect("tangent has full rank");
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                m.view_mut((0, 0), (2 * n, n)).copy_from(l);
                m.view_mut((0, n), (2 * n, n)).copy_from(&(&j_inv * l * nrm));
                m
            })
            .collect();
        let shifted_frames: Vec<DMatrix<f64>> = {
            let entries: Vec<Vec<f64>> = (0..4 * n * n)
                .map(|e| {
                    let samples: Vec<f64> = frames.iter().map(|m| m.as_slice()[e]).collect();
                    Trig::from_samples(grid, &samples).shifted_samples(w)
                })
                .collect();
            (0..grid.len())
                .map(|idx| DMatrix::from_fn(2 * n, 2 * n, |r, c| entries[c * 2 * n + r][idx]))
                .collect()
        };
        let mut s_blocks = Vec::with_capacity(grid.len());
        let mut e_tilde = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let (theta, action) = k.node(idx);
            let (_, _, du) = map.eval_with_jacobian(&theta, &action)?;
            let inv = shifted_frames[idx]
                .clone()
                .try_inverse()
                .ok_or_else(|| nonconv(&history))?;
            let lambda = &inv * du * &frames[idx];
            s_blocks.push(lambda.view((0, n), (n, n)).into_owned());
            e_tilde.push(inv * nalgebra::DVector::from_column_slice(&err[idx]));
        }
        // ξ₂(η) − ξ₂(η+ω) = −Ẽ₂
        let mut xi2: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let rhs: Vec<f64> = e_tilde.iter().map(|e| -e[n + i]).collect();
                solve_cohomological(grid, &rhs, w, opts.min_divisor)
            })
            .collect::<Result<_>>()?;
        // constant part of ξ₂ removes the mean of the ξ₁ right-hand side
        let len = grid.len() as f64;
        let mut s_mean = DMatrix::zeros(n, n);
        let mut b_mean = nalgebra::DVector::zeros(n);
        for idx in 0..grid.len() {
            s_mean += &s_blocks[idx];
            let x2 = nalgebra::DVector::from_fn(n, |i, _| xi2[i][idx]);
            b_mean += e_tilde[idx].rows(0, n) + &s_blocks[idx] * x2;
        }
        s_mean /= len;
        b_mean /= len;
        let c2 = s_mean.lu().solve(&(-b_mean)).ok_or_else(|| nonconv(&history))?;
        for i in 0..n {
            for x in xi2[i].iter_mut() {
                *x += c2[i];
            }
        }
        // ξ₁(η) − ξ₁(η+ω) = −Ẽ₁ − Sξ₂
        let xi1: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let rhs: Vec<f64> = (0..grid.len())
                    .map(|idx| -e_tilde[idx][i] - (0..n).map(|c| s_blocks[idx][(i, c)] * xi2[c][idx]).sum::<f64>())
                    .collect();
                solve_cohomological(grid, &rhs, w, opts.min_divisor)
            })
            .collect::<Result<_>>()?;
        for idx in 0..grid.len() {
            let xi = nalgebra::DVector::from_fn(2 * n, |r, _| if r < n { xi1[r][idx] } else { xi2[r - n][idx] });
            let dk = &frames[idx] * xi;
            for i in 0..n {
                k.u[i][idx] += dk[i];
                k.v[i][idx] += dk[n + i];
            }
        }
        k.normalize();
        err = invariance_error(map, &k, w)?;
        let r = sup(&err);
        let prev = *history.last().unwrap();
        history.push(r);
        if !(r < prev) {
            return Err(nonconv(&history));
        }
    }
    let tail_ratio = k.tail_ratio();
    if tail_ratio > opts.tail_tolerance {
        return Err(nonconv(&history));
    }
    let quadratic_constant = history
        .windows(2)
        .filter(|p| p[0] > 1e-8)
        .map(|p| p[1] / (p[0] * p[0]))
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
    Ok(InvarianceResult {
        lagrangian_defect: k.lagrangian_defect(),
        tail_ratio,
        embedding: k,
        history,
        quadratic_constant,
    })
}
