//! Trigonometric interpolation on regular grids of `T^n`.
//!
//! Samples are stored row-major: the last axis varies fastest. Grid node
//! `(j_0, …, j_{n−1})` sits at `(j_0/N, …, j_{n−1}/N)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub size: usize,
}

impl Grid {
    pub fn new(dim: usize, size: usize) -> Self {
        assert!(dim >= 1 && size >= 2, "grid must have dim >= 1 and size >= 2");
        Grid { dim, size }
    }

    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for d in (0..self.dim).rev() {
            out[d] = idx % self.size;
            idx /= self.size;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &j| acc * self.size + j)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .into_iter()
            .map(|j| j as f64 / self.size as f64)
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Signed wave number of FFT bin `j`.
    pub fn wavenumber(&self, j: usize) -> i64 {
        if j <= self.size / 2 {
            j as i64
        } else {
            j as i64 - self.size as i64
        }
    }

    pub fn is_nyquist(&self, j: usize) -> bool {
        self.size.is_multiple_of(2) && j == self.size / 2
    }

    pub fn modes(&self, idx: usize) -> Vec<i64> {
        self.multi_index(idx).into_iter().map(|j| self.wavenumber(j)).collect()
    }
}

fn transform_axes(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.size;
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        let outer = grid.len() / n;
        for o in 0..outer {
            // base index with the axis digit set to zero
            let hi = o / stride;
            let lo = o % stride;
            let base = hi * stride * n + lo;
            for j in 0..n {
                line[j] = data[base + j * stride];
            }
            fft.process(&mut line);
            for j in 0..n {
                data[base + j * stride] = line[j];
            }
        }
    }
    if inverse {
        let scale = 1.0 / grid.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Discrete Fourier coefficients (unnormalised forward transform).
pub fn forward(grid: &Grid, values: &[f64]) -> Vec<Complex64> {
    assert_eq!(values.len(), grid.len());
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_axes(grid, &mut data, false);
    data
}

/// Inverse of [`forward`], real part.
pub fn inverse(grid: &Grid, coeffs: &[Complex64]) -> Vec<f64> {
    let mut data = coeffs.to_vec();
    transform_axes(grid, &mut data, true);
    data.into_iter().map(|c| c.re).collect()
}

/// A real trigonometric interpolant of grid samples.
#[derive(Debug, Clone)]
pub struct Trig {
    pub grid: Grid,
    pub coeffs: Vec<Complex64>,
}

impl Trig {
    pub fn from_samples(grid: Grid, values: &[f64]) -> Self {
        Trig {
            coeffs: forward(&grid, values),
            grid,
        }
    }

    pub fn samples(&self) -> Vec<f64> {
        inverse(&self.grid, &self.coeffs)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re / self.grid.len() as f64
    }

    /// Partial derivative along `axis` (Nyquist mode dropped).
    pub fn derivative(&self, axis: usize) -> Trig {
        let mut coeffs = self.coeffs.clone();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let j = self.grid.multi_index(idx)[axis];
            if self.grid.is_nyquist(j) {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= Complex64::new(0.0, 2.0 * PI * self.grid.wavenumber(j) as f64);
            }
        }
        Trig {
            grid: self.grid,
            coeffs,
        }
    }

    /// Samples of the translate `η ↦ f(η + shift)`.
    pub fn shifted_samples(&self, shift: &[f64]) -> Vec<f64> {
        let mut coeffs = self.coeffs.clone();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let phase: f64 = self.grid.modes(idx).iter().zip(shift).map(|(&k, s)| k as f64 * s).sum();
            *c *= Complex64::from_polar(1.0, 2.0 * PI * phase);
        }
        inverse(&self.grid, &coeffs)
    }

    /// Evaluate at an arbitrary point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.grid.size;
        // per-axis tables of e^{2πi k x_d}
        let tables: Vec<Vec<Complex64>> = x
            .iter()
            .map(|&xd| {
                (0..n)
                    .map(|j| Complex64::from_polar(1.0, 2.0 * PI * self.grid.wavenumber(j) as f64 * xd))
                    .collect()
            })
            .collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for (idx, c) in self.coeffs.iter().enumerate() {
            let mut e = Complex64::new(1.0, 0.0);
            for (d, j) in self.grid.multi_index(idx).into_iter().enumerate() {
                e *= tables[d][j];
            }
            acc += c * e;
        }
        acc.re / self.grid.len() as f64
    }

    /// Fraction of spectral energy in modes with `max|k| > N/4`.
    pub fn tail_ratio(&self) -> f64 {
        let cut = (self.grid.size / 4) as i64;
        let mut total = 0.0;
        let mut tail = 0.0;
        for (idx, c) in self.coeffs.iter().enumerate() {
            let e = c.norm_sqr();
            total += e;
            if self.grid.modes(idx).iter().any(|k| k.abs() > cut) {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }
}

/// Gradient samples of a grid function, one vector per axis.
pub fn spectral_gradient(grid: Grid, values: &[f64]) -> Vec<Vec<f64>> {
    let f = Trig::from_samples(grid, values);
    (0..grid.dim).map(|d| f.derivative(d).samples()).collect()
}

/// Solve `φ(η) − φ(η + ω) = rhs(η) − mean(rhs)` with `mean(φ) = 0`.
///
/// Fails with [`LabError::CutoffTooLarge`] when a divisor `|1 − e^{2πik·ω}|`
/// drops below `min_divisor`.
pub fn solve_cohomological(grid: Grid, rhs: &[f64], omega: &[f64], min_divisor: f64) -> Result<Vec<f64>> {
    let mut coeffs = forward(&grid, rhs);
    coeffs[0] = Complex64::new(0.0, 0.0);
    for idx in 1..coeffs.len() {
        let modes = grid.modes(idx);
        let nyquist = grid.multi_index(idx).iter().any(|&j| grid.is_nyquist(j));
        if nyquist {
            coeffs[idx] = Complex64::new(0.0, 0.0);
            continue;
        }
        let phase: f64 = modes.iter().zip(omega).map(|(&k, w)| k as f64 * w).sum();
        let divisor = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * phase);
        if divisor.norm() < min_divisor {
            return Err(LabError::CutoffTooLarge {
                divisor: divisor.norm(),
                mode: modes,
            });
        }
        coeffs[idx] /= divisor;
    }
    Ok(inverse(&grid, &coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        grid.points().iter().map(|p| f(p)).collect()
    }

    #[test]
    fn derivative_and_interpolation_are_spectrally_exact() {
        let grid = Grid::new(2, 16);
        let f = |x: &[f64]| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos() + 0.3 * (2.0 * PI * (x[0] + x[1])).cos();
        let trig = Trig::from_samples(grid, &sample(grid, f));
        let d0 = trig.derivative(0).samples();
        let exact = sample(grid, |x| {
            2.0 * PI * (2.0 * PI * x[0]).cos() * (4.0 * PI * x[1]).cos()
                - 0.3 * 2.0 * PI * (2.0 * PI * (x[0] + x[1])).sin()
        });
        let err = d0.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11);
        let x = [0.123, 0.777];
        assert!((trig.eval(&x) - f(&x)).abs() < 1e-13);
        let shifted = trig.shifted_samples(&[0.31, -0.2]);
        let exact = sample(grid, |x| f(&[x[0] + 0.31, x[1] - 0.2]));
        let err = shifted
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn cohomological_equation_inverts_difference_operator() {
        let grid = Grid::new(1, 64);
        let omega = [(5f64.sqrt() - 1.0) / 2.0];
        let phi = sample(grid, |x| (2.0 * PI * x[0]).sin() + 0.1 * (6.0 * PI * x[0]).cos());
        let trig = Trig::from_samples(grid, &phi);
        let rhs: Vec<f64> = phi
            .iter()
            .zip(trig.shifted_samples(&omega))
            .map(|(a, b)| a - b)
            .collect();
        let sol = solve_cohomological(grid, &rhs, &omega, 1e-14).unwrap();
        let err = sol.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        // rational rotation hits a zero divisor
        assert!(solve_cohomological(grid, &rhs, &[0.25], 1e-14).is_err());
    }

    #[test]
    fn tail_ratio_flags_unresolved_functions() {
        let grid = Grid::new(1, 32);
        let smooth = Trig::from_samples(grid, &sample(grid, |x| (2.0 * PI * x[0]).cos()));
        assert!(smooth.tail_ratio() < 1e-20);
        let rough = Trig::from_samples(grid, &sample(grid, |x| (2.0 * PI * 12.0 * x[0]).cos()));
        assert!(rough.tail_ratio() > 0.9);
    }
}
