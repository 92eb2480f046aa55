//! Grid weak-KAM machinery: `α(c)` by Lax–Oleinik value iteration with a
//! fixed-time kernel, Aubry-set estimates, the foliation map `c ↦ F_x(c)` and
//! the radial convergence probe.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{min_action, MinimizerOptions};
use crate::error::{LabError, Result};
use crate::fourier::Grid;
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};
use crate::legendre::{lagrangian, momentum_for_velocity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakKamOptions {
    pub tau: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// `u⁻ − u⁺` below this marks a grid point as Aubry.
    pub aubry_tolerance: f64,
    /// Momentum spacing of the one-dimensional fan kernel.
    pub fan_spacing: f64,
    /// Integrator steps per fan trajectory (even).
    pub fan_steps: usize,
    pub minimizer: MinimizerOptions,
}

impl Default for WeakKamOptions {
    fn default() -> Self {
        WeakKamOptions {
            tau: 0.5,
            tolerance: 1e-8,
            max_sweeps: 10_000,
            aubry_tolerance: 1e-3,
            fan_spacing: 0.01,
            fan_steps: 64,
            minimizer: MinimizerOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// `τ L(d/τ)` for angle-independent models.
    Straight,
    /// Extremals through each node sampled by momentum (one degree of
    /// freedom); sweeps minimize over the continuous fan with `u` interpolated.
    Fan,
    /// One boundary-value solve per grid pair and lift.
    Pairwise,
}

/// Fixed-time action `A_τ`: between grid nodes over the `3ⁿ` nearest lifts
/// with the arrival momentum of the extremal, or as per-node fans.
pub struct Kernel {
    pub grid: Grid,
    pub tau: f64,
    pub kind: KernelKind,
    lifts: Vec<Vec<i64>>,
    action: Vec<f64>,
    momentum: Vec<f64>,
    fans: Vec<Fan>,
}

/// Half-width, in samples, of the warm-started fan search.
const FAN_WINDOW: usize = 24;

/// Time-`τ` extremal: displacement `x − y` from start to end, action and the
/// momenta at both ends.
#[derive(Debug, Clone, Copy)]
struct FanSample {
    d: f64,
    action: f64,
    p_start: f64,
    p_end: f64,
}

/// Extremals ending (`arrive`) and starting (`depart`) at one node, ordered by
/// the momentum there.
struct Fan {
    arrive: Vec<FanSample>,
    depart: Vec<FanSample>,
}

/// Cubic through nodes `-1, 0, 1, 2`, evaluated at `t ∈ [0, 1]`.
fn lagrange4(f: [f64; 4], t: f64) -> f64 {
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    w.iter().zip(f).map(|(a, b)| a * b).sum()
}

/// Periodic cubic interpolation of samples on `[0, 1)`.
fn periodic_cubic(u: &[f64], x: f64) -> f64 {
    let n = u.len() as i64;
    let s = x.rem_euclid(1.0) * n as f64;
    let k = s.floor();
    let f = |o: i64| u[(k as i64 + o).rem_euclid(n) as usize];
    lagrange4([f(-1), f(0), f(1), f(2)], s - k)
}

/// Fan sample at fractional index `s`.
fn sample_at(samples: &[FanSample], s: f64) -> FanSample {
    let m = samples.len() as i64;
    let k = (s.floor() as i64).clamp(0, m - 2);
    let t = s - k as f64;
    let pts: [FanSample; 4] = std::array::from_fn(|o| samples[(k + o as i64 - 1).clamp(0, m - 1) as usize]);
    let field = |f: fn(&FanSample) -> f64| lagrange4([f(&pts[0]), f(&pts[1]), f(&pts[2]), f(&pts[3])], t);
    FanSample {
        d: field(|e| e.d),
        action: field(|e| e.action),
        p_start: field(|e| e.p_start),
        p_end: field(|e| e.p_end),
    }
}

fn lift_offsets(n: usize) -> Vec<Vec<i64>> {
    let mut all = vec![vec![]];
    for _ in 0..n {
        all = all
            .into_iter()
            .flat_map(|v: Vec<i64>| {
                (-1..=1).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    all
}

impl Kernel {
    pub fn build(h: &dyn Hamiltonian, grid_size: usize, tau: f64, opts: &WeakKamOptions) -> Result<Kernel> {
        let n = h.dim();
        if !(0.1..=1.0).contains(&tau) {
            return Err(LabError::Precondition(format!("τ = {tau} must lie in [0.1, 1]")));
        }
        let min_grid = if n == 1 { 64 } else { 32 };
        if grid_size < min_grid {
            warn!("weak-KAM grid {grid_size} is below the recommended {min_grid} per axis");
        }
        let grid = Grid::new(n, grid_size);
        let lifts = lift_offsets(n);
        let mut kernel = Kernel {
            grid,
            tau,
            kind: KernelKind::Straight,
            lifts,
            action: Vec::new(),
            momentum: Vec::new(),
            fans: Vec::new(),
        };
        if h.is_angle_independent() {
            kernel.fill_straight(h)?;
        } else if n == 1 {
            kernel.kind = KernelKind::Fan;
            kernel.fill_fan(h, opts)?;
        } else {
            kernel.kind = KernelKind::Pairwise;
            kernel.fill_pairwise(h, opts)?;
        }
        Ok(kernel)
    }

    pub fn lifts(&self) -> usize {
        self.lifts.len()
    }

    /// Node offset `(target − source)` reduced to `(−N/2, N/2]` per axis.
    fn offset(&self, i: usize, j: usize) -> Vec<i64> {
        let n = self.grid.size as i64;
        let a = self.grid.multi_index(i);
        let b = self.grid.multi_index(j);
        a.iter()
            .zip(&b)
            .map(|(&x, &y)| {
                let o = (x as i64 - y as i64).rem_euclid(n);
                if o > n / 2 {
                    o - n
                } else {
                    o
                }
            })
            .collect()
    }

    /// Lifted displacement from source `j` to target `i` under lift `l`.
    pub fn displacement(&self, i: usize, j: usize, l: usize) -> Vec<f64> {
        let n = self.grid.size as f64;
        self.offset(i, j)
            .iter()
            .zip(&self.lifts[l])
            .map(|(&o, &k)| o as f64 / n + k as f64)
            .collect()
    }

    fn index(&self, i: usize, j: usize, l: usize) -> usize {
        match self.kind {
            // translation invariant: store by offset
            KernelKind::Straight => {
                let size = self.grid.size as i64;
                let o: Vec<usize> = self.offset(i, j).iter().map(|&o| o.rem_euclid(size) as usize).collect();
                self.grid.flat_index(&o) * self.lifts.len() + l
            }
            _ => (i * self.grid.len() + j) * self.lifts.len() + l,
        }
    }

    /// Grid-to-grid action; `None` for fan kernels.
    pub fn action(&self, i: usize, j: usize, l: usize) -> Option<f64> {
        (self.kind != KernelKind::Fan).then(|| self.action[self.index(i, j, l)])
    }

    /// Momentum at the arrival point `x_i`; `None` for fan kernels.
    pub fn end_momentum(&self, i: usize, j: usize, l: usize) -> Option<&[f64]> {
        let n = self.grid.dim;
        (self.kind != KernelKind::Fan).then(|| {
            let e = self.index(i, j, l);
            &self.momentum[e * n..(e + 1) * n]
        })
    }

    fn fill_straight(&mut self, h: &dyn Hamiltonian) -> Result<()> {
        let n = self.grid.dim;
        let origin = vec![0.0; n];
        let len = self.grid.len();
        self.action = vec![0.0; len * self.lifts.len()];
        self.momentum = vec![0.0; len * self.lifts.len() * n];
        for o in 0..len {
            for l in 0..self.lifts.len() {
                let d = self.displacement(o, 0, l);
                let v: Vec<f64> = d.iter().map(|x| x / self.tau).collect();
                let e = self.index(o, 0, l);
                self.action[e] = self.tau * lagrangian(h, &origin, &v)?;
                let p = momentum_for_velocity(h, &origin, &v, None)?;
                self.momentum[e * n..(e + 1) * n].copy_from_slice(p.as_slice());
            }
        }
        Ok(())
    }

    fn fill_fan(&mut self, h: &dyn Hamiltonian, opts: &WeakKamOptions) -> Result<()> {
        let len = self.grid.len();
        // even step counts at both resolutions so that Simpson's rule applies
        let steps = opts.fan_steps.div_ceil(4) * 4;
        let tau = self.tau;
        // extremal through (z, p) run forward (`dir = 1`) or backward in time
        let run = |z: f64, p: f64, dir: f64, steps: usize| -> Result<FanSample> {
            let dt = tau / steps as f64;
            let mut prop = Propagator::new(h, IntegratorSpec::for_model(h, dt), &[z], &[p]);
            let lag = |prop: &Propagator| {
                let (x, p) = (prop.x[0], prop.p[0]);
                let g = h.gradient(&[x], &[p]);
                p * g.p[0] - h.energy(&[x], &[p])
            };
            let mut sum = lag(&prop);
            for s in 1..=steps {
                prop.step(dir * dt)?;
                let w = if s == steps {
                    1.0
                } else if s % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                sum += w * lag(&prop);
            }
            let (far, p_far, action) = (prop.x[0], prop.p[0], sum * dt / 3.0);
            Ok(if dir > 0.0 {
                FanSample {
                    d: far - z,
                    action,
                    p_start: p,
                    p_end: p_far,
                }
            } else {
                FanSample {
                    d: z - far,
                    action,
                    p_start: p_far,
                    p_end: p,
                }
            })
        };
        // Richardson extrapolation over two step sizes of a symmetric scheme
        let shoot = |z: f64, p: f64, dir: f64| -> Result<FanSample> {
            let c = run(z, p, dir, steps / 2)?;
            let f = run(z, p, dir, steps)?;
            let x = |a: f64, b: f64| (4.0 * b - a) / 3.0;
            Ok(FanSample {
                d: x(c.d, f.d),
                action: x(c.action, f.action),
                p_start: x(c.p_start, f.p_start),
                p_end: x(c.p_end, f.p_end),
            })
        };
        // widen the fans until they reach displacements beyond ±1.6 both ways
        let mut reach = 1.5 / tau + 1.0;
        loop {
            let ok = (0..len).step_by((len / 8).max(1)).all(|j| {
                let z = self.grid.point(j)[0];
                [1.0, -1.0].iter().all(|&dir| {
                    matches!((shoot(z, reach, dir), shoot(z, -reach, dir)),
                        (Ok(a), Ok(b)) if a.d > 1.6 && b.d < -1.6)
                })
            });
            if ok {
                break;
            }
            reach *= 1.5;
            if reach > 1e3 {
                return Err(LabError::Precondition("fan kernel cannot reach the lifts".into()));
            }
        }
        reach *= 1.1;
        let half = (reach / opts.fan_spacing).ceil() as i64;
        let momenta: Vec<f64> = (-half..=half).map(|k| k as f64 * opts.fan_spacing).collect();
        self.fans = (0..len)
            .into_par_iter()
            .map(|i| {
                let z = self.grid.point(i)[0];
                Ok(Fan {
                    arrive: momenta.iter().map(|&p| shoot(z, p, -1.0)).collect::<Result<_>>()?,
                    depart: momenta.iter().map(|&p| shoot(z, p, 1.0)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Forward: `min_s U(x_i − d) + A − c·d` over the arrival fan. Backward:
    /// `max_s U(x_i + d) − A + c·d` over the departure fan. `U` is the cubic
    /// interpolant of `u`; returns the extremum and the fractional sample index.
    /// With a `hint`, only samples within `FAN_WINDOW` of it are scanned.
    fn fan_extremum(&self, u: &[f64], i: usize, c: f64, forward: bool, hint: Option<f64>) -> (f64, f64) {
        let x = self.grid.point(i)[0];
        let fan = &self.fans[i];
        let samples = if forward { &fan.arrive } else { &fan.depart };
        let objective = |e: &FanSample| {
            if forward {
                periodic_cubic(u, x - e.d) + e.action - c * e.d
            } else {
                -periodic_cubic(u, x + e.d) + e.action - c * e.d
            }
        };
        let (lo, hi) = match hint {
            Some(h) => {
                let h = h.round() as usize;
                (h.saturating_sub(FAN_WINDOW), (h + FAN_WINDOW).min(samples.len() - 1))
            }
            None => (0, samples.len() - 1),
        };
        let (k, fk) = (lo..=hi)
            .map(|k| (k, objective(&samples[k])))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let f = |s: f64| objective(&sample_at(samples, s));
        let last = (samples.len() - 1) as f64;
        let (mut a, mut b) = ((k as f64 - 1.0).max(0.0), (k as f64 + 1.0).min(last));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..40 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = f(x2);
            }
        }
        let s = 0.5 * (a + b);
        let (value, s) = match f(s) {
            v if v < fk => (v, s),
            _ => (fk, k as f64),
        };
        (if forward { value } else { -value }, s)
    }

    fn fill_pairwise(&mut self, h: &dyn Hamiltonian, opts: &WeakKamOptions) -> Result<()> {
        let n = self.grid.dim;
        let len = self.grid.len();
        let lifts = self.lifts.len();
        let spec = IntegratorSpec::for_model(h, opts.minimizer.step);
        let entries: Vec<Result<(f64, Vec<f64>)>> = (0..len * len * lifts)
            .into_par_iter()
            .map(|e| {
                let l = e % lifts;
                let j = (e / lifts) % len;
                let i = e / (lifts * len);
                let y = self.grid.point(j);
                let x: Vec<f64> = y.iter().zip(self.displacement(i, j, l)).map(|(a, d)| a + d).collect();
                let res = min_action(h, &y, &x, self.tau, &opts.minimizer)?;
                let mut prop = Propagator::new(h, spec, &y, &res.initial_momentum);
                prop.advance(self.tau)?;
                Ok((res.value, prop.p.iter().copied().collect()))
            })
            .collect();
        self.action = Vec::with_capacity(len * len * lifts);
        self.momentum = Vec::with_capacity(len * len * lifts * n);
        for entry in entries {
            let (a, p) = entry?;
            self.action.push(a);
            self.momentum.extend(p);
        }
        Ok(())
    }

    /// `A − c·d` for target `i`, source `j`, lift `l`.
    fn weighted(&self, c: &[f64], i: usize, j: usize, l: usize) -> f64 {
        let d = self.displacement(i, j, l);
        self.action[self.index(i, j, l)] - c.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Dense `A − c·d` minimized over lifts, with the argmin lift.
    fn class_matrix(&self, c: &[f64]) -> Vec<(f64, usize)> {
        let len = self.grid.len();
        (0..len * len)
            .into_par_iter()
            .map(|e| {
                let (i, j) = (e / len, e % len);
                (0..self.lifts.len())
                    .map(|l| (self.weighted(c, i, j, l), l))
                    .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub c: Vec<f64>,
    pub grid: Grid,
    pub tau: f64,
    /// Forward weak-KAM solution `u⁻`, zero mean, row-major.
    pub u: Vec<f64>,
    pub alpha: f64,
    pub sweeps: usize,
    pub increment: f64,
    pub converged: bool,
    /// Arrival momentum `c + Du` of the calibrating extremal at each node.
    pub momenta: Vec<Vec<f64>>,
    /// Lifted displacement `x − y` of the calibrating extremal at each node.
    pub calibration: Vec<Vec<f64>>,
}

impl ValueGrid {
    /// `max_x |H(x, p(x)) − α|`
    pub fn energy_defect(&self, h: &dyn Hamiltonian) -> f64 {
        self.grid
            .points()
            .iter()
            .zip(&self.momenta)
            .map(|(x, p)| (h.energy(x, p) - self.alpha).abs())
            .fold(0.0, f64::max)
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
    mean
}

#[derive(Debug, Clone, Copy)]
enum Arg {
    Grid { source: usize, lift: usize },
    Fan(f64),
}

/// Lax–Oleinik operator of one class on one kernel.
struct ClassOperator<'a> {
    kernel: &'a Kernel,
    c: Vec<f64>,
    /// Class matrix of grid-to-grid kernels.
    weights: Vec<(f64, usize)>,
}

impl<'a> ClassOperator<'a> {
    fn new(kernel: &'a Kernel, c: &[f64]) -> Self {
        let weights = if kernel.kind == KernelKind::Fan {
            Vec::new()
        } else {
            kernel.class_matrix(c)
        };
        ClassOperator {
            kernel,
            c: c.to_vec(),
            weights,
        }
    }

    /// Forward `min_y u(y) + A − c·d` or backward `max_x u(x) − A + c·d`.
    /// Fan kernels search near `hints` (previous argmins) when given.
    fn apply(&self, u: &[f64], forward: bool, hints: Option<&[Arg]>) -> Vec<(f64, Arg)> {
        let len = u.len();
        (0..len)
            .into_par_iter()
            .map(|i| {
                if self.kernel.kind == KernelKind::Fan {
                    let hint = hints.and_then(|h| match h[i] {
                        Arg::Fan(s) => Some(s),
                        Arg::Grid { .. } => None,
                    });
                    let (v, s) = self.kernel.fan_extremum(u, i, self.c[0], forward, hint);
                    return (v, Arg::Fan(s));
                }
                let mut best = (if forward { f64::INFINITY } else { f64::NEG_INFINITY }, Arg::Fan(0.0));
                for (j, uj) in u.iter().enumerate() {
                    let (val, lift) = if forward {
                        let (w, l) = self.weights[i * len + j];
                        (uj + w, l)
                    } else {
                        let (w, l) = self.weights[j * len + i];
                        (uj - w, l)
                    };
                    if (forward && val < best.0) || (!forward && val > best.0) {
                        best = (val, Arg::Grid { source: j, lift });
                    }
                }
                best
            })
            .collect()
    }

    /// Displacement and arrival momentum of a forward argmin at node `i`.
    fn resolve(&self, i: usize, arg: Arg) -> (Vec<f64>, Vec<f64>) {
        match arg {
            Arg::Grid { source, lift } => (
                self.kernel.displacement(i, source, lift),
                self.kernel.end_momentum(i, source, lift).unwrap_or_default().to_vec(),
            ),
            Arg::Fan(s) => {
                let e = sample_at(&self.kernel.fans[i].arrive, s);
                (vec![e.d], vec![e.p_end])
            }
        }
    }
}

/// Forward (`min`) or backward (`max`) iteration to the additive fixed point.
/// Returns the fixed point, the mean step, sweeps, last increment and argmins.
fn iterate(op: &ClassOperator, forward: bool, opts: &WeakKamOptions) -> (Vec<f64>, f64, usize, f64, Vec<Arg>) {
    let len = op.kernel.grid.len();
    let fan = op.kernel.kind == KernelKind::Fan;
    let mut u = vec![0.0; len];
    let mut step = 0.0;
    let mut increment = f64::INFINITY;
    let mut args: Vec<Arg> = Vec::new();
    let mut sweeps = 0;
    // warm-started fan sweeps are confirmed by a full scan before stopping
    let mut confirming = false;
    while sweeps < opts.max_sweeps {
        let full = !fan || confirming || sweeps % 64 == 0;
        let next = op.apply(&u, forward, (!full).then_some(args.as_slice()));
        let mut values: Vec<f64> = next.iter().map(|v| v.0).collect();
        args = next.iter().map(|v| v.1).collect();
        step = normalize(&mut values);
        increment = values.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        sweeps += 1;
        if increment < opts.tolerance {
            u = values;
            if full {
                break;
            }
            confirming = true;
            continue;
        }
        confirming = false;
        // Krasnoselskii–Mann averaging: plain iteration can cycle when the
        // calibrating dynamics has periodic orbits of a common period
        for (a, b) in u.iter_mut().zip(&values) {
            *a = 0.5 * (*a + b);
        }
        normalize(&mut u);
    }
    (u, step, sweeps, increment, args)
}

fn value_grid(op: &ClassOperator, opts: &WeakKamOptions) -> ValueGrid {
    let kernel = op.kernel;
    let c = &op.c;
    let (u, step, sweeps, increment, args) = iterate(op, true, opts);
    let converged = increment < opts.tolerance;
    if !converged {
        warn!("Lax–Oleinik iteration for c = {c:?} stopped at increment {increment:.2e}");
    }
    let (calibration, momenta): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
        args.iter().enumerate().map(|(i, &arg)| op.resolve(i, arg)).unzip();
    let edge = args
        .iter()
        .enumerate()
        .filter(|(i, arg)| match **arg {
            Arg::Grid { .. } => calibration[*i].iter().any(|d| d.abs() > 1.0),
            Arg::Fan(s) => s < 1.0 || s > (kernel.fans[*i].arrive.len() - 2) as f64,
        })
        .count();
    if edge > 0 {
        warn!("{edge} calibrating extremals sit at the edge of the kernel window");
    }
    ValueGrid {
        c: c.to_vec(),
        grid: kernel.grid,
        tau: kernel.tau,
        u,
        alpha: -step / kernel.tau,
        sweeps,
        increment,
        converged,
        momenta,
        calibration,
    }
}

/// `α(c)` and a weak-KAM solution by value iteration with the time-`τ` kernel.
pub fn lax_oleinik_alpha(h: &dyn Hamiltonian, c: &[f64], grid_size: usize, opts: &WeakKamOptions) -> Result<ValueGrid> {
    if c.len() != h.dim() {
        return Err(LabError::Precondition("class has the wrong dimension".into()));
    }
    let kernel = Kernel::build(h, grid_size, opts.tau, opts)?;
    Ok(alpha_with_kernel(&kernel, c, opts))
}

pub fn alpha_with_kernel(kernel: &Kernel, c: &[f64], opts: &WeakKamOptions) -> ValueGrid {
    value_grid(&ClassOperator::new(kernel, c), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AubryEstimate {
    pub mask: Vec<bool>,
    /// `u⁻ − u⁺`, shifted to have minimum zero.
    pub gap: Vec<f64>,
    pub momenta: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub covers_grid: bool,
}

impl AubryEstimate {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Grid points where the forward and backward weak-KAM solutions agree.
pub fn aubry_estimate(kernel: &Kernel, value: &ValueGrid, opts: &WeakKamOptions) -> Result<AubryEstimate> {
    if !value.converged {
        return Err(LabError::Precondition(
            "Aubry estimate needs a converged value grid".into(),
        ));
    }
    let op = ClassOperator::new(kernel, &value.c);
    let (backward, _, _, _, _) = iterate(&op, false, opts);
    let raw: Vec<f64> = value.u.iter().zip(&backward).map(|(a, b)| a - b).collect();
    let floor = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let gap: Vec<f64> = raw.iter().map(|g| g - floor).collect();
    let mask: Vec<bool> = gap.iter().map(|g| *g < opts.aubry_tolerance).collect();
    let covers_grid = mask.iter().all(|m| *m);
    if !mask.iter().any(|m| *m) {
        return Err(LabError::Precondition(format!(
            "empty Aubry estimate at tolerance {:.1e}; refine the grid",
            opts.aubry_tolerance
        )));
    }
    Ok(AubryEstimate {
        mask,
        gap,
        momenta: value.momenta.clone(),
        tolerance: opts.aubry_tolerance,
        covers_grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoliationReport {
    pub x: Vec<f64>,
    pub classes: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    /// `F_x(c)` per class.
    pub momenta: Vec<Vec<f64>>,
    /// Classes whose Aubry estimate is not a graph over the whole grid.
    pub hypothesis_violated: Vec<usize>,
    /// `min |F_x(c) − F_x(d)| / |c − d|` over distinct graph classes.
    pub injectivity_ratio: f64,
    /// Consecutive classes move `F_x` in the same direction as `c`.
    pub monotone: bool,
    /// Smallest pointwise distance between sections of distinct graph classes.
    pub leaf_min_distance: f64,
    /// `max_c max_x |H(x, p_c(x)) − α(c)|` over graph classes.
    pub energy_defect: f64,
    /// Smallest second difference of `α` along the list (equally spaced classes).
    pub alpha_second_difference: Option<f64>,
    pub value_grids: Vec<ValueGrid>,
}

/// `c ↦ F_x(c)` at grid node `x_index` for a list of classes sharing one kernel.
pub fn foliation_map(
    h: &dyn Hamiltonian,
    x_index: usize,
    classes: &[Vec<f64>],
    grid_size: usize,
    opts: &WeakKamOptions,
) -> Result<FoliationReport> {
    let kernel = Kernel::build(h, grid_size, opts.tau, opts)?;
    foliation_with_kernel(h, &kernel, x_index, classes, opts)
}

pub fn foliation_with_kernel(
    h: &dyn Hamiltonian,
    kernel: &Kernel,
    x_index: usize,
    classes: &[Vec<f64>],
    opts: &WeakKamOptions,
) -> Result<FoliationReport> {
    let grid = kernel.grid;
    if x_index >= grid.len() {
        return Err(LabError::Precondition("x is not a grid node".into()));
    }
    let mut value_grids = Vec::new();
    let mut hypothesis_violated = Vec::new();
    for (k, c) in classes.iter().enumerate() {
        let value = alpha_with_kernel(kernel, c, opts);
        let graph = aubry_estimate(kernel, &value, opts)
            .map(|a| a.covers_grid)
            .unwrap_or(false);
        if !graph {
            hypothesis_violated.push(k);
        }
        value_grids.push(value);
    }
    let graphs: Vec<usize> = (0..classes.len())
        .filter(|k| !hypothesis_violated.contains(k))
        .collect();
    let momenta: Vec<Vec<f64>> = value_grids.iter().map(|v| v.momenta[x_index].clone()).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut injectivity_ratio = f64::INFINITY;
    let mut leaf_min_distance = f64::INFINITY;
    for (ia, &a) in graphs.iter().enumerate() {
        for &b in &graphs[ia + 1..] {
            let dc = dist(&classes[a], &classes[b]);
            if dc > 0.0 {
                injectivity_ratio = injectivity_ratio.min(dist(&momenta[a], &momenta[b]) / dc);
                for x in 0..grid.len() {
                    leaf_min_distance =
                        leaf_min_distance.min(dist(&value_grids[a].momenta[x], &value_grids[b].momenta[x]));
                }
            }
        }
    }
    let monotone = graphs.windows(2).all(|w| {
        let dc: Vec<f64> = classes[w[1]].iter().zip(&classes[w[0]]).map(|(a, b)| a - b).collect();
        let dp: f64 = momenta[w[1]]
            .iter()
            .zip(&momenta[w[0]])
            .zip(&dc)
            .map(|((a, b), d)| (a - b) * d)
            .sum();
        dp > 0.0
    });
    let energy_defect = graphs
        .iter()
        .map(|&k| value_grids[k].energy_defect(h))
        .fold(0.0, f64::max);
    let alpha_second_difference = if classes.len() >= 3 {
        let alphas: Vec<f64> = value_grids.iter().map(|v| v.alpha).collect();
        Some(
            alphas
                .windows(3)
                .map(|w| w[0] - 2.0 * w[1] + w[2])
                .fold(f64::INFINITY, f64::min),
        )
    } else {
        None
    };
    Ok(FoliationReport {
        x: grid.point(x_index),
        classes: classes.to_vec(),
        alphas: value_grids.iter().map(|v| v.alpha).collect(),
        momenta,
        hypothesis_violated,
        injectivity_ratio,
        monotone,
        leaf_min_distance,
        energy_defect,
        alpha_second_difference,
        value_grids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSample {
    pub period: f64,
    /// Homotopy class of the chosen loop.
    pub winding: Vec<i64>,
    pub initial_velocity: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialReport {
    pub x0: Vec<f64>,
    /// `∂_p H(x₀, F_{x₀}(c))`
    pub aubry_velocity: Vec<f64>,
    pub samples: Vec<RadialSample>,
}

impl RadialReport {
    /// Distances are non-increasing from the first sample below `eps` on.
    pub fn settles_below(&self, eps: f64) -> bool {
        match self.samples.iter().position(|s| s.distance <= eps) {
            None => false,
            Some(k) => self.samples[k..]
                .windows(2)
                .all(|w| w[1].distance <= w[0].distance.max(eps)),
        }
    }
}

/// Minimizing loops of `L − c` at `x₀` for each period, compared with the
/// Aubry velocity at `x₀`.
pub fn radial_convergence_probe(
    h: &dyn Hamiltonian,
    value: &ValueGrid,
    aubry: &AubryEstimate,
    x_index: usize,
    periods: &[f64],
    opts: &MinimizerOptions,
) -> Result<RadialReport> {
    if !aubry.mask.get(x_index).copied().unwrap_or(false) {
        return Err(LabError::Precondition("x₀ is not in the Aubry estimate".into()));
    }
    let x0 = value.grid.point(x_index);
    let n = x0.len();
    let aubry_velocity: Vec<f64> = h.gradient(&x0, &value.momenta[x_index]).p.iter().copied().collect();
    let mut samples = Vec::new();
    for &t in periods {
        if !(t >= opts.t_min) {
            return Err(LabError::Precondition(format!(
                "period {t} is below t_min = {}",
                opts.t_min
            )));
        }
        let centre: Vec<i64> = value.c.iter().map(|ci| (ci * t).round() as i64).collect();
        let mut best: Option<(f64, Vec<i64>, Vec<f64>)> = None;
        for off in lift_offsets(n) {
            let k: Vec<i64> = centre.iter().zip(&off).map(|(a, b)| a + b).collect();
            let y: Vec<f64> = x0.iter().zip(&k).map(|(a, b)| a + *b as f64).collect();
            let res = min_action(h, &x0, &y, t, opts)?;
            let val = res.value - value.c.iter().zip(&k).map(|(c, k)| c * *k as f64).sum::<f64>();
            if best.as_ref().is_none_or(|b| val < b.0 - 1e-12) {
                best = Some((val, k, res.initial_velocity));
            }
        }
        let (_, winding, initial_velocity) = best.expect("at least one lift");
        let distance = initial_velocity
            .iter()
            .zip(&aubry_velocity)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        samples.push(RadialSample {
            period: t,
            winding,
            initial_velocity,
            distance,
        });
    }
    Ok(RadialReport {
        x0,
        aubry_velocity,
        samples,
    })
}
