//! Conjugate points, Green bundles and Lyapunov spectra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::integrator::{IntegratorSpec, Propagator};
use crate::state::{symplectic_gram, CotangentState, LiftedState};

/// Planes whose horizontal projection has a smaller singular value than this
/// are kept as frames.
pub const TRANSVERSALITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaneRep {
    /// `{(δθ, S δθ)}` with `S` symmetric, stored row-major.
    Graph(Vec<Vec<f64>>),
    /// Orthonormal `2n × n` frame, stored column by column.
    Frame(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianPlane {
    pub base: CotangentState,
    pub rep: PlaneRep,
    /// Smallest singular value of the horizontal block of the orthonormalized frame.
    pub margin: f64,
    /// `|S − Sᵀ|` before symmetrization (graph), or the isotropy defect (frame).
    pub symmetry_defect: f64,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// QR with non-negative diagonal in `R`; returns `(Q, diag R)`.
fn positive_qr(frame: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let qr = frame.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let mut diag = r.diagonal();
    for j in 0..diag.len() {
        if diag[j] < 0.0 {
            diag[j] = -diag[j];
            q.column_mut(j).neg_mut();
        }
    }
    (q, diag)
}

impl LagrangianPlane {
    /// The plane spanned by the columns of a `2n × n` frame.
    pub fn from_frame(base: CotangentState, frame: &DMatrix<f64>) -> Result<Self> {
        let n = base.dim();
        if frame.nrows() != 2 * n || frame.ncols() != n {
            return Err(LabError::InvalidPlane(format!("frame must be {}x{n}", 2 * n)));
        }
        let (q, _) = positive_qr(frame);
        let x = q.rows(0, n).into_owned();
        let y = q.rows(n, n).into_owned();
        let margin = x.singular_values().min();
        if margin >= TRANSVERSALITY_MARGIN {
            let xinv = x
                .try_inverse()
                .ok_or_else(|| LabError::InvalidPlane("singular horizontal block".into()))?;
            let s = &y * xinv;
            let asym = (&s - s.transpose()).amax();
            let sym = 0.5 * (&s + s.transpose());
            Ok(LagrangianPlane {
                base,
                rep: PlaneRep::Graph(to_rows(&sym)),
                margin,
                symmetry_defect: asym,
            })
        } else {
            let iso = symplectic_gram(&q).amax();
            Ok(LagrangianPlane {
                base,
                rep: PlaneRep::Frame((0..n).map(|j| q.column(j).iter().copied().collect()).collect()),
                margin,
                symmetry_defect: iso,
            })
        }
    }

    pub fn from_symmetric(base: CotangentState, s: &DMatrix<f64>) -> Result<Self> {
        let asym = (s - s.transpose()).amax();
        if asym > 1e-10 * (1.0 + s.amax()) {
            return Err(LabError::InvalidPlane(format!(
                "matrix is not symmetric (defect {asym:.2e})"
            )));
        }
        Ok(LagrangianPlane {
            base,
            rep: PlaneRep::Graph(to_rows(s)),
            margin: 1.0,
            symmetry_defect: asym,
        })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `S` when the plane is a graph over the horizontal.
    pub fn graph(&self) -> Option<DMatrix<f64>> {
        match &self.rep {
            PlaneRep::Graph(rows) => Some(from_rows(rows)),
            PlaneRep::Frame(_) => None,
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(self.rep, PlaneRep::Graph(_))
    }
}

fn vertical_frame(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        m[(n + i, i)] = 1.0;
    }
    m
}

/// Flow `z` by `t` together with a frame, renormalizing by positive QR every
/// `renorm` steps. Returns the end state and frame.
fn transport(
    h: &dyn Hamiltonian,
    spec: &IntegratorSpec,
    x: &[f64],
    p: &[f64],
    frame: DMatrix<f64>,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    let mut prop = Propagator::new(h, *spec, x, p).with_frame(frame);
    let steps = spec.steps_for(t);
    let dt = t / steps as f64;
    for k in 0..steps {
        prop.step(dt)?;
        if k % 64 == 63 {
            let f = prop.frame.take().expect("frame present");
            prop.frame = Some(positive_qr(&f).0);
        }
    }
    let f = prop.frame.take().expect("frame present");
    Ok((prop.x, prop.p, f))
}

/// Times in `(0, t_max]` at which `det` of the horizontal block of `Dφ_t·V*`
/// changes sign, refined by bisection to `step·1e-3`.
pub fn conjugate_scan(h: &dyn Hamiltonian, z: &CotangentState, t_max: f64, step: f64) -> Result<Vec<f64>> {
    let n = h.dim();
    if !(t_max > 0.0 && t_max <= 1e3) {
        return Err(LabError::Precondition("t_max must lie in (0, 1000]".into()));
    }
    let spec = IntegratorSpec::for_model(h, step);
    spec.validate()?;
    let steps = spec.steps_for(t_max);
    let dt = t_max / steps as f64;
    let mut prop = Propagator::new(h, spec, &z.theta, &z.p).with_frame(vertical_frame(n));
    let det_of = |f: &DMatrix<f64>| f.rows(0, n).determinant();
    let mut roots = Vec::new();
    let mut prev_sign = 0.0;
    for k in 0..steps {
        let saved = (
            prop.x.clone(),
            prop.p.clone(),
            prop.frame.clone().expect("frame present"),
        );
        let t0 = prop.time;
        prop.step(dt)?;
        let f = prop.frame.take().expect("frame present");
        if !f.iter().all(|v| v.is_finite()) {
            return Err(LabError::Overflow { last_valid_t: t0 });
        }
        // positive QR keeps the sign of det X
        let f = if k % 16 == 15 { positive_qr(&f).0 } else { f };
        let d = det_of(&f);
        prop.frame = Some(f);
        let sign = d.signum();
        if d != 0.0 && prev_sign != 0.0 && sign != prev_sign {
            // bisection on the length of a single step from the saved state
            let (mut lo, mut hi) = (0.0, dt);
            while hi - lo > step * 1e-3 {
                let mid = 0.5 * (lo + hi);
                let mut sub =
                    Propagator::new(h, spec, saved.0.as_slice(), saved.1.as_slice()).with_frame(saved.2.clone());
                sub.step(mid)?;
                let dm = det_of(sub.frame.as_ref().expect("frame present"));
                if dm.signum() == prev_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            roots.push(t0 + 0.5 * (lo + hi));
        }
        if d != 0.0 {
            prev_sign = sign;
        }
    }
    Ok(roots)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceRate {
    /// Last increment below 1e-8.
    Converged,
    /// Increments halve when the horizon doubles: `O(1/t*)`.
    Algebraic,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenEstimate {
    /// The plane at horizon `t*`.
    pub plane: LagrangianPlane,
    /// `|S(t*/2) − S(t*/4)|` and `|S(t*) − S(t*/2)|`.
    pub increments: [f64; 2],
    pub rate: ConvergenceRate,
    /// `2S(t*) − S(t*/2)` when the rate is algebraic.
    pub extrapolated: Option<LagrangianPlane>,
    pub horizon: f64,
}

impl GreenEstimate {
    /// Best available estimate of the limit.
    pub fn limit(&self) -> &LagrangianPlane {
        self.extrapolated.as_ref().unwrap_or(&self.plane)
    }
}

/// Image of the vertical at `z` after starting it at `φ_{−sign·t}(z)`.
fn pushed_vertical(
    h: &dyn Hamiltonian,
    z: &CotangentState,
    t: f64,
    sign: f64,
    spec: &IntegratorSpec,
) -> Result<LagrangianPlane> {
    let n = h.dim();
    let start = LiftedState::from_base(z);
    let (x0, p0, _) = transport(h, spec, &start.theta, &start.p, vertical_frame(n), -sign * t)?;
    let (_, _, f) = transport(h, spec, x0.as_slice(), p0.as_slice(), vertical_frame(n), sign * t)?;
    LagrangianPlane::from_frame(z.clone(), &f)
}

fn green(h: &dyn Hamiltonian, z: &CotangentState, horizon: f64, sign: f64, step: f64) -> Result<GreenEstimate> {
    if !(horizon > 0.0) {
        return Err(LabError::Precondition("horizon must be positive".into()));
    }
    let spec = IntegratorSpec::for_model(h, step);
    spec.validate()?;
    let planes: Vec<LagrangianPlane> = [0.25, 0.5, 1.0]
        .iter()
        .map(|f| pushed_vertical(h, z, f * horizon, sign, &spec))
        .collect::<Result<_>>()?;
    let graphs: Vec<Option<DMatrix<f64>>> = planes.iter().map(|p| p.graph()).collect();
    let (increments, rate, extrapolated) = match (&graphs[0], &graphs[1], &graphs[2]) {
        (Some(a), Some(b), Some(c)) => {
            let d1 = (b - a).amax();
            let d2 = (c - b).amax();
            if d2 < 1e-8 {
                ([d1, d2], ConvergenceRate::Converged, None)
            } else if (d1 / d2 - 2.0).abs() < 0.25 {
                let s = 2.0 * c - b;
                let s = 0.5 * (&s + s.transpose());
                (
                    [d1, d2],
                    ConvergenceRate::Algebraic,
                    Some(LagrangianPlane::from_symmetric(z.clone(), &s)?),
                )
            } else {
                ([d1, d2], ConvergenceRate::Undetermined, None)
            }
        }
        _ => ([f64::NAN, f64::NAN], ConvergenceRate::Undetermined, None),
    };
    Ok(GreenEstimate {
        plane: planes.into_iter().nth(2).expect("three horizons"),
        increments,
        rate,
        extrapolated,
        horizon,
    })
}

/// `G₊(z) ≈ Dφ_{t*}(φ_{−t*} z)·V*`.
pub fn green_plus(h: &dyn Hamiltonian, z: &CotangentState, horizon: f64, step: f64) -> Result<GreenEstimate> {
    green(h, z, horizon, 1.0, step)
}

/// `G₋(z) ≈ Dφ_{−t*}(φ_{t*} z)·V*`.
pub fn green_minus(h: &dyn Hamiltonian, z: &CotangentState, horizon: f64, step: f64) -> Result<GreenEstimate> {
    green(h, z, horizon, -1.0, step)
}

/// `n − rank(S₊ − S₋)` at threshold `tol`.
pub fn green_intersection_dim(minus: &LagrangianPlane, plus: &LagrangianPlane, tol: f64) -> Result<usize> {
    let (sm, sp) = match (minus.graph(), plus.graph()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(LabError::InvalidPlane("both planes must be graphs".into())),
    };
    for s in [&sm, &sp] {
        if (s - s.transpose()).amax() > 1e-10 * (1.0 + s.amax()) {
            return Err(LabError::InvalidPlane("asymmetric graph matrix".into()));
        }
    }
    let diff = &sp - &sm;
    let eig = SymmetricEigen::new(0.5 * (&diff + diff.transpose()));
    let rank = eig.eigenvalues.iter().filter(|v| v.abs() > tol).count();
    Ok(minus.dim() - rank)
}

/// Smallest eigenvalue of `S₊ − S₋`; non-negative when `G₋ ≤ G₊`.
pub fn order_margin(minus: &LagrangianPlane, plus: &LagrangianPlane) -> Result<f64> {
    match (minus.graph(), plus.graph()) {
        (Some(a), Some(b)) => {
            let d = &b - &a;
            Ok(SymmetricEigen::new(0.5 * (&d + d.transpose())).eigenvalues.min())
        }
        _ => Err(LabError::InvalidPlane("both planes must be graphs".into())),
    }
}

/// `|D(π∘φ_{−t})·w|` at each requested time.
pub fn backward_projection_growth(
    h: &dyn Hamiltonian,
    z: &CotangentState,
    w: &[f64],
    times: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let n = h.dim();
    let spec = IntegratorSpec::for_model(h, step);
    times
        .iter()
        .map(|&t| {
            let f = DMatrix::from_column_slice(2 * n, 1, w);
            let mut prop = Propagator::new(h, spec, &z.theta, &z.p).with_frame(f);
            prop.advance(-t)?;
            Ok(prop.frame.as_ref().expect("frame present").rows(0, n).norm())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Sorted in decreasing order.
    pub exponents: Vec<f64>,
    pub horizon: f64,
    pub zero_count: usize,
    pub threshold: f64,
    pub renormalization_interval: f64,
}

impl LyapunovReport {
    /// `max |λ_i + λ_{2n+1−i}|`: deviation from the symplectic pairing.
    pub fn pairing_defect(&self) -> f64 {
        let m = self.exponents.len();
        (0..m / 2)
            .map(|i| (self.exponents[i] + self.exponents[m - 1 - i]).abs())
            .fold(0.0, f64::max)
    }
}

fn qr_exponents(
    h: &dyn Hamiltonian,
    z: &CotangentState,
    horizon: f64,
    spec: &IntegratorSpec,
    interval: f64,
) -> Result<Vec<f64>> {
    let n = h.dim();
    let mut prop = Propagator::new(h, *spec, &z.theta, &z.p).with_frame(DMatrix::identity(2 * n, 2 * n));
    let blocks = (horizon / interval).round().max(1.0) as usize;
    let dt_block = horizon / blocks as f64;
    let mut sums = vec![0.0; 2 * n];
    for _ in 0..blocks {
        prop.advance(dt_block)?;
        let f = prop.frame.take().expect("frame present");
        if !f.iter().all(|v| v.is_finite()) {
            return Err(LabError::Overflow {
                last_valid_t: prop.time - dt_block,
            });
        }
        let (q, diag) = positive_qr(&f);
        for (s, d) in sums.iter_mut().zip(diag.iter()) {
            *s += d.ln();
        }
        prop.frame = Some(q);
    }
    let mut ex: Vec<f64> = sums.into_iter().map(|s| s / horizon).collect();
    ex.sort_by(|a, b| b.total_cmp(a));
    Ok(ex)
}

/// Lyapunov exponents by discrete QR on the full `2n`-frame.
pub fn lyapunov_spectrum(
    h: &dyn Hamiltonian,
    z: &CotangentState,
    horizon: f64,
    spec: &IntegratorSpec,
    interval: f64,
) -> Result<LyapunovReport> {
    if !(horizon > 0.0 && interval > 0.0) {
        return Err(LabError::Precondition("horizon and interval must be positive".into()));
    }
    spec.validate()?;
    let (exponents, used) = match qr_exponents(h, z, horizon, spec, interval) {
        Ok(e) => (e, interval),
        Err(LabError::Overflow { .. }) | Err(LabError::StepFailure { .. }) => {
            (qr_exponents(h, z, horizon, spec, 0.5 * interval)?, 0.5 * interval)
        }
        Err(e) => return Err(e),
    };
    let threshold = (5.0 / horizon).max(1e-3);
    let zero_count = exponents.iter().filter(|l| l.abs() < threshold).count();
    Ok(LyapunovReport {
        exponents,
        horizon,
        zero_count,
        threshold,
        renormalization_interval: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Catalogue;

    #[test]
    fn graph_and_frame_representations() {
        let z = CotangentState::new(&[0.0], &[0.0]);
        let f = DMatrix::from_column_slice(2, 1, &[2.0, 3.0]);
        let p = LagrangianPlane::from_frame(z.clone(), &f).unwrap();
        assert!((p.graph().unwrap()[(0, 0)] - 1.5).abs() < 1e-14);
        let v = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let p = LagrangianPlane::from_frame(z, &v).unwrap();
        assert!(!p.is_graph());
    }

    #[test]
    fn flat_bundles_shrink_like_one_over_t() {
        let h = Catalogue::Flat { n: 2 };
        let z = CotangentState::new(&[0.1, 0.2], &[0.3, -0.7]);
        let gp = green_plus(&h, &z, 100.0, 0.01).unwrap();
        let s = gp.plane.graph().unwrap();
        assert!((&s - DMatrix::identity(2, 2) / 100.0).amax() < 1e-10);
        assert_eq!(gp.rate, ConvergenceRate::Algebraic);
        let gm = green_minus(&h, &z, 100.0, 0.01).unwrap();
        assert_eq!(green_intersection_dim(gm.limit(), gp.limit(), 1e-6).unwrap(), 2);
    }

    #[test]
    fn qr_keeps_positive_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]);
        let (q, d) = positive_qr(&m);
        assert!(d.iter().all(|v| *v > 0.0));
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).amax() < 1e-14);
    }
}
