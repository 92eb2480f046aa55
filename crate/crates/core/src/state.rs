use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A point `(θ, p)` of `T*T^n` with `θ ∈ [0,1)^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotangentState {
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
}

/// Reduce an angle to `[0, 1)`. Returns the reduced value and the integer part.
pub fn reduce_angle(x: f64) -> (f64, i64) {
    let k = x.floor();
    let mut r = x - k;
    let mut k = k as i64;
    // x slightly below an integer can round to exactly 1.0
    if r >= 1.0 {
        r -= 1.0;
        k += 1;
    }
    (r, k)
}

impl CotangentState {
    pub fn new(theta: &[f64], p: &[f64]) -> Self {
        assert_eq!(theta.len(), p.len(), "theta and p dimensions differ");
        CotangentState {
            theta: theta.iter().map(|&t| reduce_angle(t).0).collect(),
            p: p.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.p).all(|v| v.is_finite())
    }
}

/// A point of the universal cover `T*R^n`, stored as its reduced base point
/// plus the integer winding `x − θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedState {
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub winding: Vec<i64>,
}

impl LiftedState {
    pub fn from_lift(x: &[f64], p: &[f64]) -> Self {
        assert_eq!(x.len(), p.len(), "x and p dimensions differ");
        let (theta, winding) = x.iter().map(|&v| reduce_angle(v)).unzip();
        LiftedState {
            theta,
            p: p.to_vec(),
            winding,
        }
    }

    pub fn from_base(z: &CotangentState) -> Self {
        LiftedState {
            theta: z.theta.clone(),
            p: z.p.clone(),
            winding: vec![0; z.dim()],
        }
    }

    /// The lifted position `θ + winding`.
    pub fn x(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.winding)
            .map(|(t, w)| t + *w as f64)
            .collect()
    }

    pub fn base(&self) -> CotangentState {
        CotangentState {
            theta: self.theta.clone(),
            p: self.p.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Deck transformation `x ↦ x + r`.
    pub fn translated(&self, r: &[i64]) -> Self {
        let mut out = self.clone();
        for (w, k) in out.winding.iter_mut().zip(r) {
            *w += k;
        }
        out
    }
}

/// Tangent vectors `(δθ, δp)` at a base point, one per column of a `2n × k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub base: CotangentState,
    pub columns: DMatrix<f64>,
}

impl TangentFrame {
    pub fn new(base: CotangentState, columns: DMatrix<f64>) -> Self {
        assert_eq!(columns.nrows(), 2 * base.dim(), "frame rows must be 2n");
        assert!(columns.ncols() <= 2 * base.dim(), "at most 2n columns");
        TangentFrame { base, columns }
    }

    /// The vertical subspace `V* = {0} × R^n`.
    pub fn vertical(base: CotangentState) -> Self {
        let n = base.dim();
        let mut m = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            m[(n + i, i)] = 1.0;
        }
        TangentFrame { base, columns: m }
    }

    pub fn identity(base: CotangentState) -> Self {
        let n = base.dim();
        TangentFrame {
            base,
            columns: DMatrix::identity(2 * n, 2 * n),
        }
    }

    /// Gram matrix of the standard symplectic form, `Ω(a, b) = a_θ·b_p − a_p·b_θ`.
    pub fn symplectic_gram(&self) -> DMatrix<f64> {
        symplectic_gram(&self.columns)
    }
}

pub fn symplectic_gram(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cols.nrows() / 2;
    let x = cols.rows(0, n);
    let y = cols.rows(n, n);
    x.transpose() * y - y.transpose() * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lift_records_winding() {
        let z = LiftedState::from_lift(&[0.75, 1.5], &[1.0, 2.0]);
        assert_eq!(z.winding, vec![0, 1]);
        assert_eq!(z.theta, vec![0.75, 0.5]);
        assert_eq!(z.x(), vec![0.75, 1.5]);
        let neg = LiftedState::from_lift(&[-0.25], &[0.0]);
        assert_eq!(neg.winding, vec![-1]);
        assert!((neg.theta[0] - 0.75).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn reduction_stays_in_unit_interval(x in -1e6f64..1e6) {
            let (r, k) = reduce_angle(x);
            prop_assert!((0.0..1.0).contains(&r));
            prop_assert!((r + k as f64 - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}
