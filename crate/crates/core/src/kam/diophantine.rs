use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A rotation vector with a Diophantine constant certified on a finite range:
/// `|k·ω + l| ≥ γ / |k|^τ` for all `0 < |k|₁ ≤ verified_up_to` and all `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiophantineVector {
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub verified_up_to: usize,
}

fn dist_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Integer vectors with `0 < |k|₁ ≤ bound`, up to sign.
fn half_lattice(n: usize, bound: i64) -> Vec<Vec<i64>> {
    let mut all: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..n {
        all = all
            .into_iter()
            .flat_map(|v| {
                (-bound..=bound).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    all.into_iter()
        .filter(|k| {
            let norm: i64 = k.iter().map(|v| v.abs()).sum();
            // keep the representative whose first non-zero entry is positive
            norm > 0 && norm <= bound && k.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
        })
        .collect()
}

impl DiophantineVector {
    /// Largest `γ` valid for all `0 < |k|₁ ≤ cutoff`.
    pub fn certify(omega: &[f64], tau: f64, cutoff: usize) -> Result<Self> {
        let n = omega.len();
        if n == 0 || cutoff == 0 {
            return Err(LabError::Precondition(
                "need a non-empty ω and a positive cutoff".into(),
            ));
        }
        if tau < n as f64 {
            return Err(LabError::Precondition(format!("τ = {tau} must be at least n = {n}")));
        }
        let mut gamma = f64::INFINITY;
        for k in half_lattice(n, cutoff as i64) {
            let dot: f64 = k.iter().zip(omega).map(|(&a, w)| a as f64 * w).sum();
            let norm: i64 = k.iter().map(|v| v.abs()).sum();
            gamma = gamma.min(dist_to_integer(dot) * (norm as f64).powf(tau));
        }
        if !(gamma > 0.0) {
            return Err(LabError::HypothesisViolated(format!(
                "ω = {omega:?} is resonant below |k| = {cutoff}"
            )));
        }
        Ok(DiophantineVector {
            omega: omega.to_vec(),
            gamma,
            tau,
            verified_up_to: cutoff,
        })
    }

    /// Default vectors: the golden mean for `n = 1`, `(√2−1, √3−1)` for
    /// `n = 2`, and `(√2−1, √3−1, √5−2)` for `n = 3`.
    pub fn default_for(n: usize, cutoff: usize) -> Result<Self> {
        let omega = match n {
            1 => vec![golden()],
            2 => vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0],
            3 => vec![2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0, 5f64.sqrt() - 2.0],
            _ => {
                return Err(LabError::Precondition(format!(
                    "no default rotation vector for n = {n}"
                )))
            }
        };
        Self::certify(&omega, n as f64, cutoff)
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// Recheck the stored constant on the whole certified range.
    pub fn holds(&self) -> bool {
        half_lattice(self.dim(), self.verified_up_to as i64).iter().all(|k| {
            let dot: f64 = k.iter().zip(&self.omega).map(|(&a, w)| a as f64 * w).sum();
            let norm: i64 = k.iter().map(|v| v.abs()).sum();
            dist_to_integer(dot) >= self.gamma / (norm as f64).powf(self.tau) * (1.0 - 1e-12)
        })
    }
}

/// `(√5 − 1)/2`
pub fn golden() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_mean_constant() {
        let d = DiophantineVector::certify(&[golden()], 1.0, 500).unwrap();
        // q·‖qω‖ is smallest at q = 1, where it equals 1 − ω
        assert!((d.gamma - (1.0 - golden())).abs() < 1e-15);
        assert!(d.holds());
        assert!(DiophantineVector::certify(&[0.25], 1.0, 10).is_err());
    }

    #[test]
    fn plane_default_is_certified() {
        let d = DiophantineVector::default_for(2, 64).unwrap();
        assert!(d.gamma > 0.0 && d.holds());
    }
}
