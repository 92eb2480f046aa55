use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{TorusEmbedding, TorusMap};
use crate::error::Result;

/// A named function of `(θ, I)`.
pub struct Observable {
    pub name: String,
    pub f: Box<dyn Fn(&[f64], &[f64]) -> f64 + Sync>,
}

impl Observable {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64], &[f64]) -> f64 + Sync + 'static) -> Self {
        Observable {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

/// Five trigonometric observables, two of which also involve the action.
pub fn default_observables() -> Vec<Observable> {
    let tau = 2.0 * PI;
    vec![
        Observable::new("cos 2πθ₁", move |t, _| (tau * t[0]).cos()),
        Observable::new("sin 2πθ₁", move |t, _| (tau * t[0]).sin()),
        Observable::new("cos 2π(θ₁ + θ_n) + sin 4πθ₁", move |t, _| {
            (tau * (t[0] + t[t.len() - 1])).cos() + (2.0 * tau * t[0]).sin()
        }),
        Observable::new("I₁ cos 2πθ₁", move |t, a| a[0] * (tau * t[0]).cos()),
        Observable::new("I₁² + sin² 2πθ₁", move |t, a| {
            a[0] * a[0] + (tau * t[0]).sin().powi(2)
        }),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableComparison {
    pub name: String,
    pub birkhoff: f64,
    pub space: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquidistributionReport {
    pub iterates: usize,
    pub observables: Vec<ObservableComparison>,
    pub max_gap: f64,
}

/// Birkhoff averages along the orbit of `K(0)` under `U` against the grid
/// average of `f ∘ K`, which is spectrally accurate for smooth `f`.
pub fn equidistribution_probe(
    map: &dyn TorusMap,
    embedding: &TorusEmbedding,
    observables: &[Observable],
    iterates: usize,
) -> Result<EquidistributionReport> {
    let grid = embedding.grid;
    let space: Vec<f64> = observables
        .iter()
        .map(|o| {
            (0..grid.len())
                .map(|idx| {
                    let (t, a) = embedding.node(idx);
                    (o.f)(&t, &a)
                })
                .sum::<f64>()
                / grid.len() as f64
        })
        .collect();
    let (mut theta, mut action) = embedding.node(0);
    let mut sums = vec![0.0; observables.len()];
    for _ in 0..iterates {
        for (s, o) in sums.iter_mut().zip(observables) {
            *s += (o.f)(&theta, &action);
        }
        let (t2, a2) = map.eval(&theta, &action)?;
        // keep the angle in [0, 1) so that roundoff does not grow with the lift
        theta = t2.into_iter().map(|x| x - x.floor()).collect();
        action = a2;
    }
    let observables: Vec<ObservableComparison> = observables
        .iter()
        .zip(sums.iter().zip(&space))
        .map(|(o, (s, sp))| {
            let birkhoff = s / iterates as f64;
            ObservableComparison {
                name: o.name.clone(),
                birkhoff,
                space: *sp,
                gap: (birkhoff - sp).abs(),
            }
        })
        .collect();
    let max_gap = observables.iter().map(|o| o.gap).fold(0.0, f64::max);
    Ok(EquidistributionReport {
        iterates,
        observables,
        max_gap,
    })
}
