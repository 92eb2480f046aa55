use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tonelli_core::action::{action_of_path, check_triangle, min_action, DiscretePath, MinimizerOptions};
use tonelli_core::integrator::trajectory;
use tonelli_core::{Catalogue, IntegratorSpec};

/// Direct minimization of the Störmer–Verlet discrete action of the pendulum,
/// `Σ Δt [½w² − ½(V(x_k) + V(x_{k+1}))]`, by Newton with a tridiagonal solve.
fn pendulum_discrete_oracle(a: f64, b: f64, t: f64, n: usize) -> f64 {
    let dt = t / n as f64;
    let v = |x: f64| (2.0 * PI * x).cos();
    let dv = |x: f64| -2.0 * PI * (2.0 * PI * x).sin();
    let ddv = |x: f64| -4.0 * PI * PI * (2.0 * PI * x).cos();
    let mut x: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
    for _ in 0..50 {
        // gradient and tridiagonal Hessian in the interior nodes
        let m = n - 1;
        let mut g = vec![0.0; m];
        let mut d = vec![0.0; m];
        let off = -1.0 / dt;
        for i in 0..m {
            let k = i + 1;
            g[i] = (2.0 * x[k] - x[k - 1] - x[k + 1]) / dt - dt * dv(x[k]);
            d[i] = 2.0 / dt - dt * ddv(x[k]);
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-14 {
            break;
        }
        // Thomas algorithm
        let mut c = vec![0.0; m];
        let mut r = vec![0.0; m];
        c[0] = off / d[0];
        r[0] = -g[0] / d[0];
        for i in 1..m {
            let denom = d[i] - off * c[i - 1];
            c[i] = off / denom;
            r[i] = (-g[i] - off * r[i - 1]) / denom;
        }
        let mut step = vec![0.0; m];
        step[m - 1] = r[m - 1];
        for i in (0..m - 1).rev() {
            step[i] = r[i] - c[i] * step[i + 1];
        }
        for i in 0..m {
            x[i + 1] += step[i];
        }
    }
    (0..n)
        .map(|k| {
            let w = (x[k + 1] - x[k]) / dt;
            dt * (0.5 * w * w - 0.5 * (v(x[k]) + v(x[k + 1])))
        })
        .sum()
}

#[test]
fn pendulum_minimum_matches_fine_grid_oracle() {
    let h = Catalogue::Pendulum;
    let r = min_action(&h, &[0.0], &[0.5], 1.0, &MinimizerOptions::default()).unwrap();
    let coarse = pendulum_discrete_oracle(0.0, 0.5, 1.0, 2048);
    let fine = pendulum_discrete_oracle(0.0, 0.5, 1.0, 4096);
    let oracle = (4.0 * fine - coarse) / 3.0;
    assert!((fine - oracle).abs() < 1e-6);
    assert!((r.value - oracle).abs() < 1e-6, "{} vs {}", r.value, oracle);
    assert!(r.converged && r.gradient_norm < 1e-9);
}

#[test]
fn pendulum_path_action_converges_under_refinement() {
    let h = Catalogue::Pendulum;
    let spec = IntegratorSpec::for_model(&h, 1e-3);
    let path_at = |stride: usize| {
        let samples = trajectory(&h, &[0.0], &[0.5], 1.0, &spec).unwrap();
        let picked: Vec<_> = samples.iter().step_by(stride).collect();
        DiscretePath::new(
            picked.iter().map(|s| s.t).collect(),
            picked.iter().map(|s| s.x.iter().copied().collect()).collect(),
        )
        .unwrap()
    };
    let fine = action_of_path(&h, &path_at(1)).unwrap();
    let half = action_of_path(&h, &path_at(2)).unwrap();
    let quarter = action_of_path(&h, &path_at(4)).unwrap();
    // second order: successive differences shrink by about 4
    let ratio = (quarter - half) / (half - fine);
    assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    assert!((half - fine).abs() < 1e-5);
}

#[test]
fn flat_triangle_closed_forms() {
    let h = Catalogue::Flat { n: 1 };
    let opts = MinimizerOptions::default();
    let rec = check_triangle(&h, &[0.0], &[0.3], &[0.5], 1.0, 1.0, &opts).unwrap();
    assert!((rec.lhs - 0.0625).abs() < 1e-10);
    assert!((rec.rhs - 0.065).abs() < 1e-10);
    assert!(!rec.equality_witness);
    let eq = check_triangle(&h, &[0.0], &[0.25], &[0.5], 1.0, 1.0, &opts).unwrap();
    assert!(eq.gap.abs() < 1e-10 && eq.equality_witness);
}

#[test]
fn pendulum_random_triangles_are_subadditive() {
    let h = Catalogue::Pendulum;
    let opts = MinimizerOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(0.0..1.0);
        let y: f64 = x + rng.gen_range(-0.6..0.6);
        let z: f64 = y + rng.gen_range(-0.6..0.6);
        let t = rng.gen_range(0.2..1.0);
        let t2 = rng.gen_range(0.2..1.0);
        let rec = check_triangle(&h, &[x], &[y], &[z], t, t2, &opts).unwrap();
        assert!(rec.gap >= -1e-8, "gap {} at {x} {y} {z} {t} {t2}", rec.gap);
    }
}

#[test]
fn minimum_is_stable_under_grid_refinement() {
    let h = Catalogue::Mech2d { epsilon: 0.2 };
    let coarse = MinimizerOptions {
        segments_per_unit: 24,
        ..MinimizerOptions::default()
    };
    let a = min_action(&h, &[0.1, 0.2], &[0.6, 0.1], 1.0, &coarse).unwrap();
    let b = min_action(&h, &[0.1, 0.2], &[0.6, 0.1], 1.0, &MinimizerOptions::default()).unwrap();
    assert!((a.value - b.value).abs() < 1e-9);
}
