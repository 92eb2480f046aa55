use std::f64::consts::PI;

use tonelli_core::periodic::{build_torus, cohomology_class_of, TorusOptions};
use tonelli_core::weak_kam::{
    aubry_estimate, foliation_with_kernel, lax_oleinik_alpha, radial_convergence_probe, Kernel, KernelKind,
    WeakKamOptions,
};
use tonelli_core::Catalogue;

/// Root of `p + p³ = v`.
fn cubic_inverse(v: f64) -> f64 {
    let (mut lo, mut hi) = (-2.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + mid.powi(3) < v {
            lo = mid
        } else {
            hi = mid
        }
    }
    lo
}

fn classes_1d() -> Vec<Vec<f64>> {
    (0..21).map(|k| vec![-1.0 + 0.1 * k as f64]).collect()
}

#[test]
fn flat_alpha_is_half_norm_squared() {
    let h = Catalogue::Flat { n: 1 };
    let opts = WeakKamOptions::default();
    // 80 nodes and τ = 0.5 put c·τ on the grid for every c in steps of 0.1
    let kernel = Kernel::build(&h, 80, opts.tau, &opts).unwrap();
    assert_eq!(kernel.kind, KernelKind::Straight);
    let report = foliation_with_kernel(&h, &kernel, 17, &classes_1d(), &opts).unwrap();
    assert!(report.hypothesis_violated.is_empty());
    for ((c, alpha), (p, value)) in report
        .classes
        .iter()
        .zip(&report.alphas)
        .zip(report.momenta.iter().zip(&report.value_grids))
    {
        assert!((alpha - 0.5 * c[0] * c[0]).abs() < 1e-6, "c={c:?}: {alpha}");
        assert!((p[0] - c[0]).abs() < 1e-9);
        assert!(value.u.iter().all(|u| u.abs() < 1e-9));
        assert!(value.converged);
    }
    assert!(report.monotone);
    assert!((report.injectivity_ratio - 1.0).abs() < 1e-9);
    assert!((report.leaf_min_distance - 0.1).abs() < 1e-9);
    assert!(report.energy_defect < 1e-9);
    assert!(report.alpha_second_difference.unwrap() > -1e-6);
}

#[test]
fn flat_plane_alpha_and_radial_loops() {
    let h = Catalogue::Flat { n: 2 };
    let opts = WeakKamOptions::default();
    let value = lax_oleinik_alpha(&h, &[0.5, 0.0], 32, &opts).unwrap();
    assert!((value.alpha - 0.125).abs() < 1e-6);
    let kernel = Kernel::build(&h, 32, opts.tau, &opts).unwrap();
    let aubry = aubry_estimate(&kernel, &value, &opts).unwrap();
    assert!(aubry.covers_grid);

    let report = radial_convergence_probe(&h, &value, &aubry, 5, &[1.0, 2.0, 4.0, 8.0], &opts.minimizer).unwrap();
    for s in &report.samples[2..] {
        assert!(s.distance < 1e-6, "T={}: {}", s.period, s.distance);
    }
    assert!(report.settles_below(1e-6));
    assert!(radial_convergence_probe(&h, &value, &aubry, 5, &[0.01], &opts.minimizer).is_err());
}

#[test]
fn convex_flat_sections_are_constant() {
    let h = Catalogue::ConvexFlat { n: 1, quartic: 1.0 };
    let opts = WeakKamOptions::default();
    let kernel = Kernel::build(&h, 80, opts.tau, &opts).unwrap();
    // classes whose minimizing velocity h′(c) moves τ·h′(c) onto the grid
    let classes: Vec<Vec<f64>> = [-0.5, 0.0, 0.25, 0.75]
        .iter()
        .map(|v| vec![cubic_inverse(*v)])
        .collect();
    let report = foliation_with_kernel(&h, &kernel, 3, &classes, &opts).unwrap();
    for (c, (alpha, p)) in classes.iter().zip(report.alphas.iter().zip(&report.momenta)) {
        let exact = 0.5 * c[0].powi(2) + 0.25 * c[0].powi(4);
        assert!((alpha - exact).abs() < 1e-6, "c={c:?}: {alpha} vs {exact}");
        assert!((p[0] - c[0]).abs() < 1e-9);
    }
}

#[test]
fn pendulum_critical_value_and_separatrix() {
    let h = Catalogue::Pendulum;
    let opts = WeakKamOptions::default();
    let kernel = Kernel::build(&h, 256, opts.tau, &opts).unwrap();
    assert_eq!(kernel.kind, KernelKind::Fan);
    let value = tonelli_core::weak_kam::alpha_with_kernel(&kernel, &[0.0], &opts);
    assert!(value.converged);
    // the mechanical critical value is the maximum of the potential
    assert!((value.alpha - 1.0).abs() < 5e-3, "α(0) = {}", value.alpha);
    assert!(value.energy_defect(&h) < 5e-3);
    let aubry = aubry_estimate(&kernel, &value, &opts).unwrap();
    assert!(aubry.mask[0], "the hyperbolic point must be Aubry");
    assert!(!aubry.covers_grid);
    for (x, p) in value.grid.points().iter().zip(&value.momenta) {
        let sep = 2.0 * (PI * x[0]).sin().abs();
        assert!((p[0].abs() - sep).abs() < 2e-2, "x={}: {} vs ±{sep}", x[0], p[0]);
    }
}

#[test]
fn shear_leaves_follow_the_generator() {
    let h = Catalogue::Shear {
        c: vec![0.0],
        amplitude: 0.3,
    };
    let opts = WeakKamOptions::default();
    let kernel = Kernel::build(&h, 80, opts.tau, &opts).unwrap();
    let classes: Vec<Vec<f64>> = [-0.4, 0.0, 0.3, 0.5].iter().map(|c| vec![*c]).collect();
    let report = foliation_with_kernel(&h, &kernel, 10, &classes, &opts).unwrap();
    assert!(
        report.hypothesis_violated.is_empty(),
        "{:?}",
        report.hypothesis_violated
    );
    for (c, value) in classes.iter().zip(&report.value_grids) {
        assert!(
            (value.alpha - 0.5 * c[0] * c[0]).abs() < 5e-3,
            "c={c:?}: {}",
            value.alpha
        );
        for (x, p) in value.grid.points().iter().zip(&value.momenta) {
            let leaf = c[0] + h.shear_dg(x[0]);
            assert!((p[0] - leaf).abs() < 1e-3, "x={}: {} vs {leaf}", x[0], p[0]);
        }
    }
    assert!(report.energy_defect < 5e-3);
    assert!(report.monotone && report.leaf_min_distance > 0.0);

    let value = &report.value_grids[3];
    let aubry = aubry_estimate(&kernel, value, &opts).unwrap();
    let radial = radial_convergence_probe(&h, value, &aubry, 10, &[1.0, 2.0, 4.0, 8.0], &opts.minimizer).unwrap();
    assert!((radial.aubry_velocity[0] - 0.5).abs() < 1e-3);
    assert!(radial.samples.last().unwrap().distance < 1e-3, "{radial:?}");
}

#[test]
fn periodic_leaf_is_the_aubry_graph_of_its_class() {
    let h = Catalogue::Shear {
        c: vec![0.0],
        amplitude: 0.3,
    };
    let torus = build_torus(&h, 1.0, &[1], 64, &TorusOptions::default()).unwrap();
    let class = cohomology_class_of(&torus, 1e-6);
    let opts = WeakKamOptions::default();
    let kernel = Kernel::build(&h, 64, opts.tau, &opts).unwrap();
    let value = tonelli_core::weak_kam::alpha_with_kernel(&kernel, &class.c, &opts);
    let aubry = aubry_estimate(&kernel, &value, &opts).unwrap();
    assert!(aubry.covers_grid);
    for (p, q) in value.momenta.iter().zip(&torus.momentum) {
        assert!((p[0] - q[0]).abs() < 1e-3, "{} vs {}", p[0], q[0]);
    }
}
