use std::f64::consts::PI;
use std::time::Instant;

use tonelli_core::action::MinimizerOptions;
use tonelli_core::periodic::{build_torus, cohomology_class_of, period_action_profile, zero_class_check, TorusOptions};
use tonelli_core::Catalogue;

fn cubic_root() -> f64 {
    // p + p³ = 1 by bisection
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + mid.powi(3) < 1.0 {
            lo = mid
        } else {
            hi = mid
        }
    }
    lo
}

#[test]
fn convex_flat_leaf_is_the_scalar_root() {
    let h = Catalogue::ConvexFlat { n: 1, quartic: 1.0 };
    let t = build_torus(&h, 1.0, &[1], 64, &TorusOptions::default()).unwrap();
    let root = cubic_root();
    for (p, v) in t.momentum.iter().zip(&t.velocity) {
        assert!((p[0] - root).abs() < 1e-8);
        assert!((v[0] - 1.0).abs() < 1e-8);
    }
    assert!(t.diagnostics.closure_residual < 1e-8);
    assert!(t.diagnostics.action_spread < 1e-7);
}

#[test]
fn shear_leaf_follows_the_generator() {
    let h = Catalogue::Shear {
        c: vec![0.0],
        amplitude: 0.3,
    };
    let t0 = Instant::now();
    let t = build_torus(&h, 1.0, &[1], 64, &TorusOptions::default()).unwrap();
    eprintln!("shear n=1 build {:?}", t0.elapsed());
    for (x, p) in t.grid.points().iter().zip(&t.momentum) {
        let exact = 1.0 + 0.3 * (2.0 * PI * x[0]).cos();
        assert!((p[0] - exact).abs() < 1e-6, "{} vs {}", p[0], exact);
    }
    let d = &t.diagnostics;
    assert!(d.closure_residual < 1e-8);
    assert!(d.action_spread < 1e-7, "spread {}", d.action_spread);
    assert!(d.fixedness < 1e-7);
    assert!(d.invariance_quarter < 1e-6 && d.invariance_half < 1e-6, "{d:?}");
    assert!(d.winding_matches);
    // f ≡ |r|²/2T
    assert!((t.action_per_orbit - 0.5).abs() < 1e-7);
    let c = cohomology_class_of(&t, 1e-6);
    assert!((c.c[0] - 1.0).abs() < 1e-9);
}

#[test]
fn shear_plane_torus_passes_all_diagnostics() {
    let h = Catalogue::Shear {
        c: vec![0.1, -0.2],
        amplitude: 0.3,
    };
    let t0 = Instant::now();
    let t = build_torus(&h, 1.0, &[1, 0], 32, &TorusOptions::default()).unwrap();
    eprintln!("shear n=2 build {:?}", t0.elapsed());
    let d = &t.diagnostics;
    assert!(d.closure_residual < 1e-8);
    assert!(d.action_spread < 1e-7, "spread {}", d.action_spread);
    assert!(d.lagrangian_defect < 1e-6, "{}", d.lagrangian_defect);
    assert!(d.invariance_quarter < 1e-6 && d.invariance_half < 1e-6, "{d:?}");
}

#[test]
fn zero_class_is_the_critical_graph() {
    let opts = TorusOptions::default();
    for h in [Catalogue::Flat { n: 2 }, Catalogue::ConvexFlat { n: 1, quartic: 1.0 }] {
        let z = zero_class_check(&h, 1.0, 16, &opts).unwrap();
        assert!(z.max_velocity < 1e-8);
        assert!(z.torus.momentum.iter().flatten().all(|p| p.abs() < 1e-12));
    }
    let h = Catalogue::Shear {
        c: vec![0.0],
        amplitude: 0.3,
    };
    let z = zero_class_check(&h, 1.0, 64, &opts).unwrap();
    for (x, p) in z.torus.grid.points().iter().zip(&z.torus.momentum) {
        assert!((p[0] - 0.3 * (2.0 * PI * x[0]).cos()).abs() < 1e-6);
    }
    assert!(cohomology_class_of(&z.torus, 1e-6).c[0].abs() < 1e-9);
}

#[test]
fn action_profiles() {
    let opts = MinimizerOptions::default();
    let flat = Catalogue::Flat { n: 2 };
    let prof = period_action_profile(&flat, 2.0, &[1, 0], 8, &opts).unwrap();
    assert!(prof.spread < 1e-10);
    assert!(prof.values.iter().all(|v| (v.unwrap() - 0.25).abs() < 1e-10));
    let shear = Catalogue::Shear {
        c: vec![0.0],
        amplitude: 0.3,
    };
    let prof = period_action_profile(&shear, 1.0, &[1], 16, &opts).unwrap();
    assert!(prof.values.iter().all(|v| (v.unwrap() - 0.5).abs() < 1e-7));
    let mech = Catalogue::Mech2d { epsilon: 0.2 };
    let prof = period_action_profile(&mech, 1.0, &[1, 0], 8, &opts).unwrap();
    eprintln!("mech2d spread {:.10}", prof.spread);
    assert!(prof.spread > 0.0);
}
