use std::f64::consts::PI;

use tonelli_core::green::{
    backward_projection_growth, conjugate_scan, green_intersection_dim, green_minus, green_plus, lyapunov_spectrum,
    order_margin, ConvergenceRate,
};
use tonelli_core::{Catalogue, CotangentState, Hamiltonian, IntegratorSpec};

#[test]
fn pendulum_hyperbolic_slopes() {
    let h = Catalogue::Pendulum;
    let z = CotangentState::new(&[0.0], &[0.0]);
    let gp = green_plus(&h, &z, 5.0, 1e-4).unwrap();
    let gm = green_minus(&h, &z, 5.0, 1e-4).unwrap();
    assert_eq!(gp.rate, ConvergenceRate::Converged);
    let sp = gp.limit().graph().unwrap()[(0, 0)];
    let sm = gm.limit().graph().unwrap()[(0, 0)];
    assert!((sp - 2.0 * PI).abs() < 1e-6, "{sp}");
    assert!((sm + 2.0 * PI).abs() < 1e-6, "{sm}");
    assert_eq!(green_intersection_dim(gm.limit(), gp.limit(), 1e-6).unwrap(), 0);
    assert!(order_margin(gm.limit(), gp.limit()).unwrap() > 0.0);
}

#[test]
fn shear_bundles_coincide_with_the_leaf_tangent() {
    let h = Catalogue::Shear {
        c: vec![0.4],
        amplitude: 0.3,
    };
    for theta in [0.1, 0.37, 0.8] {
        let p = 0.4 + h.shear_dg(theta);
        let z = CotangentState::new(&[theta], &[p]);
        let gp = green_plus(&h, &z, 20.0, 5e-4).unwrap();
        let gm = green_minus(&h, &z, 20.0, 5e-4).unwrap();
        assert_eq!(gp.rate, ConvergenceRate::Algebraic);
        let exact = h.shear_ddg(theta);
        let sp = gp.limit().graph().unwrap()[(0, 0)];
        let sm = gm.limit().graph().unwrap()[(0, 0)];
        assert!((sp - exact).abs() < 1e-6, "{sp} vs {exact}");
        assert!((sm - exact).abs() < 1e-6, "{sm} vs {exact}");
        assert_eq!(green_intersection_dim(gm.limit(), gp.limit(), 1e-5).unwrap(), 1);
    }
}

#[test]
fn green_plus_decreases_with_the_horizon() {
    let h = Catalogue::Flat { n: 1 };
    let z = CotangentState::new(&[0.2], &[0.5]);
    let mut last = f64::INFINITY;
    for t in [1.0, 2.0, 4.0, 8.0] {
        let s = green_plus(&h, &z, t, 0.01).unwrap().plane.graph().unwrap()[(0, 0)];
        assert!(s <= last + 1e-8);
        last = s;
    }
}

#[test]
fn conjugate_points() {
    let pend = Catalogue::Pendulum;
    let roots = conjugate_scan(&pend, &CotangentState::new(&[0.5], &[1e-6]), 0.7, 1e-3).unwrap();
    assert!((roots[0] - 0.5).abs() < 1e-3, "{roots:?}");
    let flat = Catalogue::Flat { n: 2 };
    assert!(
        conjugate_scan(&flat, &CotangentState::new(&[0.0, 0.0], &[1.0, 0.3]), 100.0, 1e-2)
            .unwrap()
            .is_empty()
    );
    let shear = Catalogue::Shear {
        c: vec![0.2],
        amplitude: 0.3,
    };
    assert!(
        conjugate_scan(&shear, &CotangentState::new(&[0.3], &[0.9]), 100.0, 1e-2)
            .unwrap()
            .is_empty()
    );
}

#[test]
fn backward_growth_separates_the_bundle() {
    let h = Catalogue::Flat { n: 1 };
    let z = CotangentState::new(&[0.0], &[0.3]);
    let times = [1.0, 10.0, 100.0];
    let inside = backward_projection_growth(&h, &z, &[1.0, 0.0], &times, 0.01).unwrap();
    assert!(inside.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let outside = backward_projection_growth(&h, &z, &[0.0, 1.0], &times, 0.01).unwrap();
    assert!(outside.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn lyapunov_spectra() {
    let pend = Catalogue::Pendulum;
    let spec = IntegratorSpec::for_model(&pend, 1e-3);
    let r = lyapunov_spectrum(&pend, &CotangentState::new(&[0.0], &[0.0]), 100.0, &spec, 1.0).unwrap();
    assert!((r.exponents[0] / (2.0 * PI) - 1.0).abs() < 0.01);
    assert!((r.exponents[1] / (2.0 * PI) + 1.0).abs() < 0.01);
    assert_eq!(r.zero_count, 0);
    for (h, z, step) in [
        (
            Catalogue::Flat { n: 2 },
            CotangentState::new(&[0.1, 0.2], &[0.3, 0.4]),
            0.1,
        ),
        (
            Catalogue::ConvexFlat { n: 1, quartic: 1.0 },
            CotangentState::new(&[0.1], &[0.68]),
            0.01,
        ),
        (
            Catalogue::Shear {
                c: vec![0.2],
                amplitude: 0.3,
            },
            CotangentState::new(&[0.0], &[0.5]),
            0.01,
        ),
    ] {
        let spec = IntegratorSpec::for_model(&h, step);
        let r = lyapunov_spectrum(&h, &z, 1e4, &spec, 1.0).unwrap();
        assert!(
            r.exponents.iter().all(|l| l.abs() < 1e-3),
            "{} {:?}",
            h.name(),
            r.exponents
        );
        assert_eq!(r.zero_count, 2 * h.dim());
        assert!(r.pairing_defect() < r.threshold);
    }
}
