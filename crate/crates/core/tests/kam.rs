use nalgebra::DMatrix;
use tonelli_core::fourier::Grid;
use tonelli_core::kam::{
    default_observables, equidistribution_probe, euler_composition_error, extract_twist, golden, solve_invariance,
    taylor_gap, torus_family, DiophantineVector, FamilyOptions, HamiltonianField, InvarianceOptions, LinearShearField,
    RescaledMap, StandardMap, TorusEmbedding, TorusMap, TwistMap,
};
use tonelli_core::periodic::{build_torus, TorusOptions};
use tonelli_core::{Catalogue, LabError};

/// Root of `p + p³ = s` by bisection.
fn cubic_inverse(s: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid + mid.powi(3) < s {
            lo = mid
        } else {
            hi = mid
        }
    }
    lo
}

#[test]
fn flat_twist_is_period_times_identity() {
    let h = Catalogue::Flat { n: 2 };
    let torus = build_torus(&h, 1.5, &[1, 0], 8, &TorusOptions::default()).unwrap();
    let nf = extract_twist(&h, &torus).unwrap();
    let a = nf.a_bar_matrix();
    assert!((a - DMatrix::identity(2, 2) * 1.5).amax() < 1e-10);
    assert!(nf.theta_dependence < 1e-10 && nf.b_defect < 1e-6 && nf.q_defect < 1e-10);
    assert!(nf.remainders.iter().all(|r| r.angle < 1e-6 && r.action < 1e-6));

    let map = RescaledMap::new(&h, &torus, 0.25, 1).unwrap();
    let (t, i) = map.eval(&[0.3, 0.7], &[0.4, -0.2]).unwrap();
    assert!((t[0] - (0.3 + 0.25 * 1.5 * 0.4)).abs() < 1e-12);
    assert!((t[1] - (0.7 - 0.25 * 1.5 * 0.2)).abs() < 1e-12);
    assert!((i[0] - 0.4).abs() < 1e-12 && (i[1] + 0.2).abs() < 1e-12);
}

#[test]
fn convex_flat_twist_matches_the_hessian() {
    let h = Catalogue::ConvexFlat { n: 1, quartic: 1.0 };
    let torus = build_torus(&h, 1.0, &[1], 16, &TorusOptions::default()).unwrap();
    let nf = extract_twist(&h, &torus).unwrap();
    let p = cubic_inverse(1.0);
    let exact = 1.0 + 3.0 * p * p;
    assert!((nf.a_bar[0][0] - exact).abs() < 1e-8, "{} vs {exact}", nf.a_bar[0][0]);
    assert!((nf.a_bar[0][0] - 2.3967).abs() < 1e-4);
    assert!(nf.min_eigenvalue > 0.0);

    // Φ_ε − (θ + εĀI, I) is O(ε²), so halving ε divides it by four
    let gap = |eps: f64| {
        let map = RescaledMap::new(&h, &torus, eps, 1).unwrap();
        taylor_gap(&map, &nf.a_bar_matrix(), &[0.2], &[0.5]).unwrap()
    };
    let (a1, i1) = gap(0.1);
    let (a2, i2) = gap(0.05);
    assert!(i1 < 1e-12 && i2 < 1e-12);
    assert!((a1 / a2 - 4.0).abs() < 0.3, "ratio {}", a1 / a2);
}

#[test]
fn shear_twist_is_leafwise_flat() {
    let h = Catalogue::Shear {
        c: vec![0.0],
        amplitude: 0.3,
    };
    let torus = build_torus(&h, 1.0, &[1], 32, &TorusOptions::default()).unwrap();
    let nf = extract_twist(&h, &torus).unwrap();
    assert!((nf.a_bar[0][0] - 1.0).abs() < 1e-6, "{:?}", nf.a_bar);
    assert!(nf.theta_dependence < 1e-5);
    assert!(nf.b_defect < 1e-5, "B defect {}", nf.b_defect);
    assert!(nf.q_defect < 1e-8);
}

#[test]
fn pendulum_twist_is_rejected() {
    // the rotational leaf exists, but its twist varies along it
    let h = Catalogue::Pendulum;
    let torus = build_torus(&h, 1.0, &[2], 32, &TorusOptions::default()).unwrap();
    let err = extract_twist(&h, &torus).unwrap_err();
    assert!(matches!(err, LabError::HypothesisViolated(_)), "{err}");
}

#[test]
fn euler_composition_converges_at_first_order() {
    let h = Catalogue::Pendulum;
    let field = HamiltonianField::new(&h);
    let samples: Vec<Vec<f64>> = (0..6)
        .map(|k| vec![k as f64 / 6.0, 0.8 * ((k as f64) / 5.0 - 0.5)])
        .collect();
    let eps = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4];
    let report = euler_composition_error(&field, &samples, &eps, 1.0, 10.0).unwrap();
    let slope = report.slope.unwrap();
    assert!(
        (0.9..=1.1).contains(&slope),
        "slope {slope}, errors {:?}",
        report.errors
    );

    let empty = euler_composition_error(&field, &samples, &[1e-2], 0.0, 10.0).unwrap();
    assert_eq!(empty.steps, vec![0]);
    assert_eq!(empty.errors, vec![0.0]);

    let escape = euler_composition_error(&field, &[vec![0.0, 0.5]], &[0.5], 5.0, 1.0);
    assert!(matches!(escape, Err(LabError::WindowEscape { .. })));
}

#[test]
fn euler_is_exact_on_the_linear_shear() {
    let field = LinearShearField {
        a: DMatrix::from_row_slice(2, 2, &[1.5, 0.25, 0.25, 0.75]),
    };
    let samples = vec![vec![0.125, 0.5, 0.25, -0.375], vec![0.0, 0.75, -0.5, 0.125]];
    let eps: Vec<f64> = (4..12).map(|k| 2f64.powi(-k)).collect();
    let report = euler_composition_error(&field, &samples, &eps, 1.0, 10.0).unwrap();
    assert!(report.errors.iter().all(|e| *e == 0.0), "{:?}", report.errors);
    assert!(report.slope.is_none());
}

#[test]
fn twist_map_exact_seed_needs_no_iteration() {
    let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let omega = DiophantineVector::default_for(2, 32).unwrap();
    let base = a
        .clone()
        .lu()
        .solve(&nalgebra::DVector::from_column_slice(&omega.omega))
        .unwrap();
    let seed = TorusEmbedding::flat(Grid::new(2, 16), base.as_slice());
    let res = solve_invariance(&TwistMap { a }, &omega, &seed, &InvarianceOptions::default()).unwrap();
    assert_eq!(res.iterations(), 0);
    assert!(res.residual() < 1e-14);
}

fn standard_map_torus(kappa: f64) -> Result<tonelli_core::kam::InvarianceResult, LabError> {
    let omega = DiophantineVector::default_for(1, 128).unwrap();
    let seed = TorusEmbedding::flat(Grid::new(1, 128), &[golden()]);
    solve_invariance(&StandardMap { kappa }, &omega, &seed, &InvarianceOptions::default())
}

#[test]
fn standard_map_golden_curve_converges_quadratically() {
    let res = standard_map_torus(0.1).unwrap();
    assert!(res.residual() < 1e-10);
    assert!(res.iterations() <= 8, "{:?}", res.history);
    let c = res.quadratic_constant.unwrap();
    for w in res.history.windows(2).filter(|w| w[0] > 1e-8) {
        assert!(w[1] <= c * w[0] * w[0] * (1.0 + 1e-12));
    }
    assert!(c < 100.0, "C = {c}");
    assert!(res.tail_ratio < 1e-10);

    let half = standard_map_torus(0.05).unwrap();
    assert!(half.iterations() <= res.iterations());
    assert!(half.history[0] < res.history[0]);

    // the orbit of K(0) stays on the curve and rotates at ω̄
    let k = &res.embedding;
    let map = StandardMap { kappa: 0.1 };
    let (mut theta, mut action) = k.node(0);
    let steps = 2000;
    for _ in 0..steps {
        let (t, a) = map.eval(&theta, &action).unwrap();
        theta = t;
        action = a;
    }
    let rotation = (theta[0] - k.node(0).0[0]) / steps as f64;
    assert!((rotation - golden()).abs() < 1e-3 / steps as f64 * 10.0);
    // invert θ = η + u(η) and compare the action with the graph
    let mut eta = theta[0];
    for _ in 0..100 {
        let (t, _) = k.eval(&[eta]);
        eta += theta[0] - t[0];
    }
    let (_, a) = k.eval(&[eta]);
    assert!((a[0] - action[0]).abs() < 1e-9);
}

#[test]
fn standard_map_beyond_breakdown_fails() {
    match standard_map_torus(2.0) {
        Err(LabError::NonConvergence { history }) => assert!(!history.is_empty()),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn standard_map_orbit_equidistributes() {
    let res = standard_map_torus(0.1).unwrap();
    let report = equidistribution_probe(
        &StandardMap { kappa: 0.1 },
        &res.embedding,
        &default_observables(),
        1_000_000,
    )
    .unwrap();
    assert_eq!(report.observables.len(), 5);
    assert!(report.max_gap < 1e-3, "{report:?}");
}

#[test]
fn convex_flat_family_matches_the_scalar_inversion() {
    let h = Catalogue::ConvexFlat { n: 1, quartic: 1.0 };
    let torus = build_torus(&h, 1.0, &[1], 16, &TorusOptions::default()).unwrap();
    let omega = DiophantineVector::default_for(1, 128).unwrap();
    let ms: Vec<usize> = (4..=64).collect();
    let report = torus_family(&h, &torus, &omega, &ms, &FamilyOptions::default()).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.m0, Some(4));
    let p_star = cubic_inverse(1.0);
    for member in &report.members {
        let m = member.m as f64;
        assert!(member.residual < 1e-10);
        assert!(member.rotation_error < 1e-8, "m={m}: {}", member.rotation_error);
        assert!(member.flow_invariance.iter().all(|r| *r < 1e-10));
        let p_exact = cubic_inverse(1.0 + golden() / m);
        let p = torus.momentum[0][0] + member.embedding.base[0] / m;
        assert!((p - p_exact).abs() < 1e-8, "m={m}: {p} vs {p_exact}");
        assert!((member.c0_distance - (p_exact - p_star)).abs() < 1e-8);
    }
    let fit = report.fit.unwrap();
    assert!(fit.monotone);
    assert!(fit.max_relative_deviation < 0.2, "{fit:?}");
}

#[test]
fn flat_family_is_shifted_by_omega_over_m() {
    let h = Catalogue::Flat { n: 2 };
    let torus = build_torus(&h, 1.0, &[1, 0], 8, &TorusOptions::default()).unwrap();
    let omega = DiophantineVector::default_for(2, 32).unwrap();
    let opts = FamilyOptions {
        grid_size: Some(16),
        ..FamilyOptions::default()
    };
    let report = torus_family(&h, &torus, &omega, &[4, 8, 16], &opts).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    for member in &report.members {
        let m = member.m as f64;
        for i in 0..2 {
            let p = torus.momentum[0][i] + member.embedding.base[i] / m;
            let exact = [1.0, 0.0][i] + omega.omega[i] / m;
            assert!((p - exact).abs() < 1e-12);
            assert!((member.rotation[i] - exact).abs() < 1e-12);
        }
        assert!(member.residual < 1e-12);
    }
}
