//! One test per acceptance criterion; each prints its table row.

use std::sync::Mutex;

use tonelli_core::acceptance::{run, DEFAULT_SEED};

// criteria run one at a time so that wall times compare with their budgets
static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(id: u8) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let outcome = run(id, DEFAULT_SEED);
    println!("{}", outcome.line());
    for check in &outcome.checks {
        println!(
            "     {} {}: {}",
            if check.passed { "ok  " } else { "FAIL" },
            check.label,
            check.detail
        );
    }
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn criterion_01_triangle_inequality() {
    criterion(1);
}

#[test]
fn criterion_02_periodic_tori() {
    criterion(2);
}

#[test]
fn criterion_03_zero_class_is_the_critical_graph() {
    criterion(3);
}

#[test]
fn criterion_04_green_bundles() {
    criterion(4);
}

#[test]
fn criterion_05_conjugate_point_scan() {
    criterion(5);
}

#[test]
fn criterion_06_lyapunov_spectrum() {
    criterion(6);
}

#[test]
fn criterion_07_euler_composition_slope() {
    criterion(7);
}

#[test]
fn criterion_08_normal_form() {
    criterion(8);
}

#[test]
fn criterion_09_kam_family() {
    criterion(9);
}

#[test]
fn criterion_10_weak_kam() {
    criterion(10);
}

#[test]
fn criterion_11_equidistribution() {
    criterion(11);
}
