use nalgebra::{DMatrix, DVector};
use nnmid::continuation::*;
use nnmid::modal::ModalModel;
use nnmid::model::NonlinearBasis;
use proptest::prelude::*;
use std::f64::consts::PI;

/// `x1'' + 2 x1 - x2 + 0.5 x1^3 = 0`, `x2'' + 2 x2 - x1 = 0`.
fn two_dof() -> ModalModel {
    let m = DMatrix::identity(2, 2);
    let k = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
    ModalModel::from_matrices(&m, &k, &NonlinearBasis::polynomial(0, &[(3, 0.5)]), 0).unwrap()
}

fn options() -> ContinuationOptions {
    ContinuationOptions { seed_amplitude: 1e-2, ..Default::default() }
}

#[test]
fn linear_modes_seed_the_branches() {
    let model = two_dof();
    for (mode, w) in [(0, 1.0), (1, 3f64.sqrt())] {
        let b = continue_branch(&model, mode, 0, StopRule::MaxAmplitude(0.0), options()).unwrap();
        let p = &b.points[0];
        assert!((p.omega() / w - 1.0).abs() < 1e-3, "{} vs {w}", p.omega());
        assert!(p.residual <= 1e-9);
    }
}

#[test]
fn in_phase_branch_hardens_with_energy() {
    let model = two_dof();
    let b = continue_branch(&model, 0, 0, StopRule::MaxEnergy(10.0), options()).unwrap();
    assert_eq!(b.termination, "stop rule met");
    let decades = (b.points.last().unwrap().energy / b.points[0].energy).log10();
    assert!(decades >= 3.0, "{decades}");
    for w in b.points.windows(2) {
        assert!(w[1].energy > w[0].energy);
        assert!(w[1].omega() > w[0].omega());
    }
    for p in &b.points {
        assert!(p.residual <= 1e-9);
        assert!((p.monodromy_det - 1.0).abs() <= 1e-6, "{}", p.monodromy_det);
    }
}

#[test]
fn in_phase_orbit_is_a_line_of_positive_slope() {
    // The in-phase NNM is not exactly a straight line in (x1, x2) because
    // only x1 carries the cubic spring, but at small energy it is close to
    // the linear mode x1 = x2.
    let model = two_dof();
    let b = continue_branch(&model, 0, 0, StopRule::MaxAmplitude(0.05), options()).unwrap();
    let p = &b.points[0];
    let orbit = physical_orbit(&model, p, 256, IntegratorOptions::default()).unwrap();
    let x: Vec<f64> = orbit.column(0).iter().copied().collect();
    let y: Vec<f64> = orbit.column(1).iter().copied().collect();
    assert!(line_deviation(&x, &y) < 1e-3);
    assert!(x.iter().zip(&y).all(|(a, b)| a * b >= -1e-12));
}

#[test]
fn linear_system_period_is_exact() {
    let m = DMatrix::identity(2, 2);
    let k = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
    let model = ModalModel::from_matrices(&m, &k, &NonlinearBasis::new(), 0).unwrap();
    let z0 = DVector::from_vec(vec![0.0, 0.3, 0.0, 0.0]);
    let shot = shoot(&model, &z0, 2.0 * PI / 3f64.sqrt(), IntegratorOptions::default()).unwrap();
    assert!(shot.residual.norm() < 1e-9 * z0.norm());
}

#[test]
fn solution_at_amplitude_lands_between_points() {
    let model = two_dof();
    let b = continue_branch(&model, 0, 0, StopRule::MaxAmplitude(1.0), options()).unwrap();
    let s = solution_at_amplitude(&model, &b, 0.5).unwrap();
    assert!((s.amplitude / 0.5 - 1.0).abs() < 0.05, "{}", s.amplitude);
    assert!(s.residual <= 1e-9);
}

#[test]
fn node_of_mode_is_rejected() {
    // Mode 2 of the symmetric chain has a node at the centre DOF.
    let m = DMatrix::identity(3, 3);
    let k = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
    let model = ModalModel::from_matrices(&m, &k, &NonlinearBasis::new(), 0).unwrap();
    let err = continue_branch(&model, 1, 1, StopRule::MaxAmplitude(1.0), options()).unwrap_err();
    assert!(matches!(err, nnmid::Error::NodeOfMode { mode: 1 }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn monodromy_is_volume_preserving(a in 0.05f64..2.0, b in -1.0f64..1.0, t in 2.0f64..8.0) {
        let model = two_dof();
        let z0 = DVector::from_vec(vec![a, b * a, 0.0, 0.0]);
        let shot = shoot(&model, &z0, t, IntegratorOptions::default()).unwrap();
        prop_assert!((shot.monodromy.determinant() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn floquet_multipliers_come_in_reciprocal_pairs(a in 0.05f64..1.5) {
        let model = two_dof();
        let b = continue_branch(&model, 0, 0, StopRule::MaxAmplitude(a), options()).unwrap();
        let p = b.points.last().unwrap();
        let shot = shoot(&model, &p.initial_state(), p.period, IntegratorOptions::default()).unwrap();
        let mu = floquet_multipliers(&shot.monodromy);
        for x in &mu {
            let inv = 1.0 / x;
            let best = mu.iter().map(|y| (y - inv).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(best < 1e-4, "{x} has no reciprocal partner");
        }
    }
}
