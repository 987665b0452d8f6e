use nalgebra::DMatrix;
use nnmid::fnsi::*;
use nnmid::linalg::CMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Real block-diagonal realization with the given poles, random B, C, D.
fn random_model(poles: &[(f64, f64)], ny: usize, nu: usize, seed: u64) -> StateSpaceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * poles.len();
    let mut a = DMatrix::zeros(n, n);
    for (i, &(w, z)) in poles.iter().enumerate() {
        let re = -z * w;
        let im = w * (1.0 - z * z).sqrt();
        a[(2 * i, 2 * i)] = re;
        a[(2 * i + 1, 2 * i + 1)] = re;
        a[(2 * i, 2 * i + 1)] = im;
        a[(2 * i + 1, 2 * i)] = -im;
    }
    let b = DMatrix::from_fn(n, nu, |_, _| rng.random::<f64>() - 0.5);
    let c = DMatrix::from_fn(ny, n, |_, _| rng.random::<f64>() - 0.5);
    let d = DMatrix::from_fn(ny, nu, |_, _| 1e-3 * (rng.random::<f64>() - 0.5));
    StateSpaceModel {
        a,
        b,
        c,
        d,
        layout: InputLayout {
            force: InputTerm { label: "force".into(), dof: 0 },
            terms: (1..nu).map(|i| InputTerm { label: format!("t{i}"), dof: i % ny }).collect(),
        },
        output_dofs: (0..ny).collect(),
        fs: 1000.0,
        band: (1.0, 200.0),
    }
}

fn exact_spectra(model: &StateSpaceModel, n_lines: usize, seed: u64) -> SpectralData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nu = model.b.ncols();
    let ny = model.c.nrows();
    let df = (model.band.1 - model.band.0) / (n_lines - 1) as f64;
    let freqs: Vec<f64> = (0..n_lines).map(|l| model.band.0 + l as f64 * df).collect();
    let inputs = CMatrix::from_fn(nu, n_lines, |_, _| Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>()));
    let mut outputs = CMatrix::zeros(ny, n_lines);
    for (l, &f) in freqs.iter().enumerate() {
        let g = model.transfer_matrix(2.0 * PI * f).unwrap();
        outputs.set_column(l, &(g * inputs.column(l)));
    }
    SpectralData {
        fs: model.fs,
        samples_per_period: 0,
        lines: (0..n_lines).collect(),
        frequencies: freqs,
        outputs,
        inputs,
        output_dofs: model.output_dofs.clone(),
        layout: model.layout.clone(),
        noise_cov: None,
        band: model.band,
    }
}

fn add_noise(spectra: &mut SpectralData, level: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = spectra.outputs.iter().map(|c| c.norm()).fold(0.0, f64::max) * level;
    spectra
        .outputs
        .iter_mut()
        .for_each(|c| *c += Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * scale);
}

fn max_relative_frf_error(a: &StateSpaceModel, b: &StateSpaceModel, freqs: &[f64]) -> f64 {
    freqs
        .iter()
        .map(|&f| {
            let ga = a.transfer_matrix(2.0 * PI * f).unwrap();
            let gb = b.transfer_matrix(2.0 * PI * f).unwrap();
            (&ga - &gb).norm() / ga.norm()
        })
        .fold(0.0, f64::max)
}

#[test]
fn noiseless_identification_is_exact() {
    let truth = random_model(&[(2.0 * PI * 20.0, 0.02), (2.0 * PI * 75.0, 0.01), (2.0 * PI * 140.0, 0.03)], 4, 3, 11);
    let spectra = exact_spectra(&truth, 400, 3);
    let est = subspace_identify(&spectra, 6, SubspaceOptions::new(4)).unwrap();
    let mut lt: Vec<f64> = truth.eigenvalues().iter().map(|l| l.norm()).collect();
    let mut le: Vec<f64> = est.eigenvalues().iter().map(|l| l.norm()).collect();
    lt.sort_by(f64::total_cmp);
    le.sort_by(f64::total_cmp);
    for (x, y) in lt.iter().zip(&le) {
        assert!((x / y - 1.0).abs() < 1e-8, "{x} vs {y}");
    }
    let pt = extract_modal_parameters(&truth).unwrap();
    let pe = extract_modal_parameters(&est).unwrap();
    for (x, y) in pt.modes.iter().zip(&pe.modes) {
        assert!((x.damping / y.damping - 1.0).abs() < 1e-8);
        assert!(mac(&x.shape, &y.shape).unwrap() > 1.0 - 1e-10);
    }
    assert!(max_relative_frf_error(&truth, &est, &spectra.frequencies) < 1e-8);
}

#[test]
fn order_above_rank_is_rejected() {
    let truth = random_model(&[(2.0 * PI * 30.0, 0.02)], 3, 1, 5);
    let spectra = exact_spectra(&truth, 200, 1);
    let err = subspace_identify(&spectra, 6, SubspaceOptions::new(4)).unwrap_err();
    assert!(matches!(err, nnmid::Error::OrderTooHigh { .. }), "{err}");
}

#[test]
fn one_mode_stabilizes_from_order_two() {
    let truth = random_model(&[(2.0 * PI * 50.0, 0.02)], 2, 1, 9);
    let mut spectra = exact_spectra(&truth, 300, 2);
    add_noise(&mut spectra, 1e-4, 4);
    let diag = stabilization(&spectra, 6, SubspaceOptions::new(6), StabilizationThresholds::default()).unwrap();
    assert_eq!(diag.orders[0].order, 2);
    assert_eq!(diag.orders[0].candidates.len(), 1);
    assert!(diag.orders[1]
        .candidates
        .iter()
        .any(|c| c.stability == Stability::Full && (c.frequency_hz - 50.0).abs() < 0.05));
    assert_eq!(select_order(&diag), Some(2));
}

#[test]
fn close_modes_are_separated() {
    let truth = random_model(&[(2.0 * PI * 60.0, 0.005), (2.0 * PI * 62.0, 0.005)], 3, 1, 21);
    let mut spectra = exact_spectra(&truth, 600, 8);
    add_noise(&mut spectra, 1e-6, 4);
    let diag = stabilization(&spectra, 8, SubspaceOptions::new(6), StabilizationThresholds::default()).unwrap();
    let at6 = diag.orders.iter().find(|o| o.order == 6).unwrap();
    for f in [60.0, 62.0] {
        assert!(
            at6.candidates.iter().any(|c| c.stability == Stability::Full && (c.frequency_hz / f - 1.0).abs() < 1e-6),
            "{f}"
        );
    }
}

#[test]
fn coefficient_ratio_recovers_polynomial_coefficient() {
    // Two-DOF chain with a cubic spring to ground at DOF 1, forced at DOF 0.
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    let k = DMatrix::from_row_slice(2, 2, &[3000.0, -1000.0, -1000.0, 2000.0]);
    let cd = &m * 0.5 + &k * 1e-5;
    let c_true = 4.0e6;
    let mut a = DMatrix::zeros(4, 4);
    let minv = m.clone().try_inverse().unwrap();
    a.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
    a.view_mut((2, 0), (2, 2)).copy_from(&(-&minv * &k));
    a.view_mut((2, 2), (2, 2)).copy_from(&(-&minv * &cd));
    // Extended input [p, h(q1)] enters as p e0 - c h e1.
    let mut bin = DMatrix::zeros(2, 2);
    bin[(0, 0)] = 1.0;
    bin[(1, 1)] = -c_true;
    let mut b = DMatrix::zeros(4, 2);
    b.view_mut((2, 0), (2, 2)).copy_from(&(&minv * bin));
    let mut c = DMatrix::zeros(2, 4);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    let model = StateSpaceModel {
        a,
        b,
        c,
        d: DMatrix::zeros(2, 2),
        layout: InputLayout {
            force: InputTerm { label: "force".into(), dof: 0 },
            terms: vec![InputTerm { label: "q1^3".into(), dof: 1 }],
        },
        output_dofs: vec![0, 1],
        fs: 1000.0,
        band: (1.0, 30.0),
    };
    let freqs: Vec<f64> = (1..60).map(|i| i as f64 * 0.5).collect();
    let coef = nonlinear_coefficients(&model, &freqs).unwrap();
    for v in &coef.terms[0].values {
        assert!((v.re / c_true - 1.0).abs() < 1e-10);
        assert!(v.im.abs() < 1e-10 * c_true);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transfer_matrix_is_similarity_invariant(seed in 0u64..10_000, f in 1.0f64..200.0) {
        let model = random_model(&[(2.0 * PI * 30.0, 0.02), (2.0 * PI * 90.0, 0.05)], 3, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        // Well-conditioned transform: identity plus a small random part.
        let t = DMatrix::<f64>::identity(4, 4) + DMatrix::from_fn(4, 4, |_, _| 0.6 * (rng.random::<f64>() - 0.5));
        let other = model.similarity(&t).unwrap();
        prop_assert!(max_relative_frf_error(&model, &other, &[f]) < 1e-8);
    }

    #[test]
    fn mac_is_scale_invariant(re in -5.0f64..5.0, im in -5.0f64..5.0, seed in 0u64..1000) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Complex64> = (0..5).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let b: Vec<Complex64> = (0..5).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let s = Complex64::new(re, im);
        let scaled: Vec<Complex64> = a.iter().map(|x| x * s).collect();
        let m0 = mac(&a, &b).unwrap();
        prop_assert!((mac(&scaled, &b).unwrap() - m0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m0));
    }
}
