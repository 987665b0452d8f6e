use nalgebra::{DMatrix, DVector};
use nnmid::excitation::SteppedSineSchedule;
use nnmid::model::{FeModel, NonlinearBasis};
use nnmid::phaseres::*;
use nnmid::simulate::State;
use proptest::prelude::*;
use std::f64::consts::PI;

fn oscillator(f0: f64, zeta: f64) -> FeModel {
    let w = 2.0 * PI * f0;
    FeModel::from_matrices(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, w * w), 0.0, 2.0 * zeta * w, 0)
        .unwrap()
}

fn tone(f: f64, amp: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs).sin()).collect()
}

#[test]
fn pure_tone_ridge_is_flat() {
    let fs = 1000.0;
    let x = tone(100.0, 0.7, fs, 4000);
    let r = wavelet_ridge(&x, fs, (60.0, 160.0), WaveletOptions::default()).unwrap();
    let step = 2f64.powf(1.0 / 48.0) - 1.0;
    let mut count = 0;
    for i in 0..r.time.len() {
        if r.valid[i] {
            count += 1;
            assert!((r.frequency[i] / 100.0 - 1.0).abs() <= step, "{}", r.frequency[i]);
            assert!((r.amplitude[i] / 0.7 - 1.0).abs() < 1e-3, "{}", r.amplitude[i]);
        }
    }
    assert!(count > 3000);
}

#[test]
fn chirp_ridge_tracks_instantaneous_frequency() {
    // f(t) = 30 + t over 10 s.
    let fs = 500.0;
    let n = 5000;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * PI * (30.0 * t + 0.5 * t * t)).cos()
        })
        .collect();
    let r = wavelet_ridge(&x, fs, (20.0, 50.0), WaveletOptions { stride: 10, ..Default::default() }).unwrap();
    for i in 0..r.time.len() {
        if r.valid[i] {
            let f = 30.0 + r.time[i];
            assert!((r.frequency[i] / f - 1.0).abs() < 0.01, "t {}: {} vs {f}", r.time[i], r.frequency[i]);
        }
    }
}

#[test]
fn narrow_band_is_rejected() {
    let x = tone(10.0, 1.0, 100.0, 200);
    assert!(wavelet_ridge(&x, 100.0, (10.0, 10.1), WaveletOptions::default()).is_err());
    assert!(wavelet_ridge(&x, 100.0, (10.0, 60.0), WaveletOptions::default()).is_err());
}

#[test]
fn linear_decay_follows_exponential_envelope() {
    let (f0, zeta) = (20.0, 0.02);
    let model = oscillator(f0, zeta);
    let init = State { q: DVector::from_element(1, 1e-3), v: DVector::zeros(1) };
    let opts = DecayOptions { fs: 2000.0, ..Default::default() };
    let rec = free_decay(&model, &NonlinearBasis::new(), &init, &[0], 0, opts).unwrap();
    assert!(!rec.is_empty());
    let x = &rec.channels[0].data;
    // Floor reached: the last block is below 1% of the first.
    let tail = x[x.len() - 200..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(tail < 0.01e-3);
    let r = wavelet_ridge(x, opts.fs, (10.0, 40.0), WaveletOptions { stride: 20, ..Default::default() }).unwrap();
    let w = 2.0 * PI * f0;
    let a0 = 1e-3 / (1.0 - zeta * zeta).sqrt();
    let mut checked = 0;
    for i in 0..r.time.len() {
        if r.valid[i] {
            // Sample i of the record is the state at (i + 1) / fs.
            let t = r.time[i] + 1.0 / opts.fs;
            let env = a0 * (-zeta * w * t).exp();
            assert!((r.amplitude[i] / env - 1.0).abs() < 0.02, "t {t}: {} vs {env}", r.amplitude[i]);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn zero_state_gives_empty_decay() {
    let model = oscillator(20.0, 0.02);
    let rec = free_decay(&model, &NonlinearBasis::new(), &State::zeros(1), &[0], 0, DecayOptions::default()).unwrap();
    assert!(rec.is_empty());
    assert!(rec.channels[0].data.is_empty());
}

#[test]
fn linear_appropriation_lands_on_resonance() {
    let model = oscillator(20.0, 0.01);
    let schedule = SteppedSineSchedule {
        f_start: 18.0,
        f_end: 22.0,
        df: 0.1,
        amplitude: 1.0,
        settle_periods: 120,
        measure_periods: 5,
    };
    let res = appropriation_sweep(&model, &NonlinearBasis::new(), &schedule, &[0], 0, AppropriationOptions::default())
        .unwrap();
    assert!((res.frequency() - 20.0).abs() <= 0.1 + 1e-9, "{}", res.frequency());
    for (i, x) in res.indicator.iter().enumerate() {
        let x = x.expect("linear steps reach steady state");
        assert!((0.0..=1.0).contains(&x));
        if i == 0 {
            // Linear FRF oracle: indicator = sin^2 of the phase lag.
            let (w, w0) = (2.0 * PI * 18.0, 2.0 * PI * 20.0);
            let lag = (2.0 * 0.01 * w0 * w).atan2(w0 * w0 - w * w);
            assert!((x - lag.sin().powi(2)).abs() < 1e-3);
            assert!(x < 0.3);
        }
    }
}

#[test]
fn quadrature_at_all_harmonics_gives_unit_indicator() {
    let fs = 1000.0;
    let f = 10.0;
    let n = 500;
    let w = 2.0 * PI * f / fs;
    let force: Vec<f64> = (0..n).map(|i| (w * i as f64).sin()).collect();
    let y1: Vec<f64> = (0..n).map(|i| -0.5 * (w * i as f64).cos() + 0.1 * (3.0 * w * i as f64).cos()).collect();
    let y2: Vec<f64> = (0..n).map(|i| 2.0 * (w * i as f64).cos() - 0.3 * (3.0 * w * i as f64).cos()).collect();
    let ind = appropriation_indicator(&force, &[&y1, &y2], w);
    assert!((ind - 1.0).abs() < 1e-3, "{ind}");
}

#[test]
fn backbone_compared_with_itself_has_zero_error() {
    let bb: Vec<(f64, f64)> = (0..50).map(|i| (1e-4 * (i + 1) as f64, 31.0 + 0.02 * i as f64)).collect();
    let reference: Vec<(f64, f64)> = bb.iter().rev().copied().collect();
    let rep = compare_curves(&bb, &reference).unwrap();
    assert_eq!(rep.max_relative_error, 0.0);
    assert_eq!(rep.points, 50);
}

#[test]
fn disjoint_amplitudes_are_rejected() {
    let bb = vec![(1.0, 10.0), (2.0, 11.0)];
    let reference = vec![(0.5, 10.0), (0.1, 10.0)];
    assert!(matches!(compare_curves(&bb, &reference), Err(nnmid::Error::Comparison(_))));
}

#[test]
fn decaying_ridge_amplitude_is_non_increasing() {
    let fs = 1000.0;
    let x: Vec<f64> = (0..8000)
        .map(|i| {
            let t = i as f64 / fs;
            (-0.3 * t).exp() * (2.0 * PI * 40.0 * t).sin()
        })
        .collect();
    let r = wavelet_ridge(&x, fs, (20.0, 80.0), WaveletOptions { stride: 5, ..Default::default() }).unwrap();
    let mut prev = f64::INFINITY;
    for i in 0..r.time.len() {
        if r.valid[i] {
            assert!(r.amplitude[i] <= prev * (1.0 + 1e-9));
            prev = r.amplitude[i];
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ridge_frequency_is_amplitude_invariant(scale in 1e-6f64..1e6, f in 30.0f64..120.0) {
        let fs = 1000.0;
        let x = tone(f, 1.0, fs, 2000);
        let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let opts = WaveletOptions { stride: 50, ..Default::default() };
        let a = wavelet_ridge(&x, fs, (20.0, 200.0), opts).unwrap();
        let b = wavelet_ridge(&y, fs, (20.0, 200.0), opts).unwrap();
        for (fa, fb) in a.frequency.iter().zip(&b.frequency) {
            prop_assert!((fa / fb - 1.0).abs() < 1e-9);
        }
    }
}
