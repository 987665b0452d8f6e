//! Filtering and spectral helpers.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

/// Digital Butterworth low-pass of even `order` designed by the bilinear
/// transform with pre-warping. `cutoff` is the -3 dB frequency as a fraction
/// of the sample rate.
pub fn butterworth_lowpass(order: usize, cutoff: f64) -> Vec<Biquad> {
    assert!(order >= 2 && order.is_multiple_of(2), "order must be even");
    assert!(cutoff > 0.0 && cutoff < 0.5, "cutoff must lie in (0, 0.5)");
    let wc = (PI * cutoff).tan();
    (0..order / 2)
        .map(|k| {
            let theta = PI * (2 * k + 1 + order) as f64 / (2 * order) as f64;
            let re = wc * theta.cos();
            let mag2 = wc * wc;
            let a0 = 1.0 - 2.0 * re + mag2;
            let a1 = -2.0 + 2.0 * mag2;
            let a2 = 1.0 + 2.0 * re + mag2;
            let g = mag2 / a0;
            Biquad { b: [g, 2.0 * g, g], a: [a1 / a0, a2 / a0] }
        })
        .collect()
}

/// Magnitude response of a cascade at frequency `f` (fraction of sample rate).
pub fn cascade_gain(sections: &[Biquad], f: f64) -> f64 {
    let z1 = Complex64::from_polar(1.0, -2.0 * PI * f);
    let z2 = z1 * z1;
    sections
        .iter()
        .map(|s| {
            let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
            let den = 1.0 + z1 * s.a[0] + z2 * s.a[1];
            (num / den).norm()
        })
        .product()
}

/// Apply a cascade in place (direct form II transposed, zero initial state).
pub fn sosfilt(sections: &[Biquad], x: &mut [f64]) {
    for s in sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a[0] * y + z2;
            z2 = s.b[2] * xin - s.a[1] * y;
            *v = y;
        }
    }
}

/// Zero-phase forward-backward filtering.
///
/// The front is padded by odd reflection about the first sample. The end is
/// padded with `period`-periodic continuation when a period is given, so
/// periodic steady-state data are filtered without end transients; otherwise
/// odd reflection is used at both ends.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize, period: Option<usize>) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let front = pad.min(n - 1);
    let mut buf = Vec::with_capacity(n + front + pad);
    for i in (1..=front).rev() {
        buf.push(2.0 * x[0] - x[i]);
    }
    buf.extend_from_slice(x);
    match period {
        Some(p) if p > 0 && p <= n => {
            for j in 0..pad {
                let idx = n - p + (j % p);
                buf.push(x[idx]);
            }
        }
        _ => {
            let back = pad.min(n - 1);
            for i in 1..=back {
                buf.push(2.0 * x[n - 1] - x[n - 1 - i]);
            }
        }
    }
    sosfilt(sections, &mut buf);
    buf.reverse();
    sosfilt(sections, &mut buf);
    buf.reverse();
    buf[front..front + n].to_vec()
}

/// Forward DFT normalized by `1/N`, so a sine of amplitude `a` at bin `k`
/// yields magnitude `a/2` at that bin.
pub fn dft_normalized(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let s = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= s);
    buf
}

/// Least-squares fit `x ~ c0 + a cos(w t) + b sin(w t)` with `t` in samples;
/// returns the phasor `a - j b` (so `Re(X e^{j w t}) = a cos + b sin`).
pub fn fit_phasor(x: &[f64], omega_per_sample: f64, offset: usize) -> Complex64 {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (i, &v) in x.iter().enumerate() {
        let t = (offset + i) as f64 * omega_per_sample;
        let row = [1.0, t.cos(), t.sin()];
        for r in 0..3 {
            atb[r] += row[r] * v;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let m = nalgebra::Matrix3::from_fn(|r, c| ata[r][c]);
    let rhs = nalgebra::Vector3::new(atb[0], atb[1], atb[2]);
    match m.lu().solve(&rhs) {
        Some(s) => Complex64::new(s[1], -s[2]),
        None => Complex64::new(0.0, 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn butterworth_has_unit_dc_gain_and_half_power_at_cutoff() {
        let s = butterworth_lowpass(8, 0.02);
        assert!((cascade_gain(&s, 0.0) - 1.0).abs() < 1e-12);
        assert!((cascade_gain(&s, 0.02) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(cascade_gain(&s, 0.05) < 1e-3);
    }

    #[test]
    fn filtfilt_preserves_low_sine() {
        let fs = 60000.0;
        let x: Vec<f64> = (0..60000).map(|i| (2.0 * PI * 100.0 * i as f64 / fs).sin()).collect();
        let s = butterworth_lowpass(8, 0.02);
        let y = filtfilt(&s, &x, 3000, Some(600));
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn dft_normalization_convention() {
        let n = 64;
        let x: Vec<f64> = (0..n).map(|i| 3.0 * (2.0 * PI * 5.0 * i as f64 / n as f64).cos()).collect();
        let s = dft_normalized(&x);
        assert!((s[5].norm() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn phasor_fit_recovers_amplitude_and_phase() {
        let w = 0.05;
        let x: Vec<f64> = (0..500).map(|i| 2.0 * (w * i as f64 + 0.3).cos() + 0.1).collect();
        let p = fit_phasor(&x, w, 0);
        assert!((p.norm() - 2.0).abs() < 1e-9);
        assert!((p.arg() - 0.3).abs() < 1e-9);
    }
}
