//! Virtual phase-resonance testing: stepped-sine force appropriation, free
//! decay and wavelet ridge extraction, and comparison with backbones.

use nalgebra::DVector;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::continuation::NnmBranch;
use crate::dsp::fit_phasor;
use crate::error::{Error, Result};
use crate::excitation::{stepped_sine_signal, SteppedSineSchedule};
use crate::model::{FeModel, NonlinearBasis};
use crate::simulate::{Channel, Newmark, NewmarkOptions, State, TimeSeriesRecord};

/// Settings of the appropriation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppropriationOptions {
    /// Integration rate (Hz).
    pub fs: f64,
    /// Largest relative change of the designated-DOF fundamental amplitude
    /// between the last two measured cycles for a step to count as steady.
    pub steady_tolerance: f64,
    /// Smallest indicator accepted as appropriated.
    pub min_indicator: f64,
    pub newmark: NewmarkOptions,
}

impl Default for AppropriationOptions {
    fn default() -> Self {
        Self { fs: 10_000.0, steady_tolerance: 0.01, min_indicator: 0.9, newmark: NewmarkOptions::default() }
    }
}

/// Result of a stepped-sine appropriation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppropriationResult {
    pub frequencies: Vec<f64>,
    /// Indicator per step; `None` when the step did not reach steady state.
    pub indicator: Vec<Option<f64>>,
    /// Fundamental amplitude at the designated DOF per step (m).
    pub amplitude: Vec<f64>,
    /// Phase lag of the designated DOF behind the force per step (rad).
    pub phase_lag: Vec<f64>,
    pub appropriated: usize,
    /// State at the end of the appropriated step.
    pub state: State,
    pub designated_dof: usize,
    pub measured_dofs: Vec<usize>,
    pub fs: f64,
}

impl AppropriationResult {
    pub fn frequency(&self) -> f64 {
        self.frequencies[self.appropriated]
    }
}

/// Quadrature indicator of fundamental phasors: `sum Im(Y F*)^2 / sum |Y F*|^2`.
///
/// Equals 1 when every response lags the force by exactly ninety degrees.
pub fn quadrature_indicator(force: Complex64, responses: &[Complex64]) -> f64 {
    let fr = force.conj() / force.norm().max(f64::MIN_POSITIVE);
    let (mut quad, mut total) = (0.0, 0.0);
    for y in responses {
        let r = y * fr;
        quad += r.im * r.im;
        total += r.norm_sqr();
    }
    if total > 0.0 {
        (quad / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Indicator of sampled signals at `omega_per_sample` rad/sample.
pub fn appropriation_indicator(force: &[f64], responses: &[&[f64]], omega_per_sample: f64) -> f64 {
    let f = fit_phasor(force, omega_per_sample, 0);
    let y: Vec<Complex64> = responses.iter().map(|r| fit_phasor(r, omega_per_sample, 0)).collect();
    quadrature_indicator(f, &y)
}

/// Sequential upward stepped-sine sweep of the damped nonlinear model.
///
/// Each step starts from the final state of the previous one. The last
/// `measure_periods` cycles of a step give the fundamental phasors.
pub fn appropriation_sweep(
    model: &FeModel,
    basis: &NonlinearBasis,
    schedule: &SteppedSineSchedule,
    measured_dofs: &[usize],
    designated_dof: usize,
    options: AppropriationOptions,
) -> Result<AppropriationResult> {
    if schedule.measure_periods < 2 {
        return Err(Error::Parameter("at least two measured cycles per step are needed".into()));
    }
    if measured_dofs.is_empty() || measured_dofs.iter().any(|&d| d >= model.n_p) {
        return Err(Error::Parameter("measured DOFs outside the model".into()));
    }
    let row = measured_dofs
        .iter()
        .position(|&d| d == designated_dof)
        .ok_or_else(|| Error::Parameter("designated DOF is not measured".into()))?;
    let sine = stepped_sine_signal(schedule, options.fs)?;
    let nm = Newmark::new(model, basis, options.fs, options.newmark)?;
    let n = model.n_p;
    let mut q = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let mut work = DVector::zeros(n);
    let mut result = AppropriationResult {
        frequencies: Vec::new(),
        indicator: Vec::new(),
        amplitude: Vec::new(),
        phase_lag: Vec::new(),
        appropriated: 0,
        state: State::zeros(n),
        designated_dof,
        measured_dofs: measured_dofs.to_vec(),
        fs: options.fs,
    };
    let mut states = Vec::with_capacity(sine.steps.len());
    for step in &sine.steps {
        let len = step.end - step.measure_start;
        let mut rec: Vec<Vec<f64>> = vec![Vec::with_capacity(len); measured_dofs.len()];
        for i in step.start..step.end {
            nm.step(&mut q, &mut v, &mut a, sine.signal[i], i, &mut work)?;
            if i >= step.measure_start {
                for (c, &d) in measured_dofs.iter().enumerate() {
                    rec[c].push(q[d]);
                }
            }
        }
        let w = 2.0 * PI * step.frequency / options.fs;
        let off = step.measure_start;
        let force = &sine.signal[step.measure_start..step.end];
        let fp = fit_phasor(force, w, off);
        let yp: Vec<Complex64> = rec.iter().map(|r| fit_phasor(r, w, off)).collect();
        // Steady-state check on the last two cycles of the designated DOF.
        let per = (options.fs / step.frequency).round() as usize;
        let tail = &rec[row];
        let steady = if tail.len() >= 2 * per {
            let l = tail.len();
            let last = fit_phasor(&tail[l - per..], w, off + l - per).norm();
            let prev = fit_phasor(&tail[l - 2 * per..l - per], w, off + l - 2 * per).norm();
            (last - prev).abs() <= options.steady_tolerance * last.max(prev)
        } else {
            false
        };
        result.frequencies.push(step.frequency);
        result.indicator.push(if steady { Some(quadrature_indicator(fp, &yp)) } else { None });
        result.amplitude.push(yp[row].norm());
        result.phase_lag.push((fp / yp[row]).arg());
        states.push(State { q: q.clone(), v: v.clone() });
    }
    let best =
        result.indicator.iter().enumerate().filter_map(|(i, x)| x.map(|x| (i, x))).max_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((i, x)) if x >= options.min_indicator => {
            result.appropriated = i;
            result.state = states.swap_remove(i);
            Ok(result)
        }
        Some((_, x)) => Err(Error::Numerical(format!(
            "largest indicator {x:.3} is below the appropriation threshold {:.3}",
            options.min_indicator
        ))),
        None => Err(Error::Numerical("no step reached steady state".into())),
    }
}

/// Settings of the free decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    pub fs: f64,
    /// Stop once the designated-DOF envelope falls below this fraction of its
    /// initial value.
    pub floor: f64,
    /// Envelope block length (s).
    pub block: f64,
    /// Upper bound on the decay duration (s).
    pub max_duration: f64,
    pub newmark: NewmarkOptions,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self { fs: 10_000.0, floor: 0.01, block: 0.1, max_duration: 60.0, newmark: NewmarkOptions::default() }
    }
}

/// Unforced damped response from `initial` until the designated-DOF
/// envelope (block maxima) falls below the floor.
pub fn free_decay(
    model: &FeModel,
    basis: &NonlinearBasis,
    initial: &State,
    record_dofs: &[usize],
    designated_dof: usize,
    options: DecayOptions,
) -> Result<TimeSeriesRecord> {
    if initial.q.len() != model.n_p || initial.v.len() != model.n_p {
        return Err(Error::Parameter(format!("initial state must have dimension 2 x {}", model.n_p)));
    }
    if record_dofs.iter().any(|&d| d >= model.n_p) || designated_dof >= model.n_p {
        return Err(Error::Parameter("recorded DOF outside the model".into()));
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); record_dofs.len()];
    let empty = |channels: Vec<Vec<f64>>, n: usize| TimeSeriesRecord {
        fs: options.fs,
        channels: record_dofs
            .iter()
            .zip(channels)
            .map(|(&dof, data)| Channel { label: format!("dof{dof}"), dof, data })
            .collect(),
        input: vec![0.0; n],
        forcing_dof: model.forcing_dof,
        periods: 1,
        samples_per_period: n,
    };
    if initial.q.iter().chain(initial.v.iter()).all(|&x| x == 0.0) {
        return Ok(empty(channels, 0));
    }
    let nm = Newmark::new(model, basis, options.fs, options.newmark)?;
    let mut q = initial.q.clone();
    let mut v = initial.v.clone();
    let mut a = nm.initial_acceleration(initial, 0.0)?;
    let mut work = DVector::zeros(model.n_p);
    let block = ((options.block * options.fs).round() as usize).max(1);
    let max_samples = (options.max_duration * options.fs).round() as usize;
    let mut reference: Option<f64> = None;
    let mut peak = 0.0f64;
    let mut i = 0;
    while i < max_samples {
        nm.step(&mut q, &mut v, &mut a, 0.0, i, &mut work)?;
        for (c, &d) in record_dofs.iter().enumerate() {
            channels[c].push(q[d]);
        }
        peak = peak.max(q[designated_dof].abs());
        i += 1;
        if i % block == 0 {
            match reference {
                None => reference = Some(peak),
                Some(r) if peak < options.floor * r => break,
                _ => {}
            }
            peak = 0.0;
        }
    }
    Ok(empty(channels, i))
}

/// Instantaneous frequency and amplitude along the scalogram ridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletRidge {
    /// Time (s).
    pub time: Vec<f64>,
    /// Ridge frequency (Hz).
    pub frequency: Vec<f64>,
    /// Ridge amplitude `2 |W|`.
    pub amplitude: Vec<f64>,
    /// False inside the cone of influence.
    pub valid: Vec<bool>,
    pub omega_c: f64,
    /// Analysis frequency grid (Hz).
    pub grid: Vec<f64>,
}

/// Wavelet analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletOptions {
    /// Morlet centre frequency parameter.
    pub omega_c: f64,
    pub voices_per_octave: usize,
    /// Keep every `stride`-th time sample of the ridge.
    pub stride: usize,
    /// Half-width of the cone of influence in units of the wavelet's time
    /// spread `w_c / (2 pi f)`.
    pub coi_factor: f64,
}

impl Default for WaveletOptions {
    fn default() -> Self {
        Self { omega_c: 8.0, voices_per_octave: 48, stride: 1, coi_factor: 4.0 }
    }
}

/// Continuous wavelet transform with the analytic Morlet wavelet
/// `psi^(s w) = exp(-(s w - w_c)^2 / 2)` for `w > 0`, normalized so a tone of
/// amplitude `A` at the analysis frequency gives `|W| = A / 2`. Rows follow
/// `freqs`, columns time.
pub fn cwt_morlet(signal: &[f64], fs: f64, freqs: &[f64], omega_c: f64) -> Vec<Vec<Complex64>> {
    let n = signal.len();
    let nfft = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    // Mean removal and zero padding limit wrap-around.
    let mean = signal.iter().sum::<f64>() / n.max(1) as f64;
    let mut spec: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x - mean, 0.0)).collect();
    spec.resize(nfft, Complex64::new(0.0, 0.0));
    fwd.process(&mut spec);
    freqs
        .iter()
        .map(|&f| {
            let s = omega_c / (2.0 * PI * f);
            let mut buf: Vec<Complex64> = (0..nfft)
                .map(|k| {
                    if k == 0 || k > nfft / 2 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let w = 2.0 * PI * k as f64 * fs / nfft as f64;
                    let g = (-0.5 * (s * w - omega_c).powi(2)).exp();
                    spec[k] * g
                })
                .collect();
            inv.process(&mut buf);
            let scale = 1.0 / nfft as f64;
            buf.truncate(n);
            buf.iter_mut().for_each(|c| *c *= scale);
            buf
        })
        .collect()
}

/// Log-spaced analysis grid from `lo` to at least `hi`.
pub fn log_grid(lo: f64, hi: f64, voices_per_octave: usize) -> Vec<f64> {
    let count = ((hi / lo).log2() * voices_per_octave as f64).ceil() as usize + 1;
    (0..count).map(|i| lo * 2f64.powf(i as f64 / voices_per_octave as f64)).collect()
}

/// Ridge of the Morlet scalogram of `signal` within `band` (Hz).
///
/// Per time sample the grid maximizer of `|W|` is refined by a parabola in
/// `(1/f, ln |W|)`, which is exact for a pure tone.
pub fn wavelet_ridge(signal: &[f64], fs: f64, band: (f64, f64), options: WaveletOptions) -> Result<WaveletRidge> {
    let (lo, hi) = band;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Parameter("wavelet band must satisfy 0 < lo < hi".into()));
    }
    if hi >= fs / 2.0 {
        return Err(Error::Parameter("wavelet band exceeds the Nyquist frequency".into()));
    }
    if options.voices_per_octave < 25 {
        return Err(Error::Parameter("at least 25 voices per octave are required".into()));
    }
    let grid = log_grid(lo, hi, options.voices_per_octave);
    if grid.len() < 3 {
        return Err(Error::Parameter("wavelet band spans fewer than three grid lines".into()));
    }
    let w = cwt_morlet(signal, fs, &grid, options.omega_c);
    let n = signal.len();
    let stride = options.stride.max(1);
    let mut ridge = WaveletRidge {
        time: Vec::new(),
        frequency: Vec::new(),
        amplitude: Vec::new(),
        valid: Vec::new(),
        omega_c: options.omega_c,
        grid: grid.clone(),
    };
    for t in (0..n).step_by(stride) {
        let (k, _) =
            (0..grid.len()).map(|k| (k, w[k][t].norm())).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap_or((0, 0.0));
        let mag = |k: usize| w[k][t].norm().max(f64::MIN_POSITIVE).ln();
        let (f, ln_a) = if k > 0 && k + 1 < grid.len() {
            let u: [f64; 3] = [1.0 / grid[k - 1], 1.0 / grid[k], 1.0 / grid[k + 1]];
            let y = [mag(k - 1), mag(k), mag(k + 1)];
            parabola_peak(u, y).map(|(u0, y0)| (1.0 / u0, y0)).unwrap_or((grid[k], y[1]))
        } else {
            (grid[k], mag(k))
        };
        // Cone of influence: the wavelet's time spread is `s = w_c / (2 pi f)`.
        let edge = options.coi_factor * options.omega_c / (2.0 * PI * f) * fs;
        let tf = t as f64;
        let interior = k > 0 && k + 1 < grid.len();
        ridge.time.push(tf / fs);
        ridge.frequency.push(f);
        ridge.amplitude.push(2.0 * ln_a.exp());
        ridge.valid.push(interior && tf >= edge && (n - 1) as f64 - tf >= edge);
    }
    Ok(ridge)
}

/// Vertex of the parabola through three points.
fn parabola_peak(x: [f64; 3], y: [f64; 3]) -> Option<(f64, f64)> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let c = (d2 - d1) / (x[2] - x[0]);
    if c >= 0.0 {
        return None;
    }
    let b = d1 - c * (x[0] + x[1]);
    let x0 = -b / (2.0 * c);
    let lo = x[0].min(x[2]);
    let hi = x[0].max(x[2]);
    if !(lo..=hi).contains(&x0) {
        return None;
    }
    let y0 = y[1] + d1 * (x0 - x[1]) + c * (x0 - x[0]) * (x0 - x[1]);
    Some((x0, y0))
}

/// Valid ridge points in time order with a non-increasing amplitude: each
/// amplitude is replaced by the running minimum of the preceding ones.
pub fn monotone_ridge(ridge: &WaveletRidge) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut run = f64::INFINITY;
    for i in 0..ridge.time.len() {
        if !ridge.valid[i] {
            continue;
        }
        run = run.min(ridge.amplitude[i]);
        out.push((run, ridge.frequency[i]));
    }
    out
}

/// Frequency-error summary of a backbone against a reference curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    /// Shared amplitude range.
    pub amplitude_range: (f64, f64),
    /// Backbone points inside the shared range.
    pub points: usize,
    /// `(amplitude, backbone frequency, reference frequency)` per point.
    pub pairs: Vec<(f64, f64, f64)>,
}

/// Backbone `(fundamental amplitude, frequency Hz)` of a branch.
pub fn backbone_of(branch: &NnmBranch) -> Vec<(f64, f64)> {
    branch.points.iter().map(|p| (p.fundamental_amplitude, p.frequency_hz())).collect()
}

/// Compare a backbone `(amplitude, frequency)` with a decay ridge.
///
/// The ridge is made monotone in amplitude, then its frequency is
/// interpolated linearly at each backbone amplitude in the shared range.
pub fn compare_backbones(backbone: &[(f64, f64)], ridge: &WaveletRidge) -> Result<ComparisonReport> {
    let curve = monotone_ridge(ridge);
    compare_curves(backbone, &curve)
}

/// Compare a backbone with a reference curve given in order of
/// non-increasing amplitude.
pub fn compare_curves(backbone: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<ComparisonReport> {
    if reference.len() < 2 || backbone.is_empty() {
        return Err(Error::Comparison("empty curve".into()));
    }
    let rmax = reference.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let rmin = reference.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let bmax = backbone.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let bmin = backbone.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let (lo, hi) = (rmin.max(bmin), rmax.min(bmax));
    if !(hi > lo) {
        return Err(Error::Comparison(format!(
            "no amplitude overlap: backbone [{bmin:.3e}, {bmax:.3e}], reference [{rmin:.3e}, {rmax:.3e}]"
        )));
    }
    let mut pairs = Vec::new();
    for &(amp, f) in backbone {
        if amp < lo || amp > hi {
            continue;
        }
        if let Some(fr) = interpolate_descending(reference, amp) {
            pairs.push((amp, f, fr));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Comparison("no backbone point inside the shared amplitude range".into()));
    }
    let errs: Vec<f64> = pairs.iter().map(|&(_, f, fr)| (f / fr - 1.0).abs()).collect();
    Ok(ComparisonReport {
        max_relative_error: errs.iter().cloned().fold(0.0, f64::max),
        mean_relative_error: errs.iter().sum::<f64>() / errs.len() as f64,
        amplitude_range: (lo, hi),
        points: pairs.len(),
        pairs,
    })
}

/// Frequency at amplitude `a` on a curve with non-increasing amplitude; the
/// first crossing is used.
fn interpolate_descending(curve: &[(f64, f64)], a: f64) -> Option<f64> {
    let i = curve.iter().position(|p| p.0 <= a)?;
    if i == 0 {
        return Some(curve[0].1);
    }
    let (a0, f0) = curve[i - 1];
    let (a1, f1) = curve[i];
    if a0 == a1 {
        return Some(f1);
    }
    Some(f0 + (a - a0) / (a1 - a0) * (f1 - f0))
}
