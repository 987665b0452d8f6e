//! Periodic random-phase multisines and phase-continuous stepped sines.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Flat-amplitude random-phase multisine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    /// Lowest excited frequency (Hz).
    pub f_min: f64,
    /// Highest excited frequency (Hz).
    pub f_max: f64,
    /// Samples per period.
    pub samples_per_period: usize,
    /// Sample rate (Hz).
    pub sample_rate: f64,
    /// Time-domain RMS of the signal (N).
    pub rms: f64,
    /// Number of replicated periods.
    pub periods: usize,
    /// Seed of the phase generator (ChaCha8).
    pub seed: u64,
}

/// Generated multisine: one period plus its replication count.
#[derive(Debug, Clone, PartialEq)]
pub struct Multisine {
    pub spec: MultisineSpec,
    pub period: Vec<f64>,
    pub excited_bins: Vec<usize>,
    pub phases: Vec<f64>,
}

impl Multisine {
    /// Full signal with all periods concatenated.
    pub fn signal(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.period.len() * self.spec.periods);
        for _ in 0..self.spec.periods {
            out.extend_from_slice(&self.period);
        }
        out
    }

    /// Sample value at absolute index `i` of the replicated signal.
    pub fn sample(&self, i: usize) -> f64 {
        self.period[i % self.period.len()]
    }
}

/// DFT bins `k` with `f_min <= k fs / N <= f_max`, excluding DC and Nyquist.
pub fn excited_bins(f_min: f64, f_max: f64, samples_per_period: usize, sample_rate: f64) -> Vec<usize> {
    let n = samples_per_period;
    let df = sample_rate / n as f64;
    (1..n.div_ceil(2))
        .filter(|&k| {
            let f = k as f64 * df;
            f >= f_min && f <= f_max && 2 * k != n
        })
        .collect()
}

/// Synthesize one period and scale it to the requested RMS.
pub fn generate_multisine(spec: &MultisineSpec) -> Result<Multisine> {
    if spec.samples_per_period < 2 || spec.sample_rate <= 0.0 {
        return Err(Error::Parameter("multisine needs at least 2 samples and a positive sample rate".into()));
    }
    if spec.f_max >= spec.sample_rate / 2.0 {
        return Err(Error::Parameter(format!(
            "f_max = {} Hz must lie below Nyquist ({} Hz)",
            spec.f_max,
            spec.sample_rate / 2.0
        )));
    }
    if spec.rms < 0.0 || spec.periods == 0 {
        return Err(Error::Parameter("rms must be non-negative and periods at least 1".into()));
    }
    let bins = excited_bins(spec.f_min, spec.f_max, spec.samples_per_period, spec.sample_rate);
    if bins.is_empty() {
        return Err(Error::Parameter("no DFT bin falls inside the excitation band".into()));
    }
    let n = spec.samples_per_period;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = bins.iter().map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for (&k, &ph) in bins.iter().zip(&phases) {
        let c = Complex64::from_polar(1.0, ph);
        spectrum[k] = c;
        spectrum[n - k] = c.conj();
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spectrum);
    let mut period: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let rms = (period.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { spec.rms / rms } else { 0.0 };
    period.iter_mut().for_each(|x| *x *= scale);
    Ok(Multisine { spec: spec.clone(), period, excited_bins: bins, phases })
}

/// Constant-amplitude stepped sine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteppedSineSchedule {
    pub f_start: f64,
    pub f_end: f64,
    pub df: f64,
    /// Force amplitude (N).
    pub amplitude: f64,
    /// Cycles discarded per step before measuring.
    pub settle_periods: usize,
    /// Cycles measured per step.
    pub measure_periods: usize,
}

impl SteppedSineSchedule {
    pub fn step_count(&self) -> Result<usize> {
        if self.f_start == self.f_end {
            return Ok(1);
        }
        if self.df <= 0.0 {
            return Err(Error::Parameter("frequency step must be positive".into()));
        }
        if self.f_end < self.f_start {
            return Err(Error::Parameter("f_end must not be below f_start".into()));
        }
        Ok(((self.f_end - self.f_start) / self.df + 1e-9).floor() as usize + 1)
    }

    pub fn frequencies(&self) -> Result<Vec<f64>> {
        Ok((0..self.step_count()?).map(|i| self.f_start + i as f64 * self.df).collect())
    }
}

/// Sample ranges of one stepped-sine step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineStep {
    pub frequency: f64,
    pub start: usize,
    /// First sample of the measured window.
    pub measure_start: usize,
    pub end: usize,
}

/// Concatenated stepped-sine force with step boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SteppedSine {
    pub signal: Vec<f64>,
    pub steps: Vec<SineStep>,
    pub fs: f64,
}

/// Build the phase-continuous stepped sine `A sin(phi)`.
///
/// Each step lasts `settle + measure` cycles rounded to whole samples; the
/// phase accumulator carries over between steps.
pub fn stepped_sine_signal(schedule: &SteppedSineSchedule, fs: f64) -> Result<SteppedSine> {
    let freqs = schedule.frequencies()?;
    if schedule.amplitude < 0.0 {
        return Err(Error::Parameter("amplitude must be non-negative".into()));
    }
    if freqs.iter().any(|&f| f <= 0.0 || f >= fs / 2.0) {
        return Err(Error::Parameter("stepped-sine frequencies must lie in (0, fs/2)".into()));
    }
    let mut signal = Vec::new();
    let mut steps = Vec::with_capacity(freqs.len());
    let mut phase = 0.0f64;
    for &f in &freqs {
        let per = fs / f;
        let settle = (schedule.settle_periods as f64 * per).round() as usize;
        let total = ((schedule.settle_periods + schedule.measure_periods) as f64 * per).round() as usize;
        let start = signal.len();
        let dphi = 2.0 * PI * f / fs;
        for _ in 0..total {
            phase += dphi;
            signal.push(schedule.amplitude * phase.sin());
        }
        phase %= 2.0 * PI;
        steps.push(SineStep { frequency: f, start, measure_start: start + settle, end: start + total });
    }
    Ok(SteppedSine { signal, steps, fs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> MultisineSpec {
        MultisineSpec {
            f_min: 5.0,
            f_max: 500.0,
            samples_per_period: 4096,
            sample_rate: 3000.0,
            rms: 15.0,
            periods: 3,
            seed: 7,
        }
    }

    #[test]
    fn rms_is_exact() {
        let ms = generate_multisine(&spec()).unwrap();
        let rms = (ms.period.iter().map(|x| x * x).sum::<f64>() / ms.period.len() as f64).sqrt();
        assert!((rms / 15.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_bin_is_a_sine() {
        let s = MultisineSpec {
            f_min: 100.0,
            f_max: 100.0,
            samples_per_period: 300,
            sample_rate: 3000.0,
            rms: 2.0,
            periods: 1,
            seed: 1,
        };
        let ms = generate_multisine(&s).unwrap();
        assert_eq!(ms.excited_bins, vec![10]);
        let peak = ms.period.iter().cloned().fold(0.0, f64::max);
        assert!((peak / (2.0 * 2f64.sqrt()) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn empty_band_is_rejected() {
        let mut s = spec();
        s.f_min = 0.1;
        s.f_max = 0.2;
        assert!(generate_multisine(&s).is_err());
    }

    #[test]
    fn dc_and_nyquist_excluded() {
        let b = excited_bins(0.0, 1500.0, 8, 3000.0);
        assert_eq!(b, vec![1, 2, 3]);
    }

    #[test]
    fn stepped_sine_step_count_and_errors() {
        let s = SteppedSineSchedule {
            f_start: 30.0,
            f_end: 31.0,
            df: 0.1,
            amplitude: 3.0,
            settle_periods: 2,
            measure_periods: 1,
        };
        assert_eq!(s.step_count().unwrap(), 11);
        let bad = SteppedSineSchedule { df: 0.0, ..s.clone() };
        assert!(stepped_sine_signal(&bad, 1000.0).is_err());
        let zero = SteppedSineSchedule { amplitude: 0.0, ..s };
        assert!(stepped_sine_signal(&zero, 1000.0).unwrap().signal.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_is_constant_sine() {
        let s = SteppedSineSchedule {
            f_start: 36.8,
            f_end: 36.8,
            df: 0.1,
            amplitude: 3.0,
            settle_periods: 3,
            measure_periods: 2,
        };
        let sig = stepped_sine_signal(&s, 10000.0).unwrap();
        assert_eq!(sig.steps.len(), 1);
        for (i, &x) in sig.signal.iter().enumerate() {
            let expect = 3.0 * (2.0 * PI * 36.8 * (i + 1) as f64 / 10000.0).sin();
            assert!((x - expect).abs() < 1e-9);
        }
    }
}
