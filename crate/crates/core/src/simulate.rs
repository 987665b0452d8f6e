//! Synthetic experiments: nonlinear Newmark integration, decimation and
//! measurement noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{butterworth_lowpass, filtfilt};
use crate::error::{Error, Result};
use crate::excitation::{generate_multisine, MultisineSpec};
use crate::model::{CompiledForce, FeModel, NonlinearBasis};

/// One measured displacement channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub label: String,
    /// Model DOF the channel measures.
    pub dof: usize,
    pub data: Vec<f64>,
}

/// Sampled displacement channels plus the applied force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub fs: f64,
    pub channels: Vec<Channel>,
    pub input: Vec<f64>,
    pub forcing_dof: usize,
    pub periods: usize,
    pub samples_per_period: usize,
}

impl TimeSeriesRecord {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// Index of the channel measuring `dof`.
    pub fn channel_index(&self, dof: usize) -> Option<usize> {
        self.channels.iter().position(|c| c.dof == dof)
    }

    /// Check lengths and label uniqueness.
    pub fn validate(&self) -> Result<()> {
        let n = self.input.len();
        if self.periods * self.samples_per_period != n {
            return Err(Error::Data(format!(
                "record length {n} differs from periods x samples ({} x {})",
                self.periods, self.samples_per_period
            )));
        }
        for (i, c) in self.channels.iter().enumerate() {
            if c.data.len() != n {
                return Err(Error::Data(format!("channel {} has {} samples, expected {n}", c.label, c.data.len())));
            }
            if self.channels[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::Data(format!("duplicate channel label {}", c.label)));
            }
        }
        Ok(())
    }
}

/// Displacement and velocity state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl State {
    pub fn zeros(n: usize) -> Self {
        Self { q: DVector::zeros(n), v: DVector::zeros(n) }
    }
}

/// Newton settings of the implicit integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewmarkOptions {
    /// Relative residual tolerance.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewmarkOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 25 }
    }
}

/// Output of a Newmark run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub record: TimeSeriesRecord,
    pub final_state: State,
    pub final_acceleration: DVector<f64>,
    /// Velocities at the recorded DOFs, when requested.
    pub velocities: Option<Vec<Vec<f64>>>,
}

/// Average-acceleration Newmark integrator (gamma = 1/2, beta = 1/4) for
/// `M q'' + C q' + K q + f(q) = p(t) e_k`.
///
/// Each step is solved in condensed form: with `z = Keff^-1 r` the linear
/// predictor, the nonlinear DOFs satisfy `q_S = z_S - Z_SS f(q_S)` where
/// `Z = Keff^-1` restricted to the nonlinear DOFs; Newton iterations run on
/// this small system only.
pub struct Newmark {
    n: usize,
    h: f64,
    /// `Keff^-1 (4/h^2 M + 2/h C)`.
    pq: DMatrix<f64>,
    /// `Keff^-1 (4/h M + C)`.
    pv: DMatrix<f64>,
    /// `Keff^-1 M`.
    pa: DMatrix<f64>,
    /// Column of `Keff^-1` at the forcing DOF.
    pf: DVector<f64>,
    /// Columns of `Keff^-1` at the nonlinear DOFs.
    zs: Vec<DVector<f64>>,
    /// `Keff^-1` restricted to the nonlinear DOFs.
    zmat: DMatrix<f64>,
    force: CompiledForce,
    m_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    c: DMatrix<f64>,
    k: DMatrix<f64>,
    forcing_dof: usize,
    options: NewmarkOptions,
}

impl Newmark {
    pub fn new(model: &FeModel, basis: &NonlinearBasis, fs: f64, options: NewmarkOptions) -> Result<Self> {
        if fs <= 0.0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        let n = model.n_p;
        if basis.terms.iter().any(|t| t.dof >= n) {
            return Err(Error::Parameter("nonlinear term DOF outside the model".into()));
        }
        let h = 1.0 / fs;
        let keff = &model.k + &model.c * (2.0 / h) + &model.m * (4.0 / (h * h));
        let kinv = keff.try_inverse().ok_or_else(|| Error::Numerical("singular effective stiffness".into()))?;
        let pq = &kinv * (&model.m * (4.0 / (h * h)) + &model.c * (2.0 / h));
        let pv = &kinv * (&model.m * (4.0 / h) + &model.c);
        let pa = &kinv * &model.m;
        let pf = kinv.column(model.forcing_dof).into_owned();
        let force = basis.compile();
        let zs: Vec<DVector<f64>> = force.laws.iter().map(|l| kinv.column(l.dof).into_owned()).collect();
        let zmat = DMatrix::from_fn(zs.len(), zs.len(), |i, j| zs[j][force.laws[i].dof]);
        Ok(Self {
            n,
            h,
            pq,
            pv,
            pa,
            pf,
            zs,
            zmat,
            force,
            m_lu: model.m.clone().lu(),
            c: model.c.clone(),
            k: model.k.clone(),
            forcing_dof: model.forcing_dof,
            options,
        })
    }

    /// Acceleration consistent with the equation of motion.
    pub fn initial_acceleration(&self, state: &State, p0: f64) -> Result<DVector<f64>> {
        let mut rhs = -(&self.c * &state.v) - &self.k * &state.q;
        for law in &self.force.laws {
            rhs[law.dof] -= law.eval(state.q[law.dof]).0;
        }
        rhs[self.forcing_dof] += p0;
        self.m_lu.solve(&rhs).ok_or_else(|| Error::Numerical("singular mass matrix".into()))
    }

    /// Advance one step to the force value `p`; `step` labels errors.
    pub fn step(
        &self,
        q: &mut DVector<f64>,
        v: &mut DVector<f64>,
        a: &mut DVector<f64>,
        p: f64,
        step: usize,
        work: &mut DVector<f64>,
    ) -> Result<()> {
        let h = self.h;
        work.gemv(1.0, &self.pq, q, 0.0);
        work.gemv(1.0, &self.pv, v, 1.0);
        work.gemv(1.0, &self.pa, a, 1.0);
        work.axpy(p, &self.pf, 1.0);
        let ns = self.force.laws.len();
        if ns > 0 {
            let mut x: Vec<f64> = self.force.laws.iter().map(|l| work[l.dof]).collect();
            let z: Vec<f64> = x.clone();
            let zmat = &self.zmat;
            let mut converged = false;
            let mut f = vec![0.0; ns];
            for _ in 0..self.options.max_iterations {
                let mut df = vec![0.0; ns];
                for (i, law) in self.force.laws.iter().enumerate() {
                    let (fi, dfi) = law.eval(x[i]);
                    f[i] = fi;
                    df[i] = dfi;
                }
                let mut g = DVector::zeros(ns);
                let mut jac = DMatrix::identity(ns, ns);
                for i in 0..ns {
                    let mut s = x[i] - z[i];
                    for j in 0..ns {
                        s += zmat[(i, j)] * f[j];
                        jac[(i, j)] += zmat[(i, j)] * df[j];
                    }
                    g[i] = s;
                }
                let scale = z.iter().chain(x.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                if g.amax() <= self.options.tolerance * scale {
                    converged = true;
                    break;
                }
                let dx = if ns == 1 {
                    DVector::from_element(1, g[0] / jac[(0, 0)])
                } else {
                    jac.lu()
                        .solve(&g)
                        .ok_or_else(|| Error::Integration { step, message: "singular Newton matrix".into() })?
                };
                for i in 0..ns {
                    x[i] -= dx[i];
                }
                if x.iter().any(|v| !v.is_finite()) {
                    break;
                }
            }
            if !converged {
                return Err(Error::Integration {
                    step,
                    message: format!("Newton iteration did not converge in {} iterations", self.options.max_iterations),
                });
            }
            for (i, law) in self.force.laws.iter().enumerate() {
                f[i] = law.eval(x[i]).0;
            }
            for j in 0..ns {
                work.axpy(-f[j], &self.zs[j], 1.0);
            }
        }
        let c1 = 4.0 / (h * h);
        let c2 = 4.0 / h;
        for i in 0..self.n {
            let qn = work[i];
            let an = c1 * (qn - q[i]) - c2 * v[i] - a[i];
            v[i] += 0.5 * h * (a[i] + an);
            a[i] = an;
            q[i] = qn;
        }
        Ok(())
    }
}

/// Integrate the forced nonlinear model and record displacements at `record_dofs`.
///
/// Sample `i` of the output is the state after applying `force[i]`, i.e. the
/// response at time `(i + 1) / fs` when the initial state is at `t = 0`.
pub fn newmark_integrate(
    model: &FeModel,
    basis: &NonlinearBasis,
    force: &[f64],
    fs: f64,
    initial: &State,
    record_dofs: &[usize],
    keep_velocities: bool,
    options: NewmarkOptions,
) -> Result<Simulation> {
    if initial.q.len() != model.n_p || initial.v.len() != model.n_p {
        return Err(Error::Parameter(format!("initial state must have dimension 2 x {}", model.n_p)));
    }
    if record_dofs.iter().any(|&d| d >= model.n_p) {
        return Err(Error::Parameter("recorded DOF outside the model".into()));
    }
    let nm = Newmark::new(model, basis, fs, options)?;
    let mut q = initial.q.clone();
    let mut v = initial.v.clone();
    let p0 = 0.0;
    let mut a = nm.initial_acceleration(initial, p0)?;
    let mut work = DVector::zeros(model.n_p);
    let mut channels: Vec<Vec<f64>> = record_dofs.iter().map(|_| Vec::with_capacity(force.len())).collect();
    let mut vel: Vec<Vec<f64>> = if keep_velocities {
        record_dofs.iter().map(|_| Vec::with_capacity(force.len())).collect()
    } else {
        Vec::new()
    };
    for (i, &p) in force.iter().enumerate() {
        nm.step(&mut q, &mut v, &mut a, p, i, &mut work)?;
        for (c, &d) in record_dofs.iter().enumerate() {
            channels[c].push(q[d]);
            if keep_velocities {
                vel[c].push(v[d]);
            }
        }
    }
    let record = TimeSeriesRecord {
        fs,
        channels: record_dofs
            .iter()
            .zip(channels)
            .map(|(&dof, data)| Channel { label: format!("dof{dof}"), dof, data })
            .collect(),
        input: force.to_vec(),
        forcing_dof: model.forcing_dof,
        periods: 1,
        samples_per_period: force.len(),
    };
    Ok(Simulation {
        record,
        final_state: State { q, v },
        final_acceleration: a,
        velocities: if keep_velocities { Some(vel) } else { None },
    })
}

/// Total mechanical energy `T + V_lin + V_nl`.
pub fn total_energy(model: &FeModel, basis: &NonlinearBasis, state: &State) -> f64 {
    let t = 0.5 * state.v.dot(&(&model.m * &state.v));
    let v = 0.5 * state.q.dot(&(&model.k * &state.q));
    t + v + basis.potential(&state.q)
}

/// Anti-alias filter cutoff as a fraction of the new Nyquist rate.
pub const DECIMATION_CUTOFF: f64 = 0.8;
/// Order of the anti-alias Butterworth filter.
pub const DECIMATION_ORDER: usize = 8;

/// Zero-phase low-pass at 80 % of the new Nyquist, then keep every
/// `factor`-th sample.
pub fn decimate(record: &TimeSeriesRecord, factor: usize) -> Result<TimeSeriesRecord> {
    if factor == 0 {
        return Err(Error::Parameter("decimation factor must be positive".into()));
    }
    if !record.samples_per_period.is_multiple_of(factor) {
        return Err(Error::Parameter(format!(
            "factor {factor} does not divide the period length {}",
            record.samples_per_period
        )));
    }
    if factor == 1 {
        return Ok(record.clone());
    }
    let cutoff = DECIMATION_CUTOFF * 0.5 / factor as f64;
    let sos = butterworth_lowpass(DECIMATION_ORDER, cutoff);
    let pad = ((60.0 / cutoff).ceil() as usize).min(record.len().saturating_sub(1)).max(1);
    let period = if record.periods > 1 { Some(record.samples_per_period) } else { None };
    let down = |x: &[f64]| -> Vec<f64> { filtfilt(&sos, x, pad, period).into_iter().step_by(factor).collect() };
    Ok(TimeSeriesRecord {
        fs: record.fs / factor as f64,
        channels: record
            .channels
            .iter()
            .map(|c| Channel { label: c.label.clone(), dof: c.dof, data: down(&c.data) })
            .collect(),
        input: down(&record.input),
        forcing_dof: record.forcing_dof,
        periods: record.periods,
        samples_per_period: record.samples_per_period / factor,
    })
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Add white Gaussian noise of standard deviation `level x RMS(reference)` to
/// every displacement channel (the force is left clean). Returns the noisy
/// record and the per-channel SNR in dB (`+inf` when `level` is zero).
pub fn add_noise(
    record: &TimeSeriesRecord,
    level: f64,
    reference_channel: usize,
    seed: u64,
) -> Result<(TimeSeriesRecord, Vec<f64>)> {
    if !(level >= 0.0) {
        return Err(Error::Parameter("noise level must be non-negative".into()));
    }
    let reference = record
        .channels
        .get(reference_channel)
        .ok_or_else(|| Error::Parameter(format!("reference channel {reference_channel} does not exist")))?;
    let sigma = level * rms(&reference.data);
    let snr: Vec<f64> = record
        .channels
        .iter()
        .map(|c| if sigma > 0.0 { 20.0 * (rms(&c.data) / sigma).log10() } else { f64::INFINITY })
        .collect();
    if sigma == 0.0 {
        return Ok((record.clone(), snr));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = record.clone();
    for c in out.channels.iter_mut() {
        for x in c.data.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    Ok((out, snr))
}

/// Multisine experiment on a model: integration at a high rate, then
/// decimation to the measurement rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineExperiment {
    /// Excitation at the integration rate.
    pub excitation: MultisineSpec,
    /// Integer decimation factor down to the measurement rate.
    pub decimation: usize,
}

/// Run the experiment from rest and record the translational DOFs of the
/// measured nodes.
pub fn run_multisine_experiment(
    model: &FeModel,
    basis: &NonlinearBasis,
    experiment: &MultisineExperiment,
    options: NewmarkOptions,
) -> Result<TimeSeriesRecord> {
    let ms = generate_multisine(&experiment.excitation)?;
    let n = ms.period.len();
    let periods = experiment.excitation.periods;
    if experiment.decimation == 0 || n % experiment.decimation != 0 {
        return Err(Error::Parameter(format!(
            "decimation factor {} does not divide the period length {n}",
            experiment.decimation
        )));
    }
    let dofs = model.measured_dofs();
    let force = ms.signal();
    let sim = newmark_integrate(
        model,
        basis,
        &force,
        experiment.excitation.sample_rate,
        &State::zeros(model.n_p),
        &dofs,
        false,
        options,
    )?;
    drop(force);
    let mut record = sim.record;
    for (c, &node) in record.channels.iter_mut().zip(&model.measured_nodes) {
        c.label = format!("node{node}");
    }
    record.periods = periods;
    record.samples_per_period = n;
    decimate(&record, experiment.decimation)
}
