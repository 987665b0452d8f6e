//! Nonlinear normal modes of the undamped modal model by shooting and
//! pseudo-arclength continuation.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::modal::ModalModel;

/// Adaptive integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    /// Smallest admissible step as a fraction of the integration span.
    pub min_step_fraction: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, min_step_fraction: 1e-12, max_steps: 2_000_000 }
    }
}

// Dormand-Prince 5(4) tableau; the system is autonomous so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Integrate `y' = f(y)` from 0 to `t_end` with Dormand-Prince 5(4).
///
/// `atol` gives the absolute tolerance per component. Steps are shortened to
/// land on every time in `outputs` (sorted, within `[0, t_end]`), and
/// `on_output` receives each of those states.
pub fn dopri5<F, O>(
    f: F,
    y0: &[f64],
    t_end: f64,
    atol: &[f64],
    options: IntegratorOptions,
    outputs: &[f64],
    mut on_output: O,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
    O: FnMut(usize, &[f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut t = 0.0;
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= 0.0 {
        on_output(next_out, &y);
        next_out += 1;
    }
    if t_end <= 0.0 {
        return Ok(y);
    }
    let h_min = options.min_step_fraction * t_end;
    let mut h = t_end / 100.0;
    f(&y, &mut k[0]);
    let mut steps = 0;
    while t < t_end {
        steps += 1;
        if steps > options.max_steps {
            return Err(Error::IntegratorTolerance { time: t, message: "maximum step count exceeded".into() });
        }
        let mut target = t_end;
        if next_out < outputs.len() {
            target = target.min(outputs[next_out]);
        }
        let mut h_try = h.min(target - t);
        let landing = (target - t) <= h;
        if landing {
            h_try = target - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h_try * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(&tmp, &mut tail[0]);
        }
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut s5 = 0.0;
            let mut s4 = 0.0;
            for j in 0..7 {
                s5 += B5[j] * k[j][i];
                s4 += B4[j] * k[j][i];
            }
            y5[i] = y[i] + h_try * s5;
            let sc = atol[i] + options.rtol * y[i].abs().max(y5[i].abs());
            let e = h_try * (s5 - s4) / sc;
            err += e * e;
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::IntegratorTolerance { time: t, message: "non-finite state".into() });
        }
        if err <= 1.0 {
            t = if landing { target } else { t + h_try };
            std::mem::swap(&mut y, &mut y5);
            // FSAL: the last stage is the derivative at the new point.
            k.swap(0, 6);
            while next_out < outputs.len() && outputs[next_out] <= t * (1.0 + 1e-15) {
                on_output(next_out, &y);
                next_out += 1;
            }
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !landing || grow < 1.0 {
                h = h_try * grow;
            }
        } else {
            h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < h_min {
                return Err(Error::IntegratorTolerance {
                    time: t,
                    message: format!("step size {h:.3e} below minimum"),
                });
            }
        }
    }
    Ok(y)
}

/// Shooting result.
#[derive(Debug, Clone)]
pub struct Shot {
    /// `z(T) - z0`.
    pub residual: DVector<f64>,
    /// `dz(T)/dz0`.
    pub monodromy: DMatrix<f64>,
    /// `dz/dt` at `T`.
    pub end_derivative: DVector<f64>,
}

fn first_order_rhs(model: &ModalModel, z: &[f64], out: &mut [f64]) {
    let m = model.n_modes();
    let q = DVector::from_column_slice(&z[..m]);
    let (f, _) = model.restoring_force(&q);
    for i in 0..m {
        out[i] = z[m + i];
        out[m + i] = -f[i];
    }
}

fn state_tolerances(model: &ModalModel, z0: &[f64], rtol: f64) -> Vec<f64> {
    let m = model.n_modes();
    let wmax = model.omega.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let qs = z0[..m].iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let vs = z0[m..].iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let scale_q = qs.max(vs / wmax).max(1e-300);
    (0..2 * m).map(|i| rtol * if i < m { scale_q } else { scale_q * wmax }).collect()
}

/// Integrate the conservative dynamics over `[0, period]` together with the
/// variational equations.
pub fn shoot(model: &ModalModel, z0: &DVector<f64>, period: f64, options: IntegratorOptions) -> Result<Shot> {
    let m = model.n_modes();
    let nz = 2 * m;
    if z0.len() != nz {
        return Err(Error::Parameter(format!("initial state must have length {nz}")));
    }
    if period <= 0.0 {
        return Err(Error::Parameter("period must be positive".into()));
    }
    let mut y0 = vec![0.0; nz + nz * nz];
    y0[..nz].copy_from_slice(z0.as_slice());
    for i in 0..nz {
        y0[nz + i * nz + i] = 1.0;
    }
    let mut atol = state_tolerances(model, z0.as_slice(), options.rtol);
    // Monodromy columns, stored column-major after the state. Column j is
    // the response to a unit perturbation of z0_j; scale tolerances by the
    // natural size of that perturbation.
    let wmax = model.omega.iter().cloned().fold(0.0, f64::max).max(1e-300);
    for j in 0..nz {
        for i in 0..nz {
            let ratio = match (i < m, j < m) {
                (true, true) | (false, false) => 1.0,
                (false, true) => wmax,
                (true, false) => 1.0 / wmax,
            };
            atol.push(options.rtol * ratio);
        }
    }
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let q = DVector::from_column_slice(&y[..m]);
        let (f, jac) = model.restoring_force(&q);
        for i in 0..m {
            dy[i] = y[m + i];
            dy[m + i] = -f[i];
        }
        for j in 0..nz {
            let col = &y[nz + j * nz..nz + (j + 1) * nz];
            let out = &mut dy[nz + j * nz..nz + (j + 1) * nz];
            for i in 0..m {
                out[i] = col[m + i];
            }
            for i in 0..m {
                let mut s = 0.0;
                for l in 0..m {
                    s += jac[(i, l)] * col[l];
                }
                out[m + i] = -s;
            }
        }
    };
    let y = dopri5(rhs, &y0, period, &atol, options, &[], |_, _| {})?;
    let zt = DVector::from_column_slice(&y[..nz]);
    let monodromy = DMatrix::from_column_slice(nz, nz, &y[nz..]);
    let mut end = vec![0.0; nz];
    first_order_rhs(model, &y[..nz], &mut end);
    Ok(Shot { residual: zt - z0, monodromy, end_derivative: DVector::from_vec(end) })
}

/// Sampled trajectory over `[0, period]` at `samples` equally spaced times
/// (the end point excluded). Returns the modal states as rows.
pub fn sample_orbit(
    model: &ModalModel,
    z0: &DVector<f64>,
    period: f64,
    samples: usize,
    options: IntegratorOptions,
) -> Result<DMatrix<f64>> {
    let nz = 2 * model.n_modes();
    let times: Vec<f64> = (0..samples).map(|i| period * i as f64 / samples as f64).collect();
    let atol = state_tolerances(model, z0.as_slice(), options.rtol);
    let mut out = DMatrix::zeros(samples, nz);
    dopri5(
        |y, dy| first_order_rhs(model, y, dy),
        z0.as_slice(),
        period,
        &atol,
        options,
        &times,
        |i, y| {
            for (j, &v) in y.iter().enumerate() {
                out[(i, j)] = v;
            }
        },
    )?;
    Ok(out)
}

/// One periodic solution of a branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSolution {
    /// Initial modal displacements (initial velocities are zero).
    pub q0: Vec<f64>,
    pub period: f64,
    /// Conserved energy.
    pub energy: f64,
    /// `max |x_dof(t)|` over the orbit.
    pub amplitude: f64,
    /// Fundamental-harmonic amplitude of `x_dof(t)`.
    pub fundamental_amplitude: f64,
    /// `|z(T) - z0| / |z0|`.
    pub residual: f64,
    /// Largest Floquet multiplier magnitude.
    pub max_floquet: f64,
    pub monodromy_det: f64,
    pub iterations: usize,
}

impl PeriodicSolution {
    pub fn frequency_hz(&self) -> f64 {
        1.0 / self.period
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    pub fn initial_state(&self) -> DVector<f64> {
        let m = self.q0.len();
        DVector::from_fn(2 * m, |i, _| if i < m { self.q0[i] } else { 0.0 })
    }
}

/// Branch termination rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopRule {
    /// Stop once `max |x_dof|` exceeds this value (m).
    MaxAmplitude(f64),
    /// Stop once the energy exceeds this value.
    MaxEnergy(f64),
}

/// Continuation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    /// Amplitude of the designated DOF at the linear seed.
    pub seed_amplitude: f64,
    /// Relative shooting tolerance.
    pub tolerance: f64,
    pub max_newton: usize,
    /// Initial, minimal and maximal step in scaled arclength.
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
    /// Largest accepted change of `log10(energy)` per step.
    pub max_log_energy_step: f64,
    /// Largest accepted relative frequency change per step.
    pub max_frequency_step: f64,
    /// Orbit samples used for amplitudes.
    pub orbit_samples: usize,
    pub integrator: IntegratorOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            seed_amplitude: 1e-5,
            tolerance: 1e-9,
            max_newton: 12,
            initial_step: 0.2,
            min_step: 1e-6,
            max_step: 1e6,
            max_points: 2000,
            max_log_energy_step: 0.25,
            max_frequency_step: 0.005,
            orbit_samples: 256,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Continued branch of one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnmBranch {
    pub mode: usize,
    /// Shape row used for amplitudes.
    pub row: usize,
    pub points: Vec<PeriodicSolution>,
    /// Step sizes of the accepted points.
    pub steps: Vec<f64>,
    pub options: ContinuationOptions,
    /// Why continuation stopped.
    pub termination: String,
}

/// Unknown scaling: displacements by the seed size, period by the linear period.
#[derive(Debug, Clone, Copy)]
struct Scaling {
    q: f64,
    t: f64,
}

impl Scaling {
    fn unpack(&self, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let m = x.len() - 1;
        let mut z0 = DVector::zeros(2 * m);
        for i in 0..m {
            z0[i] = x[i] * self.q;
        }
        (z0, x[m] * self.t)
    }
}

struct Evaluation {
    residual: DVector<f64>,
    /// Jacobian with respect to the scaled unknowns.
    jacobian: DMatrix<f64>,
    relative: f64,
    monodromy: DMatrix<f64>,
}

fn evaluate(model: &ModalModel, x: &DVector<f64>, sc: Scaling, options: &ContinuationOptions) -> Result<Evaluation> {
    let m = model.n_modes();
    let (z0, period) = sc.unpack(x);
    let shot = shoot(model, &z0, period, options.integrator)?;
    let mut jac = DMatrix::zeros(2 * m, m + 1);
    for j in 0..m {
        for i in 0..2 * m {
            let e = if i == j { 1.0 } else { 0.0 };
            jac[(i, j)] = (shot.monodromy[(i, j)] - e) * sc.q;
        }
    }
    for i in 0..2 * m {
        jac[(i, m)] = shot.end_derivative[i] * sc.t;
    }
    let relative = shot.residual.norm() / z0.norm().max(f64::MIN_POSITIVE);
    Ok(Evaluation { residual: shot.residual, jacobian: jac, relative, monodromy: shot.monodromy })
}

/// Minimum-norm solution of the bordered system `[J; t^T] d = [-r; 0]`.
fn bordered_step(
    jac: &DMatrix<f64>,
    residual: &DVector<f64>,
    tangent: &DVector<f64>,
    sc: Scaling,
) -> Result<DVector<f64>> {
    let rows = jac.nrows();
    let cols = jac.ncols();
    let mut a = DMatrix::zeros(rows + 1, cols);
    a.view_mut((0, 0), (rows, cols)).copy_from(jac);
    // Rows in physical units are rescaled by the displacement scale so the
    // tangent row carries comparable weight.
    let mut b = DVector::zeros(rows + 1);
    for i in 0..rows {
        b[i] = -residual[i] / sc.q;
        for j in 0..cols {
            a[(i, j)] /= sc.q;
        }
    }
    for j in 0..cols {
        a[(rows, j)] = tangent[j];
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(&b, smax * 1e-13).map_err(|e| Error::Numerical(e.to_string()))
}

/// Unit null vector of the shooting Jacobian, oriented along `previous`.
fn tangent(jac: &DMatrix<f64>, previous: &DVector<f64>) -> DVector<f64> {
    let cols = jac.ncols();
    let gram = jac.transpose() * jac;
    let eig = gram.symmetric_eigen();
    let mut imin = 0;
    for i in 1..cols {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let mut t = eig.eigenvectors.column(imin).into_owned();
    t /= t.norm();
    if t.dot(previous) < 0.0 {
        t = -t;
    }
    t
}

/// Newton corrector constrained to the hyperplane through `prediction`
/// orthogonal to `direction` (scaled unknowns). Returns the corrected
/// unknowns, the final evaluation and the iteration count.
fn correct_scaled(
    model: &ModalModel,
    prediction: &DVector<f64>,
    direction: &DVector<f64>,
    sc: Scaling,
    options: &ContinuationOptions,
) -> Result<(DVector<f64>, Evaluation, usize)> {
    let mut x = prediction.clone();
    let mut last = f64::INFINITY;
    for it in 0..=options.max_newton {
        let ev = evaluate(model, &x, sc, options)?;
        if !ev.relative.is_finite() {
            break;
        }
        if ev.relative <= options.tolerance {
            return Ok((x, ev, it));
        }
        if it > 2 && ev.relative > 0.5 * last && ev.relative > 1e3 * options.tolerance {
            break;
        }
        last = ev.relative;
        let d = bordered_step(&ev.jacobian, &ev.residual, direction, sc)?;
        x += d;
        if x[x.len() - 1] <= 0.0 {
            break;
        }
    }
    Err(Error::NonConvergence(format!("shooting residual not below {:.1e}", options.tolerance)))
}

/// Physical displacement at `row` over the orbit and the derived amplitudes.
fn orbit_amplitudes(
    model: &ModalModel,
    z0: &DVector<f64>,
    period: f64,
    row: usize,
    options: &ContinuationOptions,
) -> Result<(f64, f64)> {
    let orbit = sample_orbit(model, z0, period, options.orbit_samples, options.integrator)?;
    let m = model.n_modes();
    let shape = model.shapes.row(row);
    let x: Vec<f64> = (0..orbit.nrows()).map(|i| (0..m).map(|j| shape[j] * orbit[(i, j)]).sum()).collect();
    Ok((x.iter().fold(0.0f64, |a, v| a.max(v.abs())), fundamental_amplitude(&x)))
}

/// Amplitude of the first harmonic of one period of samples.
pub fn fundamental_amplitude(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut s = Complex64::new(0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        s += Complex64::from_polar(v, -2.0 * PI * i as f64 / n);
    }
    2.0 * s.norm() / n
}

fn make_solution(
    model: &ModalModel,
    x: &DVector<f64>,
    ev: &Evaluation,
    iterations: usize,
    sc: Scaling,
    row: usize,
    options: &ContinuationOptions,
) -> Result<PeriodicSolution> {
    let m = model.n_modes();
    let (z0, period) = sc.unpack(x);
    let q0 = DVector::from_column_slice(&z0.as_slice()[..m]);
    let (amplitude, fundamental) = orbit_amplitudes(model, &z0, period, row, options)?;
    let (max_floquet, det) = floquet(&ev.monodromy);
    Ok(PeriodicSolution {
        q0: q0.iter().copied().collect(),
        period,
        energy: model.potential(&q0),
        amplitude,
        fundamental_amplitude: fundamental,
        residual: ev.relative,
        max_floquet,
        monodromy_det: det,
        iterations,
    })
}

/// Largest Floquet multiplier magnitude and the monodromy determinant.
pub fn floquet(monodromy: &DMatrix<f64>) -> (f64, f64) {
    let mu = monodromy.clone().complex_eigenvalues();
    (mu.iter().map(|c| c.norm()).fold(0.0, f64::max), monodromy.determinant())
}

/// Floquet multipliers of a monodromy matrix.
pub fn floquet_multipliers(monodromy: &DMatrix<f64>) -> Vec<Complex64> {
    monodromy.clone().complex_eigenvalues().iter().copied().collect()
}

/// Correct a prediction `(q0, period)` in the hyperplane orthogonal to a
/// direction given in the same units.
pub fn correct(
    model: &ModalModel,
    q0: &[f64],
    period: f64,
    direction: &[f64],
    row: usize,
    options: &ContinuationOptions,
) -> Result<PeriodicSolution> {
    let m = model.n_modes();
    if q0.len() != m || direction.len() != m + 1 {
        return Err(Error::Parameter("prediction and direction sizes do not match the model".into()));
    }
    let qs = q0.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let sc = Scaling { q: qs, t: period };
    let x = DVector::from_fn(m + 1, |i, _| if i < m { q0[i] / sc.q } else { 1.0 });
    let mut d = DVector::from_fn(m + 1, |i, _| if i < m { direction[i] / sc.q } else { direction[m] / sc.t });
    let nd = d.norm();
    if nd == 0.0 {
        return Err(Error::Parameter("zero direction".into()));
    }
    d /= nd;
    let (x, ev, it) = correct_scaled(model, &x, &d, sc, options)?;
    make_solution(model, &x, &ev, it, sc, row, options)
}

/// Continue the NNM of `mode` from its linear limit until the stop rule.
pub fn continue_branch(
    model: &ModalModel,
    mode: usize,
    row: usize,
    stop: StopRule,
    options: ContinuationOptions,
) -> Result<NnmBranch> {
    let m = model.n_modes();
    if mode >= m {
        return Err(Error::Parameter(format!("mode {mode} does not exist ({m} modes)")));
    }
    if row >= model.shapes.nrows() {
        return Err(Error::Parameter(format!("row {row} outside the shape matrix")));
    }
    let w0 = model.omega[mode];
    if w0 <= 0.0 {
        return Err(Error::Parameter("mode has no positive frequency".into()));
    }
    let phi = model.shapes[(row, mode)];
    if phi.abs() < 1e-12 * model.shapes.column(mode).amax() {
        return Err(Error::NodeOfMode { mode });
    }
    let sc = Scaling { q: options.seed_amplitude / phi.abs(), t: 2.0 * PI / w0 };
    let mut x = DVector::zeros(m + 1);
    x[mode] = 1.0;
    x[m] = 1.0;
    let mut dir = DVector::zeros(m + 1);
    dir[mode] = 1.0;
    let (x0, ev0, it0) = correct_scaled(model, &x, &dir, sc, &options)?;
    let first = make_solution(model, &x0, &ev0, it0, sc, row, &options)?;
    let mut points = vec![first];
    let mut steps = vec![0.0];
    let mut x = x0;
    let mut t = tangent(&ev0.jacobian, &dir);
    let mut h = options.initial_step;
    let mut termination = String::from("maximum number of points reached");
    let reached = |p: &PeriodicSolution| match stop {
        StopRule::MaxAmplitude(a) => p.amplitude >= a,
        StopRule::MaxEnergy(e) => p.energy >= e,
    };
    if reached(&points[0]) {
        termination = "stop rule met at the seed".into();
    } else {
        while points.len() < options.max_points {
            let pred = &x + &t * h;
            let attempt = correct_scaled(model, &pred, &t, sc, &options).and_then(|(xn, ev, it)| {
                let sol = make_solution(model, &xn, &ev, it, sc, row, &options)?;
                Ok((xn, ev, it, sol))
            });
            let accepted = match attempt {
                Ok((xn, ev, it, sol)) => {
                    let prev = points.last().unwrap();
                    let de = (sol.energy.max(f64::MIN_POSITIVE) / prev.energy.max(f64::MIN_POSITIVE)).log10().abs();
                    let dw = (sol.period / prev.period - 1.0).abs();
                    if de > options.max_log_energy_step || dw > options.max_frequency_step {
                        debug!("step {h:.3e} rejected: dlogE = {de:.3e}, dT/T = {dw:.3e}");
                        None
                    } else {
                        Some((xn, ev, it, sol))
                    }
                }
                Err(Error::NonConvergence(msg)) | Err(Error::IntegratorTolerance { message: msg, .. }) => {
                    debug!("step {h:.3e} failed: {msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            match accepted {
                Some((xn, ev, it, sol)) => {
                    let done = reached(&sol);
                    t = tangent(&ev.jacobian, &t);
                    x = xn;
                    points.push(sol);
                    steps.push(h);
                    if done {
                        termination = "stop rule met".into();
                        break;
                    }
                    if it <= 3 {
                        h = (h * 1.3).min(options.max_step);
                    }
                }
                None => {
                    h *= 0.5;
                    if h < options.min_step {
                        warn!("mode {mode}: corrector failed at the minimum step; branch terminated early");
                        termination = "corrector failed at the minimum step".into();
                        break;
                    }
                }
            }
        }
    }
    Ok(NnmBranch { mode, row, points, steps, options, termination })
}

/// Frequency-amplitude and frequency-energy rows of a branch:
/// `(amplitude, fundamental amplitude, energy, frequency Hz)`.
pub fn branch_table(branch: &NnmBranch) -> Vec<[f64; 4]> {
    branch.points.iter().map(|p| [p.amplitude, p.fundamental_amplitude, p.energy, p.frequency_hz()]).collect()
}

/// Periodic solution at a requested amplitude: the bracketing branch points
/// are interpolated linearly and corrected orthogonally to their secant.
pub fn solution_at_amplitude(model: &ModalModel, branch: &NnmBranch, amplitude: f64) -> Result<PeriodicSolution> {
    let pts = &branch.points;
    let idx = pts
        .windows(2)
        .position(|w| (w[0].amplitude - amplitude) * (w[1].amplitude - amplitude) <= 0.0)
        .ok_or_else(|| Error::Parameter(format!("amplitude {amplitude:e} is outside the branch")))?;
    let (a, b) = (&pts[idx], &pts[idx + 1]);
    let s = if b.amplitude != a.amplitude { (amplitude - a.amplitude) / (b.amplitude - a.amplitude) } else { 0.0 };
    let m = a.q0.len();
    let q0: Vec<f64> = (0..m).map(|i| a.q0[i] + s * (b.q0[i] - a.q0[i])).collect();
    let period = a.period + s * (b.period - a.period);
    let mut dir: Vec<f64> = (0..m).map(|i| b.q0[i] - a.q0[i]).collect();
    dir.push(b.period - a.period);
    correct(model, &q0, period, &dir, branch.row, &branch.options)
}

/// Physical displacements at the measured DOFs over one period, one row per
/// sample.
pub fn physical_orbit(
    model: &ModalModel,
    solution: &PeriodicSolution,
    samples: usize,
    options: IntegratorOptions,
) -> Result<DMatrix<f64>> {
    let orbit = sample_orbit(model, &solution.initial_state(), solution.period, samples, options)?;
    let m = model.n_modes();
    let q = orbit.columns(0, m);
    Ok(q * model.shapes.transpose())
}

/// Largest distance of the points `(x_i, y_i)` from their total-least-squares
/// line, relative to the largest distance of the points from the centroid.
pub fn line_deviation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (c, s) = (theta.cos(), theta.sin());
    let mut dev: f64 = 0.0;
    let mut ext: f64 = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        dev = dev.max((-s * dx + c * dy).abs());
        ext = ext.max((dx * dx + dy * dy).sqrt());
    }
    if ext > 0.0 {
        dev / ext
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dopri5_matches_exponential() {
        let y =
            dopri5(|y, dy| dy[0] = -y[0], &[1.0], 2.0, &[1e-14], IntegratorOptions::default(), &[], |_, _| {}).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn dopri5_hits_output_times() {
        let times = [0.0, 0.5, 1.0];
        let mut seen = [0.0; 3];
        dopri5(|_, dy| dy[0] = 1.0, &[0.0], 1.0, &[1e-12], IntegratorOptions::default(), &times, |i, y| seen[i] = y[0])
            .unwrap();
        for (a, b) in seen.iter().zip(times) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn line_deviation_of_a_segment_is_zero() {
        let x = [0.0, 1.0, 2.0, -1.0];
        let y = [0.0, 2.0, 4.0, -2.0];
        assert!(line_deviation(&x, &y) < 1e-12);
        assert!(line_deviation(&[1.0, 0.0, -1.0, 0.0], &[0.0, 1.0, 0.0, -1.0]) > 0.9);
    }
}
