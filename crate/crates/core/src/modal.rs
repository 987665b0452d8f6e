//! Undamped nonlinear modal models with unit-modal-mass shapes.
//!
//! The model is `q'' + diag(w0^2) q + Phi_S^T f(Phi_S q) = 0`, where `Phi_S`
//! holds the rows of the mode shapes at the DOFs carrying nonlinear terms.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fnsi::{extract_modal_parameters, StateSpaceModel};
use crate::linalg::{generalized_symmetric_eigen, lstsq};
use crate::model::{CompiledForce, FeModel, NonlinearBasis};

/// Driving-point residues of a pole set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueFit {
    /// Residue of each pole with positive imaginary part.
    pub residues: Vec<Complex64>,
    /// Real constant absorbing out-of-band modes and feedthrough.
    pub constant: f64,
    /// RMS fit residual relative to the RMS of the FRF (0 for a zero FRF).
    pub relative_residual: f64,
}

/// Least-squares residues of
/// `G(w) = sum_i R_i / (j w - l_i) + conj(R_i) / (j w - conj(l_i)) + c`.
pub fn fit_driving_point_residues(
    frf: &[Complex64],
    frequencies_hz: &[f64],
    poles: &[Complex64],
) -> Result<ResidueFit> {
    let m = poles.len();
    if frf.len() != frequencies_hz.len() {
        return Err(Error::Parameter("FRF and frequency vectors differ in length".into()));
    }
    if frf.len() < m + 1 {
        return Err(Error::Data(format!("{} lines cannot determine {} residues", frf.len(), m)));
    }
    let nl = frf.len();
    let mut a = DMatrix::zeros(2 * nl, 2 * m + 1);
    let mut b = DMatrix::zeros(2 * nl, 1);
    for (l, (&g, &f)) in frf.iter().zip(frequencies_hz).enumerate() {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        for (i, &lam) in poles.iter().enumerate() {
            let p = 1.0 / (s - lam);
            let q = 1.0 / (s - lam.conj());
            let re = p + q;
            let im = Complex64::i() * (p - q);
            a[(l, 2 * i)] = re.re;
            a[(nl + l, 2 * i)] = re.im;
            a[(l, 2 * i + 1)] = im.re;
            a[(nl + l, 2 * i + 1)] = im.im;
        }
        a[(l, 2 * m)] = 1.0;
        b[(l, 0)] = g.re;
        b[(nl + l, 0)] = g.im;
    }
    for i in 0..m {
        for j in 0..i {
            let d = (poles[i] - poles[j]).norm();
            if d < 1e-6 * poles[i].norm() {
                warn!("poles {j} and {i} nearly coincide; residues are ill-conditioned");
            }
        }
    }
    // Column equilibration before the solve.
    let scales: Vec<f64> = (0..a.ncols())
        .map(|c| {
            let n = a.column(c).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (c, &s) in scales.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / s);
    }
    let x = lstsq(&scaled, &b)?;
    let x: Vec<f64> = (0..a.ncols()).map(|c| x[(c, 0)] / scales[c]).collect();
    let residues: Vec<Complex64> = (0..m).map(|i| Complex64::new(x[2 * i], x[2 * i + 1])).collect();
    let fitted = &a * DMatrix::from_column_slice(x.len(), 1, &x);
    let res = (&fitted - &b).norm();
    let total = b.norm();
    Ok(ResidueFit { residues, constant: x[2 * m], relative_residual: if total > 0.0 { res / total } else { 0.0 } })
}

/// Scaled and realified mode shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledModes {
    /// Real unit-modal-mass shapes, one column per mode.
    pub shapes: DMatrix<f64>,
    /// Complex shapes after scaling, before realification.
    pub complex_shapes: Vec<Vec<Complex64>>,
    /// Largest `|Im| / |Re|` over the components of the rotated shapes.
    pub max_imag_ratio: f64,
}

/// Relative driving-point magnitude below which a mode is considered to
/// have a node at the driving point.
pub const NODE_THRESHOLD: f64 = 1e-6;

/// Global rotation angle minimizing `sum_i Im(e^{-j t} v_i)^2`.
pub fn realification_angle(v: &[Complex64]) -> f64 {
    let s: Complex64 = v.iter().map(|x| x * x).sum();
    0.5 * s.arg()
}

/// Scale complex shapes to unit modal mass from their driving-point
/// residues, rotate them onto the real axis and drop the imaginary parts.
///
/// For a classically damped mode `R_kk = phi_k^2 / (2 j w_d)` with
/// `w_d = Im(lambda)`, so `phi_k = sqrt(2 j w_d R_kk)`; the whole vector is
/// scaled by `phi_k / phi~_k`. The sign is fixed so that the largest
/// component is positive.
pub fn scale_modes(
    shapes: &[Vec<Complex64>],
    residues: &[Complex64],
    eigenvalues: &[Complex64],
    driving_row: usize,
) -> Result<ScaledModes> {
    if shapes.len() != residues.len() || shapes.len() != eigenvalues.len() {
        return Err(Error::Parameter("shape, residue and eigenvalue counts differ".into()));
    }
    let n = shapes.first().map(|s| s.len()).unwrap_or(0);
    let mut out = DMatrix::zeros(n, shapes.len());
    let mut complex_shapes = Vec::with_capacity(shapes.len());
    let mut max_ratio: f64 = 0.0;
    for (i, ((shape, &r), &lam)) in shapes.iter().zip(residues).zip(eigenvalues).enumerate() {
        if shape.len() != n || driving_row >= n {
            return Err(Error::Parameter("inconsistent shape dimensions".into()));
        }
        let peak = shape.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tilde = shape[driving_row];
        if peak == 0.0 || tilde.norm() < NODE_THRESHOLD * peak {
            return Err(Error::NodeOfMode { mode: i });
        }
        let phi_k = (Complex64::new(0.0, 2.0 * lam.im) * r).sqrt();
        let factor = phi_k / tilde;
        let scaled: Vec<Complex64> = shape.iter().map(|c| c * factor).collect();
        let theta = realification_angle(&scaled);
        let rot = Complex64::from_polar(1.0, -theta);
        let rotated: Vec<Complex64> = scaled.iter().map(|c| c * rot).collect();
        for c in &rotated {
            if c.re.abs() > 1e-12 * peak.max(f64::MIN_POSITIVE) {
                max_ratio = max_ratio.max(c.im.abs() / c.re.abs());
            }
        }
        let mut real: Vec<f64> = rotated.iter().map(|c| c.re).collect();
        let big = real.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            real.iter_mut().for_each(|x| *x = -*x);
        }
        out.set_column(i, &DVector::from_vec(real));
        complex_shapes.push(scaled);
    }
    Ok(ScaledModes { shapes: out, complex_shapes, max_imag_ratio: max_ratio })
}

/// Nonlinear undamped modal model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalModel {
    /// Undamped natural frequencies (rad/s).
    pub omega: Vec<f64>,
    pub damping: Vec<f64>,
    /// Unit-modal-mass shapes at the measured DOFs, one column per mode.
    pub shapes: DMatrix<f64>,
    /// Physical DOFs of the shape rows.
    pub output_dofs: Vec<usize>,
    /// Shape row of the driving point.
    pub forcing_row: usize,
    /// Nonlinear terms with coefficients; term DOFs index shape rows.
    pub basis: NonlinearBasis,
    #[serde(skip)]
    compiled: Option<CompiledForce>,
}

impl ModalModel {
    pub fn new(
        omega: Vec<f64>,
        damping: Vec<f64>,
        shapes: DMatrix<f64>,
        output_dofs: Vec<usize>,
        forcing_row: usize,
        basis: NonlinearBasis,
    ) -> Result<Self> {
        if omega.len() != shapes.ncols() || damping.len() != omega.len() {
            return Err(Error::Parameter("frequency, damping and shape counts differ".into()));
        }
        if output_dofs.len() != shapes.nrows() || forcing_row >= shapes.nrows() {
            return Err(Error::Parameter("shape rows do not match the output DOFs".into()));
        }
        if basis.terms.iter().any(|t| t.dof >= shapes.nrows()) {
            return Err(Error::Config("nonlinear term row outside the shape matrix".into()));
        }
        let compiled = Some(basis.compile());
        Ok(Self { omega, damping, shapes, output_dofs, forcing_row, basis, compiled })
    }

    pub fn n_modes(&self) -> usize {
        self.omega.len()
    }

    fn laws(&self) -> std::borrow::Cow<'_, CompiledForce> {
        match &self.compiled {
            Some(c) => std::borrow::Cow::Borrowed(c),
            None => std::borrow::Cow::Owned(self.basis.compile()),
        }
    }

    /// Rebuild the compiled force cache (after deserialization).
    pub fn refresh(&mut self) {
        self.compiled = Some(self.basis.compile());
    }

    /// Shape row of a physical DOF.
    pub fn row_of(&self, dof: usize) -> Option<usize> {
        self.output_dofs.iter().position(|&d| d == dof)
    }

    /// Physical displacements `Phi q` at the measured DOFs.
    pub fn physical(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.shapes * q
    }

    /// Total modal force `diag(w0^2) q + Phi_S^T f(Phi_S q)` and its Jacobian.
    pub fn restoring_force(&self, q: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.n_modes();
        let mut f = DVector::from_fn(m, |i, _| self.omega[i] * self.omega[i] * q[i]);
        let mut j = DMatrix::from_fn(m, m, |r, c| if r == c { self.omega[r] * self.omega[r] } else { 0.0 });
        for law in &self.laws().laws {
            let row = self.shapes.row(law.dof);
            let x = row.dot(&q.transpose());
            let (g, dg) = law.eval(x);
            for a in 0..m {
                f[a] += row[a] * g;
                for b in 0..m {
                    j[(a, b)] += row[a] * dg * row[b];
                }
            }
        }
        (f, j)
    }

    /// Potential `sum_i w_i^2 q_i^2 / 2 + V_nl(Phi q)`.
    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        let lin: f64 = (0..self.n_modes()).map(|i| 0.5 * self.omega[i] * self.omega[i] * q[i] * q[i]).sum();
        let nl: f64 =
            self.laws().laws.iter().map(|law| law.potential(self.shapes.row(law.dof).dot(&q.transpose()))).sum();
        lin + nl
    }

    /// Conserved energy of the undamped model.
    pub fn energy(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        0.5 * v.norm_squared() + self.potential(q)
    }

    /// Linear frequencies of the assembled model, `sqrt` of the eigenvalues of
    /// its linearization at rest.
    pub fn linearized_frequencies(&self) -> Vec<f64> {
        let (_, j) = self.restoring_force(&DVector::zeros(self.n_modes()));
        let mut w: Vec<f64> = j.symmetric_eigen().eigenvalues.iter().map(|&x| x.max(0.0).sqrt()).collect();
        w.sort_by(f64::total_cmp);
        w
    }

    /// Model from identified quantities.
    ///
    /// The in-band modes of `model` are scaled with driving-point residues
    /// fitted to the identified linear FRF, and the nonlinear terms of
    /// `basis` are attached with the scalar `coefficients`.
    pub fn from_identified(
        model: &StateSpaceModel,
        basis: &NonlinearBasis,
        coefficients: &[f64],
    ) -> Result<(Self, ResidueFit, ScaledModes)> {
        let k_row = model
            .output_dofs
            .iter()
            .position(|&d| d == model.layout.force.dof)
            .ok_or_else(|| Error::Config("the driving point is not measured".into()))?;
        let params = extract_modal_parameters(model)?;
        let (lo, hi) = model.band;
        let modes: Vec<_> = params
            .modes
            .into_iter()
            .filter(|m| m.damping > 0.0 && m.frequency_hz() >= lo && m.frequency_hz() <= hi)
            .collect();
        if modes.is_empty() {
            return Err(Error::Numerical("no physical mode inside the band".into()));
        }
        let nl = 400;
        let freqs: Vec<f64> = (0..nl).map(|i| lo + (hi - lo) * i as f64 / (nl - 1) as f64).collect();
        let mut frf = Vec::with_capacity(nl);
        for &f in &freqs {
            frf.push(model.transfer_matrix(2.0 * PI * f)?[(k_row, 0)]);
        }
        let poles: Vec<Complex64> = modes.iter().map(|m| m.eigenvalue).collect();
        let fit = fit_driving_point_residues(&frf, &freqs, &poles)?;
        let shapes: Vec<Vec<Complex64>> = modes.iter().map(|m| m.shape.clone()).collect();
        let scaled = scale_modes(&shapes, &fit.residues, &poles, k_row)?;
        let rows = rows_basis(basis, &model.output_dofs)?.with_coefficients(coefficients)?;
        let mm = Self::new(
            modes.iter().map(|m| m.omega).collect(),
            modes.iter().map(|m| m.damping).collect(),
            scaled.shapes.clone(),
            model.output_dofs.clone(),
            k_row,
            rows,
        )?;
        Ok((mm, fit, scaled))
    }

    /// Reference model from a finite-element model: its first `n_modes`
    /// mass-normalized modes restricted to the measured DOFs and the true
    /// nonlinear terms.
    pub fn from_fe(fe: &FeModel, basis: &NonlinearBasis, n_modes: usize) -> Result<Self> {
        let (w2, phi) = fe.eigen()?;
        if n_modes == 0 || n_modes > w2.len() {
            return Err(Error::Parameter(format!("cannot keep {n_modes} of {} modes", w2.len())));
        }
        let dofs = fe.measured_dofs();
        let damping = crate::model::modal_damping_ratios(fe)
            .map(|v| v.into_iter().take(n_modes).map(|(_, z)| z).collect())
            .unwrap_or_else(|_| vec![0.0; n_modes]);
        let shapes = DMatrix::from_fn(dofs.len(), n_modes, |r, c| phi[(dofs[r], c)]);
        let forcing_row = dofs
            .iter()
            .position(|&d| d == fe.forcing_dof)
            .ok_or_else(|| Error::Config("the forcing DOF is not measured".into()))?;
        Self::new(
            (0..n_modes).map(|i| w2[i].max(0.0).sqrt()).collect(),
            damping,
            shapes,
            dofs.clone(),
            forcing_row,
            rows_basis(basis, &dofs)?,
        )
    }

    /// Exact modal form of an undamped system `M q'' + K q + f(q) = 0`
    /// with every DOF observed.
    pub fn from_matrices(
        m: &DMatrix<f64>,
        k: &DMatrix<f64>,
        basis: &NonlinearBasis,
        forcing_dof: usize,
    ) -> Result<Self> {
        let (w2, phi) = generalized_symmetric_eigen(k, m)?;
        let n = m.nrows();
        let mut shapes = phi;
        for c in 0..n {
            let col = shapes.column(c);
            let big = col.iter().cloned().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if big < 0.0 {
                shapes.column_mut(c).neg_mut();
            }
        }
        Self::new(
            w2.iter().map(|&x| x.max(0.0).sqrt()).collect(),
            vec![0.0; n],
            shapes,
            (0..n).collect(),
            forcing_dof,
            basis.clone(),
        )
    }
}

/// Copy of `basis` with term DOFs replaced by the rows measuring them.
fn rows_basis(basis: &NonlinearBasis, output_dofs: &[usize]) -> Result<NonlinearBasis> {
    let mut out = basis.clone();
    for t in out.terms.iter_mut() {
        t.dof = output_dofs
            .iter()
            .position(|&d| d == t.dof)
            .ok_or_else(|| Error::Config(format!("nonlinear DOF {} is not measured", t.dof)))?;
    }
    Ok(out)
}
