//! Frequency-domain nonlinear subspace identification.
//!
//! Nonlinear restoring forces are moved to the input side: the model
//! `M q'' + C q' + K q + sum_a c_a h_a(q) = p` is treated as a linear system
//! driven by the extended input `e = [p, h_1(q), ..., h_s(q)]`. A linear
//! state-space realization of that system is estimated from averaged spectra,
//! and the coefficients `c_a` are read from the ratio of the basis-term
//! columns to the force column of its transfer matrix.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, eigenvector, qr_r, solve_normal_equations, CMatrix, CVector};
use crate::model::{NonlinearBasis, TermKind};
use crate::simulate::TimeSeriesRecord;

/// One column group of the extended input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTerm {
    pub label: String,
    /// DOF the term acts on (the forcing DOF for the force column).
    pub dof: usize,
}

/// Meaning of the extended-input columns: column 0 is the force, columns
/// `1..` are the basis terms `+h_a(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub force: InputTerm,
    pub terms: Vec<InputTerm>,
}

impl InputLayout {
    pub fn width(&self) -> usize {
        1 + self.terms.len()
    }
}

/// Human-readable label of a basis term.
pub fn term_label(basis: &NonlinearBasis, a: usize) -> String {
    let t = &basis.terms[a];
    match t.kind {
        TermKind::Polynomial { degree } => format!("q{}^{}", t.dof, degree),
        TermKind::Spline { space, index } => format!("spline{}_{}@q{}", space, index, t.dof),
    }
}

/// Averaged one-period spectra on the in-band DFT lines.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub fs: f64,
    pub samples_per_period: usize,
    /// DFT bin indices of the retained lines.
    pub lines: Vec<usize>,
    /// Line frequencies (Hz).
    pub frequencies: Vec<f64>,
    /// Output spectra, `n_meas x lines`, normalized by `1/N`.
    pub outputs: CMatrix,
    /// Extended input spectra, `(1 + terms) x lines`.
    pub inputs: CMatrix,
    /// DOFs of the output rows.
    pub output_dofs: Vec<usize>,
    pub layout: InputLayout,
    /// Covariance of the averaged output spectrum at each line.
    pub noise_cov: Option<Vec<CMatrix>>,
    pub band: (f64, f64),
}

impl SpectralData {
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.nrows()
    }

    /// Output row measuring `dof`.
    pub fn output_row(&self, dof: usize) -> Option<usize> {
        self.output_dofs.iter().position(|&d| d == dof)
    }
}

/// Average the retained periods, transform at one-period resolution and keep
/// the lines inside `band` (Hz). Basis functions are evaluated sample by
/// sample on the measured displacements before averaging.
pub fn build_spectra(
    record: &TimeSeriesRecord,
    basis: &NonlinearBasis,
    discard_periods: usize,
    band: (f64, f64),
    covariance: bool,
) -> Result<SpectralData> {
    record.validate()?;
    if record.periods <= discard_periods {
        return Err(Error::Data(format!("{} periods recorded but {} discarded", record.periods, discard_periods)));
    }
    let kept = record.periods - discard_periods;
    if covariance && kept < 2 {
        return Err(Error::Data("noise covariance needs at least 2 retained periods".into()));
    }
    let n = record.samples_per_period;
    let lines: Vec<usize> = (1..n.div_ceil(2))
        .filter(|&k| {
            let f = k as f64 * record.fs / n as f64;
            f >= band.0 && f <= band.1 && 2 * k != n
        })
        .collect();
    if lines.is_empty() {
        return Err(Error::Data("no DFT line inside the band".into()));
    }
    let mut term_channels = Vec::with_capacity(basis.len());
    for t in &basis.terms {
        let c = record
            .channel_index(t.dof)
            .ok_or_else(|| Error::Data(format!("no measured channel for nonlinear DOF {}", t.dof)))?;
        term_channels.push(c);
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let start = discard_periods * n;
    let scale = 1.0 / (n as f64 * kept as f64);
    let mean_spectrum = |x: &dyn Fn(usize) -> f64| -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for p in 0..kept {
            for (i, b) in buf.iter_mut().enumerate() {
                b.re += x(start + p * n + i);
            }
        }
        fft.process(&mut buf);
        lines.iter().map(|&k| buf[k] * scale).collect()
    };
    let ny = record.channels.len();
    let nl = lines.len();
    let mut outputs = CMatrix::zeros(ny, nl);
    for (r, c) in record.channels.iter().enumerate() {
        let s = mean_spectrum(&|i| c.data[i]);
        for (l, v) in s.into_iter().enumerate() {
            outputs[(r, l)] = v;
        }
    }
    let mut inputs = CMatrix::zeros(1 + basis.len(), nl);
    let s = mean_spectrum(&|i| record.input[i]);
    for (l, v) in s.into_iter().enumerate() {
        inputs[(0, l)] = v;
    }
    for a in 0..basis.len() {
        let data = &record.channels[term_channels[a]].data;
        let s = mean_spectrum(&|i| basis.term_value(a, data[i]).0);
        for (l, v) in s.into_iter().enumerate() {
            inputs[(1 + a, l)] = v;
        }
    }
    let noise_cov = if covariance {
        let mut per_period = vec![CMatrix::zeros(ny, nl); kept];
        for (r, c) in record.channels.iter().enumerate() {
            for (p, pp) in per_period.iter_mut().enumerate() {
                let off = start + p * n;
                let mut buf: Vec<Complex64> = c.data[off..off + n].iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft.process(&mut buf);
                for (l, &k) in lines.iter().enumerate() {
                    pp[(r, l)] = buf[k] / n as f64;
                }
            }
        }
        let denom = (kept * (kept - 1)) as f64;
        let cov = (0..nl)
            .map(|l| {
                let mut m = CMatrix::zeros(ny, ny);
                for pp in &per_period {
                    let d = CVector::from_fn(ny, |r, _| pp[(r, l)] - outputs[(r, l)]);
                    m += &d * d.adjoint();
                }
                m / Complex64::new(denom, 0.0)
            })
            .collect();
        Some(cov)
    } else {
        None
    };
    let layout = InputLayout {
        force: InputTerm { label: "force".into(), dof: record.forcing_dof },
        terms: (0..basis.len()).map(|a| InputTerm { label: term_label(basis, a), dof: basis.terms[a].dof }).collect(),
    };
    Ok(SpectralData {
        fs: record.fs,
        samples_per_period: n,
        frequencies: lines.iter().map(|&k| k as f64 * record.fs / n as f64).collect(),
        lines,
        outputs,
        inputs,
        output_dofs: record.channels.iter().map(|c| c.dof).collect(),
        layout,
        noise_cov,
        band,
    })
}

/// Continuous-time realization `x' = A x + B e`, `y = C x + D e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub layout: InputLayout,
    pub output_dofs: Vec<usize>,
    pub fs: f64,
    pub band: (f64, f64),
}

impl StateSpaceModel {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C (j w I - A)^-1 B + D` at `omega` (rad/s).
    pub fn transfer_matrix(&self, omega: f64) -> Result<CMatrix> {
        let k = observability_resolvent(&self.a, &self.c, omega)?;
        let b = self.b.map(|x| Complex64::new(x, 0.0));
        Ok(k * b + self.d.map(|x| Complex64::new(x, 0.0)))
    }

    /// Realization `(T A T^-1, T B, C T^-1, D)`.
    pub fn similarity(&self, t: &DMatrix<f64>) -> Result<Self> {
        let ti = t.clone().try_inverse().ok_or_else(|| Error::Parameter("similarity transform is singular".into()))?;
        Ok(Self { a: t * &self.a * &ti, b: t * &self.b, c: &self.c * &ti, ..self.clone() })
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        eigenvalues(&self.a)
    }
}

/// `C (j w I - A)^-1`, computed through the transposed system.
fn observability_resolvent(a: &DMatrix<f64>, c: &DMatrix<f64>, omega: f64) -> Result<CMatrix> {
    let n = a.nrows();
    let mut m: CMatrix = a.transpose().map(|x| Complex64::new(-x, 0.0));
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.0, omega);
    }
    let ct = c.transpose().map(|x| Complex64::new(x, 0.0));
    let x = m.lu().solve(&ct).ok_or_else(|| Error::Numerical(format!("singular resolvent at omega = {omega:e}")))?;
    Ok(x.transpose())
}

/// Subspace settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceOptions {
    pub block_rows: usize,
    /// Weight the subspace step by the block-row noise covariance when the
    /// spectra carry one.
    pub weighting: bool,
    /// Weight the B/D fit by the per-line inverse noise covariance.
    pub weighted_fit: bool,
}

impl SubspaceOptions {
    pub fn new(block_rows: usize) -> Self {
        Self { block_rows, weighting: true, weighted_fit: false }
    }
}

/// Default number of block rows for a given maximal order.
pub fn default_block_rows(max_order: usize, n_meas: usize) -> usize {
    (2 * max_order).div_ceil(n_meas.max(1)) + 2
}

/// Dominant left singular subspace of the projected block data matrix,
/// shared by every order of a stabilization sweep.
#[derive(Debug, Clone)]
pub struct Projection {
    /// Left singular vectors, `block_rows * n_meas` rows.
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub block_rows: usize,
    pub n_meas: usize,
    pub sample_period: f64,
}

/// Relative singular-value threshold below which an order is rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Bilinear image of the line frequencies: `z = (1 + j w T/2) / (1 - j w T/2)`.
fn bilinear_points(spectra: &SpectralData) -> Vec<Complex64> {
    let t = 1.0 / spectra.fs;
    spectra
        .frequencies
        .iter()
        .map(|&f| {
            let s = Complex64::new(0.0, 2.0 * PI * f * t / 2.0);
            (1.0 + s) / (1.0 - s)
        })
        .collect()
}

/// RMS of each extended-input row, used to equilibrate the inputs.
fn input_scales(spectra: &SpectralData) -> Vec<f64> {
    (0..spectra.inputs.nrows())
        .map(|r| {
            let s = spectra.inputs.row(r).iter().map(|c| c.norm_sqr()).sum::<f64>() / spectra.n_lines() as f64;
            if s > 0.0 {
                s.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Build the projection: QR of the real-stacked block-frequency data matrix
/// `[W_r U; W_r Y]`, then SVD of the output block orthogonal to the input
/// row space.
pub fn project(spectra: &SpectralData, block_rows: usize, weighting: bool) -> Result<Projection> {
    let r = block_rows;
    let ny = spectra.n_outputs();
    let nu = spectra.inputs.nrows();
    let nl = spectra.n_lines();
    if r == 0 {
        return Err(Error::Parameter("block_rows must be positive".into()));
    }
    let cols = r * (nu + ny);
    if 2 * nl < cols {
        return Err(Error::Data(format!(
            "{} lines are too few for {} block rows with {} inputs and {} outputs",
            nl, r, nu, ny
        )));
    }
    let z = bilinear_points(spectra);
    let scales = input_scales(spectra);
    let mut data = DMatrix::<f64>::zeros(2 * nl, cols);
    for (l, &zl) in z.iter().enumerate() {
        let mut zp = Complex64::new(1.0, 0.0);
        for i in 0..r {
            for u in 0..nu {
                let v = spectra.inputs[(u, l)] / scales[u] * zp;
                data[(l, i * nu + u)] = v.re;
                data[(nl + l, i * nu + u)] = v.im;
            }
            for y in 0..ny {
                let v = spectra.outputs[(y, l)] * zp;
                data[(l, r * nu + i * ny + y)] = v.re;
                data[(nl + l, r * nu + i * ny + y)] = v.im;
            }
            zp *= zl;
        }
    }
    let rmat = qr_r(data);
    let mut l22 = rmat.view((r * nu, r * nu), (r * ny, r * ny)).transpose();
    let weight = if weighting { block_noise_weight(spectra, &z, r) } else { None };
    if let Some((_, inv_sqrt)) = &weight {
        l22 = inv_sqrt * l22;
    }
    let svd = l22.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let mut basis = DMatrix::from_fn(u.nrows(), idx.len(), |i, j| u[(i, idx[j])]);
    if let Some((sqrt, _)) = &weight {
        basis = sqrt * basis;
    }
    let singular_values = idx.iter().map(|&i| svd.singular_values[i]).collect();
    Ok(Projection { basis, singular_values, block_rows: r, n_meas: ny, sample_period: 1.0 / spectra.fs })
}

/// Covariance of the block-row output noise,
/// `W = (1/F) sum_l Re(zeta_l zeta_l^H (x) C_l)` with `zeta_l = [1, z_l, ..., z_l^(r-1)]`,
/// returned as `(W^(1/2), W^(-1/2))`. `None` when no usable covariance exists.
///
/// Block `(i, j)` depends on `i - j` only: it is `Re T_(i-j)` for `i >= j`
/// and `Re T_(j-i)^T` otherwise, with `T_d = (1/F) sum_l z_l^d C_l`.
fn block_noise_weight(spectra: &SpectralData, z: &[Complex64], r: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let cov = spectra.noise_cov.as_ref()?;
    let ny = spectra.n_outputs();
    let nl = spectra.n_lines();
    let level = cov.iter().map(|c| c.trace().re).sum::<f64>() / (nl * ny) as f64;
    let signal = spectra.outputs.iter().map(|c| c.norm_sqr()).sum::<f64>() / spectra.outputs.len() as f64;
    if !(level > 1e-20 * signal) {
        return None;
    }
    let mut t = vec![CMatrix::zeros(ny, ny); r];
    for (l, &zl) in z.iter().enumerate() {
        let mut zp = Complex64::new(1.0, 0.0);
        for td in t.iter_mut() {
            td.zip_apply(&cov[l], |a, c| *a += zp * c);
            zp *= zl;
        }
    }
    let mut w = DMatrix::<f64>::zeros(r * ny, r * ny);
    for i in 0..r {
        for j in 0..r {
            for a in 0..ny {
                for b in 0..ny {
                    w[(i * ny + a, j * ny + b)] =
                        if i >= j { t[i - j][(a, b)].re } else { t[j - i][(b, a)].re } / nl as f64;
                }
            }
        }
    }
    let w = (&w + w.transpose()) * 0.5;
    let eig = w.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-12 * top;
    let clipped = eig.eigenvalues.iter().filter(|&&e| e < floor).count();
    if clipped > 0 {
        warn!("noise weighting: {clipped} eigenvalues of the block covariance floored");
    }
    let v = &eig.eigenvectors;
    let sq = DVector::from_iterator(r * ny, eig.eigenvalues.iter().map(|&e| e.max(floor).sqrt()));
    let sqrt = v * DMatrix::from_diagonal(&sq) * v.transpose();
    let inv_sqrt = v * DMatrix::from_diagonal(&sq.map(|x| 1.0 / x)) * v.transpose();
    Some((sqrt, inv_sqrt))
}

impl Projection {
    /// Continuous-time `A` and `C` of the given order from the shift
    /// invariance of the observability range.
    pub fn system_matrices(&self, order: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let ny = self.n_meas;
        let rows = self.basis.nrows();
        if order == 0 || order > rows - ny {
            return Err(Error::OrderTooHigh { requested: order, ratio: 0.0 });
        }
        let s0 = self.singular_values[0].max(f64::MIN_POSITIVE);
        let ratio = self.singular_values[order - 1] / s0;
        if ratio < RANK_TOLERANCE {
            return Err(Error::OrderTooHigh { requested: order, ratio });
        }
        if let Some(&next) = self.singular_values.get(order) {
            let gap = self.singular_values[order - 1] / next.max(f64::MIN_POSITIVE);
            if ratio < 1e-8 {
                warn!("order {order}: weak singular value (ratio {ratio:.3e}, gap {gap:.3e})");
            }
        }
        let o = self.basis.columns(0, order);
        let c = o.rows(0, ny).into_owned();
        let upper = o.rows(0, rows - ny).into_owned();
        let lower = o.rows(ny, rows - ny).into_owned();
        let svd = upper.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= smax * 1e-13 {
            return Err(Error::Numerical(format!(
                "shift-invariance system is singular (condition {:.3e})",
                smax / smin
            )));
        }
        if smax / smin > 1e8 {
            warn!("ill-conditioned shift-invariance system (condition {:.3e})", smax / smin);
        }
        let ad = svd.solve(&lower, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
        let eye = DMatrix::<f64>::identity(order, order);
        let lhs = &eye + &ad;
        let ac = lhs
            .lu()
            .solve(&(&ad - &eye))
            .ok_or_else(|| Error::Numerical("discrete-time A has an eigenvalue at -1".into()))?
            * (2.0 / self.sample_period);
        Ok((ac, c))
    }
}

/// Least-squares `B` and `D` for fixed `A`, `C`, minimizing
/// `sum_l |W_l^(1/2) (Y_l - (C (j w_l - A)^-1 B + D) E_l)|^2`.
pub fn fit_input_matrices(
    spectra: &SpectralData,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    weighting: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let ny = spectra.n_outputs();
    let nu = spectra.inputs.nrows();
    let nk = n + ny;
    let dim = nk * nu;
    let scales = input_scales(spectra);
    let weights = if weighting { line_weights(spectra) } else { None };
    let mut normal = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut g = CMatrix::zeros(ny, nk);
    for i in 0..ny {
        g[(i, n + i)] = Complex64::new(1.0, 0.0);
    }
    for l in 0..spectra.n_lines() {
        let w = 2.0 * PI * spectra.frequencies[l];
        let k = observability_resolvent(a, c, w)?;
        g.view_mut((0, 0), (ny, n)).copy_from(&k);
        let wg = match &weights {
            Some(ws) => &ws[l] * &g,
            None => g.clone(),
        };
        let ghg = g.adjoint() * &wg;
        let u = CVector::from_fn(nu, |i, _| spectra.inputs[(i, l)] / scales[i]);
        let y = spectra.outputs.column(l);
        // G^H W Y U^H
        let gy = wg.adjoint() * y;
        for q in 0..nu {
            for p in 0..nu {
                let uu = u[p].conj() * u[q];
                for j in 0..nk {
                    for i in 0..nk {
                        normal[(p * nk + i, q * nk + j)] += (uu * ghg[(i, j)]).re;
                    }
                }
            }
            let uq = u[q].conj();
            for i in 0..nk {
                rhs[q * nk + i] += (gy[i] * uq).re;
            }
        }
    }
    let theta = solve_normal_equations(&normal, &rhs)?;
    let mut b = DMatrix::zeros(n, nu);
    let mut d = DMatrix::zeros(ny, nu);
    for q in 0..nu {
        for i in 0..n {
            b[(i, q)] = theta[q * nk + i] / scales[q];
        }
        for i in 0..ny {
            d[(i, q)] = theta[q * nk + n + i] / scales[q];
        }
    }
    Ok((b, d))
}

/// Regularized inverse noise covariances, or `None` when the data carry no
/// usable noise estimate.
fn line_weights(spectra: &SpectralData) -> Option<Vec<CMatrix>> {
    let cov = spectra.noise_cov.as_ref()?;
    let ny = spectra.n_outputs();
    let level = cov.iter().map(|c| c.trace().re / ny as f64).fold(0.0, f64::max);
    let signal = spectra.outputs.iter().map(|c| c.norm_sqr()).sum::<f64>() / spectra.outputs.len() as f64;
    if !(level > 1e-20 * signal) {
        return None;
    }
    let mut out = Vec::with_capacity(cov.len());
    for c in cov {
        let mut m = c.clone();
        let floor = 1e-3 * c.trace().re / ny as f64 + 1e-12 * level;
        for i in 0..ny {
            m[(i, i)] += floor;
        }
        out.push(m.try_inverse()?);
    }
    let mean = out.iter().map(|w| w.trace().re).sum::<f64>() / (out.len() * ny) as f64;
    Some(out.into_iter().map(|w| w / Complex64::new(mean, 0.0)).collect())
}

/// Identify a model of the given even order.
pub fn subspace_identify(spectra: &SpectralData, order: usize, options: SubspaceOptions) -> Result<StateSpaceModel> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::Parameter(format!("model order must be even and positive, got {order}")));
    }
    if order > options.block_rows * spectra.n_outputs() {
        return Err(Error::OrderTooHigh { requested: order, ratio: 0.0 });
    }
    let proj = project(spectra, options.block_rows, options.weighting)?;
    identify_from_projection(spectra, &proj, order, options.weighted_fit)
}

/// Identify a model of the given order from a precomputed projection.
pub fn identify_from_projection(
    spectra: &SpectralData,
    proj: &Projection,
    order: usize,
    weighted_fit: bool,
) -> Result<StateSpaceModel> {
    let (a, c) = proj.system_matrices(order)?;
    let (b, d) = fit_input_matrices(spectra, &a, &c, weighted_fit)?;
    Ok(StateSpaceModel {
        a,
        b,
        c,
        d,
        layout: spectra.layout.clone(),
        output_dofs: spectra.output_dofs.clone(),
        fs: spectra.fs,
        band: spectra.band,
    })
}

/// One underdamped mode of a realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalEstimate {
    /// Eigenvalue with positive imaginary part.
    pub eigenvalue: Complex64,
    /// Natural frequency `|lambda|` (rad/s).
    pub omega: f64,
    pub damping: f64,
    /// Complex output shape `C psi`.
    pub shape: Vec<Complex64>,
    /// State-space eigenvector.
    pub state_vector: Vec<Complex64>,
}

impl ModalEstimate {
    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }
}

/// Underdamped modes sorted by frequency plus the real eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalParameters {
    pub modes: Vec<ModalEstimate>,
    pub real_eigenvalues: Vec<f64>,
}

/// Natural frequencies, damping ratios and output shapes of `A`, `C`.
pub fn modal_parameters_of(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<ModalParameters> {
    let lams = eigenvalues(a);
    let scale = lams.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut modes = Vec::new();
    let mut real = Vec::new();
    for &lam in &lams {
        if lam.im.abs() <= 1e-12 * scale {
            real.push(lam.re);
        } else if lam.im > 0.0 {
            let v = eigenvector(a, lam)?;
            let shape = c.map(|x| Complex64::new(x, 0.0)) * &v;
            let omega = lam.norm();
            modes.push(ModalEstimate {
                eigenvalue: lam,
                omega,
                damping: -lam.re / omega,
                shape: shape.iter().copied().collect(),
                state_vector: v.iter().copied().collect(),
            });
        }
    }
    modes.sort_by(|x, y| x.omega.partial_cmp(&y.omega).unwrap());
    real.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ModalParameters { modes, real_eigenvalues: real })
}

/// Modal parameters of an identified model.
pub fn extract_modal_parameters(model: &StateSpaceModel) -> Result<ModalParameters> {
    modal_parameters_of(&model.a, &model.c)
}

/// Modal assurance criterion `|a^H b|^2 / (|a|^2 |b|^2)`.
pub fn mac(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UndefinedInput(format!("MAC of vectors of length {} and {}", a.len(), b.len())));
    }
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedInput("MAC of a zero vector".into()));
    }
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    Ok((dot.norm_sqr() / (na * nb)).min(1.0))
}

/// MAC of real vectors.
pub fn mac_real(a: &[f64], b: &[f64]) -> Result<f64> {
    let ca: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let cb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    mac(&ca, &cb)
}

/// Stabilization thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizationThresholds {
    /// Relative frequency change.
    pub frequency: f64,
    /// Relative damping change.
    pub damping: f64,
    /// Minimal MAC.
    pub mac: f64,
}

impl Default for StabilizationThresholds {
    fn default() -> Self {
        Self { frequency: 0.01, damping: 0.05, mac: 0.98 }
    }
}

/// Stability class of a candidate pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stability {
    New,
    Frequency,
    Damping,
    Full,
}

/// One candidate pole of the diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub frequency_hz: f64,
    pub damping: f64,
    pub shape: Vec<Complex64>,
    pub stability: Stability,
}

/// Physical candidates at one order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramOrder {
    pub order: usize,
    pub candidates: Vec<Candidate>,
}

impl DiagramOrder {
    pub fn full_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.stability == Stability::Full).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationDiagram {
    pub orders: Vec<DiagramOrder>,
    pub thresholds: StabilizationThresholds,
    pub band: (f64, f64),
}

fn classify(c: &ModalEstimate, previous: &[Candidate], th: &StabilizationThresholds) -> Stability {
    let f = c.frequency_hz();
    let nearest =
        previous.iter().min_by(|x, y| (x.frequency_hz - f).abs().partial_cmp(&(y.frequency_hz - f).abs()).unwrap());
    let Some(p) = nearest else { return Stability::New };
    if (p.frequency_hz - f).abs() > th.frequency * f {
        return Stability::New;
    }
    if (p.damping - c.damping).abs() > th.damping * c.damping.abs() {
        return Stability::Frequency;
    }
    match mac(&p.shape, &c.shape) {
        Ok(m) if m >= th.mac => Stability::Full,
        _ => Stability::Damping,
    }
}

/// Stabilization diagram for orders `2, 4, ..., max_order`, all drawn from
/// one projection.
pub fn stabilization(
    spectra: &SpectralData,
    max_order: usize,
    options: SubspaceOptions,
    thresholds: StabilizationThresholds,
) -> Result<StabilizationDiagram> {
    if max_order < 4 {
        return Err(Error::Parameter("stabilization needs max_order >= 4".into()));
    }
    let proj = project(spectra, options.block_rows, options.weighting)?;
    let band = spectra.band;
    let mut orders: Vec<DiagramOrder> = Vec::new();
    let mut order = 2;
    while order <= max_order {
        let candidates = match proj.system_matrices(order) {
            Ok((a, c)) => {
                let prev = orders.last().map(|o| o.candidates.as_slice()).unwrap_or(&[]);
                modal_parameters_of(&a, &c)?
                    .modes
                    .into_iter()
                    .filter(|m| m.damping > 0.0 && m.frequency_hz() >= band.0 && m.frequency_hz() <= band.1)
                    .map(|m| Candidate {
                        frequency_hz: m.frequency_hz(),
                        damping: m.damping,
                        stability: classify(&m, prev, &thresholds),
                        shape: m.shape,
                    })
                    .collect()
            }
            Err(Error::OrderTooHigh { .. }) => {
                warn!("stabilization stops at order {order}: rank exhausted");
                break;
            }
            Err(e) => return Err(e),
        };
        orders.push(DiagramOrder { order, candidates });
        order += 2;
    }
    Ok(StabilizationDiagram { orders, thresholds, band })
}

/// Pick a single model order from a diagram.
///
/// `m*` is the most frequent number of fully stable poles over the diagram
/// (ties go to the larger count). Starting from `2 m*`, the first order whose
/// physical poles are all fully stable at the next order is returned.
pub fn select_order(diagram: &StabilizationDiagram) -> Option<usize> {
    let counts: Vec<usize> = diagram.orders.iter().map(|o| o.full_count()).collect();
    let max = *counts.iter().max()?;
    if max == 0 {
        return None;
    }
    let m_star = (1..=max).max_by_key(|&m| (counts.iter().filter(|&&c| c == m).count(), m)).unwrap();
    for w in diagram.orders.windows(2) {
        let (cur, next) = (&w[0], &w[1]);
        if cur.order < 2 * m_star || cur.candidates.len() != m_star {
            continue;
        }
        let all_stable = cur.candidates.iter().all(|c| {
            next.candidates.iter().any(|n| {
                n.stability == Stability::Full
                    && (n.frequency_hz - c.frequency_hz).abs() <= diagram.thresholds.frequency * c.frequency_hz
            })
        });
        if all_stable {
            return Some(cur.order);
        }
    }
    None
}

/// Frequency-dependent estimate of one nonlinear coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub label: String,
    pub dof: usize,
    /// Value per retained line (NaN-free; skipped lines are absent).
    pub values: Vec<Complex64>,
    /// Frequencies (Hz) of `values`.
    pub frequencies: Vec<f64>,
    /// Mean real part over the retained lines.
    pub mean_real: f64,
    /// Mean imaginary part over the retained lines.
    pub mean_imag: f64,
    /// `log10 |mean_real / mean_imag|`.
    pub log_ratio: f64,
}

/// Coefficients plus the underlying linear FRFs from the force.
#[derive(Debug, Clone)]
pub struct NonlinearCoefficients {
    pub terms: Vec<CoefficientEstimate>,
    pub frequencies: Vec<f64>,
    /// Force column of the linear FRF matrix, `n_meas x lines`.
    pub frf: CMatrix,
}

impl NonlinearCoefficients {
    pub fn means(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.mean_real).collect()
    }
}

/// Lines where |G| falls below this fraction of its band maximum are skipped.
pub const FRF_FLOOR: f64 = 1e-6;

/// Extract `c_a(w)` from the transfer matrix of the extended system.
///
/// The basis column of term `a` acting on DOF `j` satisfies
/// `Gs[:, a] = -c_a G[:, j]`, where `G` is the receptance matrix. Only the
/// force column of `G` is observed, so the forcing-DOF row is used with
/// reciprocity, `G[k, j] = G[j, k]`:
/// `c_a = -Gs[k, a] / G[j, k]`. When `j` is the forcing DOF itself every
/// output row gives a ratio and these are averaged with weights `|G|`.
pub fn nonlinear_coefficients(model: &StateSpaceModel, frequencies: &[f64]) -> Result<NonlinearCoefficients> {
    let ny = model.c.nrows();
    let k_row = model
        .output_dofs
        .iter()
        .position(|&d| d == model.layout.force.dof)
        .ok_or_else(|| Error::Data("the forcing DOF is not measured".into()))?;
    let mut term_rows = Vec::new();
    for t in &model.layout.terms {
        let r = model
            .output_dofs
            .iter()
            .position(|&d| d == t.dof)
            .ok_or_else(|| Error::Data(format!("term DOF {} is not measured", t.dof)))?;
        term_rows.push(r);
    }
    let mut frf = CMatrix::zeros(ny, frequencies.len());
    let mut gs_all = Vec::with_capacity(frequencies.len());
    for (l, &f) in frequencies.iter().enumerate() {
        let gs = model.transfer_matrix(2.0 * PI * f)?;
        frf.set_column(l, &gs.column(0));
        gs_all.push(gs);
    }
    let gmax = frf.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut terms = Vec::with_capacity(model.layout.terms.len());
    for (a, t) in model.layout.terms.iter().enumerate() {
        let col = 1 + a;
        let mut values = Vec::new();
        let mut freqs = Vec::new();
        let mut skipped = 0;
        for (l, gs) in gs_all.iter().enumerate() {
            let value = if term_rows[a] == k_row {
                let mut num = Complex64::new(0.0, 0.0);
                let mut den = 0.0;
                for i in 0..ny {
                    let g = gs[(i, 0)];
                    let w = g.norm();
                    if w > FRF_FLOOR * gmax {
                        num += -gs[(i, col)] / g * w;
                        den += w;
                    }
                }
                if den > 0.0 {
                    Some(num / den)
                } else {
                    None
                }
            } else {
                let g = gs[(term_rows[a], 0)];
                if g.norm() > FRF_FLOOR * gmax {
                    Some(-gs[(k_row, col)] / g)
                } else {
                    None
                }
            };
            match value {
                Some(v) => {
                    values.push(v);
                    freqs.push(frequencies[l]);
                }
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!("{}: {} lines skipped near FRF zeros", t.label, skipped);
        }
        if values.is_empty() {
            return Err(Error::Numerical(format!("no usable line for term {}", t.label)));
        }
        let mean_real = values.iter().map(|v| v.re).sum::<f64>() / values.len() as f64;
        let mean_imag = values.iter().map(|v| v.im).sum::<f64>() / values.len() as f64;
        terms.push(CoefficientEstimate {
            label: t.label.clone(),
            dof: t.dof,
            values,
            frequencies: freqs,
            mean_real,
            mean_imag,
            log_ratio: (mean_real / mean_imag).abs().log10(),
        });
    }
    Ok(NonlinearCoefficients { terms, frequencies: frequencies.to_vec(), frf })
}
