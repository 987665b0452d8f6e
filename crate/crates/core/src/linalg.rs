//! Dense linear-algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Generalized symmetric eigenproblem `K x = w² M x`.
///
/// Returns eigenvalues in ascending order and mass-normalized eigenvectors
/// as columns.
pub fn generalized_symmetric_eigen(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if k.nrows() != n || k.ncols() != n || m.ncols() != n {
        return Err(Error::Parameter("eigenproblem matrices must be square and of equal size".into()));
    }
    let chol = nalgebra::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Assembly("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Assembly("singular mass factor".into()))?;
    let mut a = &linv * k * linv.transpose();
    a = (&a + a.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    let back = linv.transpose();
    for (c, &i) in order.iter().enumerate() {
        let v = &back * eig.eigenvectors.column(i);
        vecs.set_column(c, &v);
    }
    Ok((vals, vecs))
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// Right eigenvector of a real matrix for a known eigenvalue, by inverse iteration.
pub fn eigenvector(a: &DMatrix<f64>, lambda: Complex64) -> Result<CVector> {
    let n = a.nrows();
    let scale = lambda.norm().max(a.norm() / (n as f64).sqrt()).max(1e-300);
    let mu = lambda + Complex64::new(1.0, 1.0) * (1e-11 * scale);
    let mut shifted: CMatrix = a.map(|x| Complex64::new(x, 0.0));
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let lu = shifted.lu();
    let mut v = CVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.37 * i as f64, 0.11 * i as f64 - 0.5));
    for _ in 0..4 {
        let w = lu.solve(&v).ok_or_else(|| Error::Numerical("singular shifted matrix in inverse iteration".into()))?;
        let nrm = w.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::Numerical("inverse iteration produced a non-finite vector".into()));
        }
        v = w / Complex64::new(nrm, 0.0);
    }
    Ok(v)
}

/// Minimum-norm least-squares solution of `a x = b` through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * f64::EPSILON * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).map_err(|e| Error::Numerical(e.to_string()))
}

/// Solve a symmetric positive semi-definite system after Jacobi equilibration.
pub fn solve_normal_equations(n: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let dim = n.nrows();
    let d: Vec<f64> = (0..dim)
        .map(|i| {
            let v = n[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(dim, dim, |i, j| n[(i, j)] * d[i] * d[j]);
    let r = DVector::from_fn(dim, |i, _| rhs[i] * d[i]);
    let y = lstsq(&scaled, &DMatrix::from_column_slice(dim, 1, r.as_slice()))?;
    Ok(DVector::from_fn(dim, |i, _| y[(i, 0)] * d[i]))
}

/// Complex version of a real matrix.
pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Resolvent `(j w I - a)^{-1}` applied to `b`.
pub fn resolvent_apply(a: &DMatrix<f64>, omega: f64, b: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let mut m: CMatrix = a.map(|x| Complex64::new(-x, 0.0));
    for i in 0..n {
        m[(i, i)] += Complex64::new(0.0, omega);
    }
    m.lu().solve(b).ok_or_else(|| Error::Numerical(format!("singular resolvent at omega = {omega:e}")))
}

/// Upper-triangular factor of the QR decomposition of a tall matrix.
pub fn qr_r(a: DMatrix<f64>) -> DMatrix<f64> {
    nalgebra::QR::new(a).r()
}
