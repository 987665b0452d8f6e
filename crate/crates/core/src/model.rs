//! Finite-element beam models and grounded nonlinear restoring forces.
//!
//! Beams are discretized with two-node Euler-Bernoulli elements (cubic
//! Hermitian shape functions, transverse translation and rotation per node,
//! consistent mass). Clamped nodes are removed by row/column deletion.
//!
//! Nonlinear restoring forces are linear combinations of basis functions of
//! a single displacement DOF, grounded at that DOF. Two families exist:
//! monomials `q^d` and cubic splines on equispaced knots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::generalized_symmetric_eigen;

/// One uniform beam span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSection {
    /// Span length (m).
    pub length: f64,
    /// Cross-section width (m).
    pub width: f64,
    /// Cross-section thickness in the bending direction (m).
    pub thickness: f64,
    /// Number of elements along the span.
    pub elements: usize,
}

/// Linear elastic material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young's modulus (N/m^2).
    pub youngs_modulus: f64,
    /// Density (kg/m^3).
    pub density: f64,
}

/// Two-span clamped-clamped beam: a main beam joined at its tip to a thin beam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamModelSpec {
    pub main: BeamSection,
    pub thin: BeamSection,
    pub material: Material,
    /// Stiffness-proportional damping coefficient (s).
    pub alpha: f64,
    /// Mass-proportional damping coefficient (1/s).
    pub beta: f64,
    /// Lumped translational mass added at every free main-beam node (kg).
    #[serde(default)]
    pub sensor_mass: f64,
    /// Multiplier on the thin-beam bending stiffness.
    #[serde(default = "one")]
    pub thin_stiffness_factor: f64,
    /// Node receiving the external force (node 0 is the left clamp).
    pub forcing_node: usize,
}

fn one() -> f64 {
    1.0
}

impl BeamModelSpec {
    /// Geometry and material of the benchmark structure without calibration.
    pub fn nominal() -> Self {
        Self {
            main: BeamSection { length: 0.7, width: 0.014, thickness: 0.014, elements: 14 },
            thin: BeamSection { length: 0.04, width: 0.014, thickness: 0.0005, elements: 3 },
            material: Material { youngs_modulus: 2.05e11, density: 7800.0 },
            alpha: 3e-7,
            beta: 5.0,
            sensor_mass: 0.0,
            thin_stiffness_factor: 1.0,
            forcing_node: 4,
        }
    }

    /// Benchmark structure with sensor masses and junction stiffness calibrated
    /// to reproduce the reference linear frequencies 31.28, 143.64 and 397.87 Hz.
    pub fn benchmark() -> Self {
        Self { sensor_mass: 0.0060278, thin_stiffness_factor: 0.92066687, ..Self::nominal() }
    }

    /// Node index of the junction between the two spans.
    pub fn junction_node(&self) -> usize {
        self.main.elements
    }
}

/// Reduced DOF indices of a node; `None` for clamped DOFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDofs {
    pub translation: Option<usize>,
    pub rotation: Option<usize>,
}

/// Damping description used to build `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Damping {
    /// `C = alpha K + beta M`.
    Proportional { alpha: f64, beta: f64 },
    /// Arbitrary user-supplied matrix.
    General,
}

/// Assembled linear structural model `M q'' + C q' + K q + f(q) = p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeModel {
    pub n_p: usize,
    pub m: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub dof_map: Vec<NodeDofs>,
    pub forcing_dof: usize,
    pub clamped_nodes: Vec<usize>,
    pub damping: Damping,
    /// Nodes whose translations are measured.
    pub measured_nodes: Vec<usize>,
    /// Junction node carrying the grounded nonlinear springs, if any.
    pub junction_node: Option<usize>,
}

impl FeModel {
    /// Model from explicit matrices with proportional damping. Every DOF is
    /// treated as a translation of its own node and measured.
    pub fn from_matrices(m: DMatrix<f64>, k: DMatrix<f64>, alpha: f64, beta: f64, forcing_dof: usize) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || k.nrows() != n || k.ncols() != n {
            return Err(Error::Parameter("mass and stiffness must be square and of equal size".into()));
        }
        if forcing_dof >= n {
            return Err(Error::Parameter(format!("forcing DOF {forcing_dof} out of range")));
        }
        check_mass(&m)?;
        let c = &k * alpha + &m * beta;
        Ok(Self {
            n_p: n,
            dof_map: (0..n).map(|i| NodeDofs { translation: Some(i), rotation: None }).collect(),
            m,
            c,
            k,
            forcing_dof,
            clamped_nodes: Vec::new(),
            damping: Damping::Proportional { alpha, beta },
            measured_nodes: (0..n).collect(),
            junction_node: None,
        })
    }

    /// Model with a general damping matrix.
    pub fn with_damping_matrix(mut self, c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != self.n_p || c.ncols() != self.n_p {
            return Err(Error::Parameter("damping matrix has wrong size".into()));
        }
        self.c = c;
        self.damping = Damping::General;
        Ok(self)
    }

    /// Reduced translation DOF of a node.
    pub fn translation_dof(&self, node: usize) -> Result<usize> {
        self.dof_map
            .get(node)
            .and_then(|d| d.translation)
            .ok_or_else(|| Error::Parameter(format!("node {node} has no free translation DOF")))
    }

    /// Translation DOFs of the measured nodes, in node order.
    pub fn measured_dofs(&self) -> Vec<usize> {
        self.measured_nodes.iter().filter_map(|&n| self.dof_map[n].translation).collect()
    }

    /// Undamped eigenvalues (rad^2/s^2, ascending) and mass-normalized modes.
    pub fn eigen(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        generalized_symmetric_eigen(&self.k, &self.m)
    }

    /// Undamped natural frequencies (rad/s), ascending.
    pub fn natural_frequencies(&self) -> Result<Vec<f64>> {
        let (w2, _) = self.eigen()?;
        Ok(w2.iter().map(|&x| x.max(0.0).sqrt()).collect())
    }
}

fn check_mass(m: &DMatrix<f64>) -> Result<()> {
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(Error::Assembly("mass matrix is singular or indefinite".into()));
    }
    Ok(())
}

/// Stiffness and consistent mass of one Euler-Bernoulli element.
pub fn beam_element(length: f64, ei: f64, rho_a: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let l = length;
    let k = DMatrix::from_row_slice(
        4,
        4,
        &[
            12.0,
            6.0 * l,
            -12.0,
            6.0 * l,
            6.0 * l,
            4.0 * l * l,
            -6.0 * l,
            2.0 * l * l,
            -12.0,
            -6.0 * l,
            12.0,
            -6.0 * l,
            6.0 * l,
            2.0 * l * l,
            -6.0 * l,
            4.0 * l * l,
        ],
    ) * (ei / l.powi(3));
    let m = DMatrix::from_row_slice(
        4,
        4,
        &[
            156.0,
            22.0 * l,
            54.0,
            -13.0 * l,
            22.0 * l,
            4.0 * l * l,
            13.0 * l,
            -3.0 * l * l,
            54.0,
            13.0 * l,
            156.0,
            -22.0 * l,
            -13.0 * l,
            -3.0 * l * l,
            -22.0 * l,
            4.0 * l * l,
        ],
    ) * (rho_a * l / 420.0);
    (k, m)
}

/// A chain of beam spans sharing end nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamChain {
    pub spans: Vec<(BeamSection, Material, f64)>,
    pub clamp_left: bool,
    pub clamp_right: bool,
    /// Extra translational mass per node index (kg).
    pub node_masses: Vec<(usize, f64)>,
}

impl BeamChain {
    /// Assemble the chain into reduced matrices and a node-to-DOF map.
    pub fn assemble(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<NodeDofs>, Vec<usize>)> {
        if self.spans.is_empty() {
            return Err(Error::Parameter("beam chain has no spans".into()));
        }
        for (s, mat, factor) in &self.spans {
            if !(s.length > 0.0 && s.width > 0.0 && s.thickness > 0.0) || s.elements == 0 {
                return Err(Error::Parameter("beam spans need positive dimensions and at least one element".into()));
            }
            if !(mat.youngs_modulus > 0.0 && mat.density > 0.0 && *factor > 0.0) {
                return Err(Error::Parameter("material constants must be positive".into()));
            }
        }
        let n_elem: usize = self.spans.iter().map(|s| s.0.elements).sum();
        let n_nodes = n_elem + 1;
        let full = 2 * n_nodes;
        let mut k = DMatrix::zeros(full, full);
        let mut m = DMatrix::zeros(full, full);
        let mut e0 = 0;
        for (s, mat, factor) in &self.spans {
            let area = s.width * s.thickness;
            let inertia = s.width * s.thickness.powi(3) / 12.0;
            let le = s.length / s.elements as f64;
            let (ke, me) = beam_element(le, mat.youngs_modulus * inertia * factor, mat.density * area);
            for e in e0..e0 + s.elements {
                let o = 2 * e;
                for i in 0..4 {
                    for j in 0..4 {
                        k[(o + i, o + j)] += ke[(i, j)];
                        m[(o + i, o + j)] += me[(i, j)];
                    }
                }
            }
            e0 += s.elements;
        }
        for &(node, mass) in &self.node_masses {
            if node >= n_nodes {
                return Err(Error::Parameter(format!("lumped mass at missing node {node}")));
            }
            m[(2 * node, 2 * node)] += mass;
        }
        let mut clamped = Vec::new();
        if self.clamp_left {
            clamped.push(0);
        }
        if self.clamp_right {
            clamped.push(n_nodes - 1);
        }
        let mut dof_map = Vec::with_capacity(n_nodes);
        let mut keep = Vec::new();
        for node in 0..n_nodes {
            if clamped.contains(&node) {
                dof_map.push(NodeDofs { translation: None, rotation: None });
            } else {
                dof_map.push(NodeDofs { translation: Some(keep.len()), rotation: Some(keep.len() + 1) });
                keep.push(2 * node);
                keep.push(2 * node + 1);
            }
        }
        let n = keep.len();
        if n == 0 {
            return Err(Error::Assembly("no free DOFs remain after clamping".into()));
        }
        let kr = DMatrix::from_fn(n, n, |i, j| k[(keep[i], keep[j])]);
        let mr = DMatrix::from_fn(n, n, |i, j| m[(keep[i], keep[j])]);
        check_mass(&mr)?;
        Ok((kr, mr, dof_map, clamped))
    }
}

/// Assemble the clamped-clamped two-span benchmark beam.
pub fn assemble_beam_model(spec: &BeamModelSpec) -> Result<FeModel> {
    let chain = BeamChain {
        spans: vec![(spec.main, spec.material, 1.0), (spec.thin, spec.material, spec.thin_stiffness_factor)],
        clamp_left: true,
        clamp_right: true,
        node_masses: (1..=spec.main.elements).map(|n| (n, spec.sensor_mass)).collect(),
    };
    let (k, m, dof_map, clamped) = chain.assemble()?;
    let c = &k * spec.alpha + &m * spec.beta;
    let forcing_dof = dof_map
        .get(spec.forcing_node)
        .and_then(|d| d.translation)
        .ok_or_else(|| Error::Parameter(format!("forcing node {} is clamped or missing", spec.forcing_node)))?;
    Ok(FeModel {
        n_p: k.nrows(),
        m,
        c,
        k,
        dof_map,
        forcing_dof,
        clamped_nodes: clamped,
        damping: Damping::Proportional { alpha: spec.alpha, beta: spec.beta },
        measured_nodes: (1..=spec.main.elements).collect(),
        junction_node: Some(spec.junction_node()),
    })
}

/// Undamped frequency (rad/s) and damping ratio of every mode of a
/// proportionally damped model: `zeta = (alpha w + beta / w) / 2`.
pub fn modal_damping_ratios(model: &FeModel) -> Result<Vec<(f64, f64)>> {
    let (alpha, beta) = match model.damping {
        Damping::Proportional { alpha, beta } => (alpha, beta),
        Damping::General => {
            return Err(Error::UnsupportedDamping("modal damping ratios need proportional damping".into()))
        }
    };
    Ok(model
        .natural_frequencies()?
        .into_iter()
        .map(|w| {
            let z = if w > 0.0 { 0.5 * (alpha * w + beta / w) } else { f64::INFINITY };
            (w, z)
        })
        .collect())
}

/// Uniform cubic-spline space on equispaced knots, restricted to functions
/// with `f(0) = f'(0) = 0`.
///
/// The restriction removes the affine functions, which are not identifiable
/// as grounded nonlinear forces (a constant has no in-band spectrum and a
/// linear term is indistinguishable from the underlying linear stiffness).
/// The remaining space has dimension `segments + 1` and contains `q^2` and
/// `q^3`. Functions are represented through B-spline control coefficients;
/// basis function `j` has unit control value at its own B-spline and two
/// pivot B-splines near the origin absorb the constraints. Outside the knot
/// range functions are extended linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpace {
    pub q_min: f64,
    pub q_max: f64,
    pub segments: usize,
    /// Control coefficients of each basis function, one column per function.
    pub control: DMatrix<f64>,
}

impl SplineSpace {
    pub fn new(q_min: f64, q_max: f64, segments: usize) -> Result<Self> {
        if !(q_min.is_finite() && q_max.is_finite()) || q_min >= q_max {
            return Err(Error::Parameter(format!("empty spline range ({q_min:e}, {q_max:e})")));
        }
        if segments == 0 {
            return Err(Error::Parameter("spline needs at least one segment".into()));
        }
        let nb = segments + 3;
        let mut space = Self { q_min, q_max, segments, control: DMatrix::zeros(nb, 0) };
        let (s0, b0, d0, _) = space.local(0.0, false);
        let mut c0 = vec![0.0; nb];
        let mut c1 = vec![0.0; nb];
        for i in 0..4 {
            c0[s0 + i] = b0[i];
            c1[s0 + i] = d0[i];
        }
        let mut best = (0, 1, 0.0f64);
        for i in 0..4 {
            for j in i + 1..4 {
                let (p, q) = (s0 + i, s0 + j);
                let det = c0[p] * c1[q] - c0[q] * c1[p];
                if det.abs() > best.2.abs() {
                    best = (p, q, det);
                }
            }
        }
        let (p, q, det) = best;
        if det.abs() < 1e-300 {
            return Err(Error::Numerical("degenerate spline anchoring".into()));
        }
        let free: Vec<usize> = (0..nb).filter(|&i| i != p && i != q).collect();
        let mut control = DMatrix::zeros(nb, free.len());
        for (col, &f) in free.iter().enumerate() {
            let (r0, r1) = (-c0[f], -c1[f]);
            control[(f, col)] = 1.0;
            control[(p, col)] = (r0 * c1[q] - r1 * c0[q]) / det;
            control[(q, col)] = (c0[p] * r1 - c1[p] * r0) / det;
        }
        space.control = control;
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.segments + 1
    }

    pub fn knot_spacing(&self) -> f64 {
        (self.q_max - self.q_min) / self.segments as f64
    }

    pub fn knots(&self) -> Vec<f64> {
        let h = self.knot_spacing();
        (0..=self.segments).map(|i| self.q_min + h * i as f64).collect()
    }

    /// Segment index, B-spline values, first and second derivatives at `x`.
    /// With `clamp` false the end-segment polynomial is continued outside.
    fn local(&self, x: f64, clamp: bool) -> (usize, [f64; 4], [f64; 4], [f64; 4]) {
        let h = self.knot_spacing();
        let t = (x - self.q_min) / h;
        let s = (t.floor().max(0.0) as usize).min(self.segments - 1);
        let mut u = t - s as f64;
        if clamp {
            u = u.clamp(0.0, 1.0);
        }
        let v = 1.0 - u;
        let b = [
            v * v * v / 6.0,
            (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0,
            (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0,
            u * u * u / 6.0,
        ];
        let d = [-0.5 * v * v / h, (1.5 * u * u - 2.0 * u) / h, (-1.5 * u * u + u + 0.5) / h, 0.5 * u * u / h];
        let dd = [v / (h * h), (3.0 * u - 2.0) / (h * h), (1.0 - 3.0 * u) / (h * h), u / (h * h)];
        (s, b, d, dd)
    }

    /// Control coefficients of `sum_j c_j h_j`.
    pub fn combine(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.control.nrows()];
        for (j, &c) in coefficients.iter().enumerate() {
            if c != 0.0 {
                for i in 0..a.len() {
                    a[i] += self.control[(i, j)] * c;
                }
            }
        }
        a
    }

    /// Value, first and second derivative of the spline with control vector `a`.
    pub fn eval_control(&self, a: &[f64], x: f64) -> (f64, f64, f64) {
        let edge = if x < self.q_min {
            Some(self.q_min)
        } else if x > self.q_max {
            Some(self.q_max)
        } else {
            None
        };
        let xe = edge.unwrap_or(x);
        let (s, b, d, dd) = self.local(xe, true);
        let mut f = 0.0;
        let mut df = 0.0;
        let mut ddf = 0.0;
        for i in 0..4 {
            f += a[s + i] * b[i];
            df += a[s + i] * d[i];
            ddf += a[s + i] * dd[i];
        }
        match edge {
            Some(e) => (f + df * (x - e), df, 0.0),
            None => (f, df, ddf),
        }
    }

    /// Value and derivative of basis function `j`.
    pub fn basis_value(&self, j: usize, x: f64) -> (f64, f64) {
        let a: Vec<f64> = self.control.column(j).iter().copied().collect();
        let (f, df, _) = self.eval_control(&a, x);
        (f, df)
    }

    /// Integral from 0 to `x` of the spline with control vector `a`.
    pub fn integral_control(&self, a: &[f64], x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let (lo, hi, sign) = if x > 0.0 { (0.0, x, 1.0) } else { (x, 0.0, -1.0) };
        let mut breaks = vec![lo];
        for k in self.knots() {
            if k > lo && k < hi {
                breaks.push(k);
            }
        }
        breaks.push(hi);
        const G: [(f64, f64); 3] =
            [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];
        let mut total = 0.0;
        for w in breaks.windows(2) {
            let (a0, b0) = (w[0], w[1]);
            let mid = 0.5 * (a0 + b0);
            let half = 0.5 * (b0 - a0);
            for &(xi, wi) in &G {
                total += wi * half * self.eval_control(a, mid + half * xi).0;
            }
        }
        sign * total
    }
}

/// Kind of a single nonlinear basis function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    /// `h(q) = q^degree`.
    Polynomial { degree: u32 },
    /// Basis function `index` of spline space `space`.
    Spline { space: usize, index: usize },
}

/// One grounded basis term `c_a h_a(q_dof)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisTerm {
    pub kind: TermKind,
    pub dof: usize,
    pub coefficient: f64,
}

/// Set of grounded nonlinear basis terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NonlinearBasis {
    pub terms: Vec<BasisTerm>,
    pub spaces: Vec<SplineSpace>,
}

impl NonlinearBasis {
    pub fn new() -> Self {
        Self::default()
    }

    /// Monomial terms `(degree, coefficient)` grounded at `dof`.
    pub fn polynomial(dof: usize, terms: &[(u32, f64)]) -> Self {
        Self {
            terms: terms
                .iter()
                .map(|&(degree, coefficient)| BasisTerm { kind: TermKind::Polynomial { degree }, dof, coefficient })
                .collect(),
            spaces: Vec::new(),
        }
    }

    /// Cubic + quadratic grounded springs of the benchmark (N/m^3, N/m^2).
    pub fn cubic_quadratic(dof: usize, c1: f64, c2: f64) -> Self {
        Self::polynomial(dof, &[(3, c1), (2, c2)])
    }

    /// Append all functions of a spline space at `dof` with zero coefficients.
    pub fn push_spline(&mut self, space: SplineSpace, dof: usize) {
        let idx = self.spaces.len();
        for index in 0..space.dim() {
            self.terms.push(BasisTerm { kind: TermKind::Spline { space: idx, index }, dof, coefficient: 0.0 });
        }
        self.spaces.push(space);
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.coefficient).collect()
    }

    /// Copy with replaced coefficients.
    pub fn with_coefficients(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.terms.len() {
            return Err(Error::Parameter(format!("expected {} coefficients, got {}", self.terms.len(), c.len())));
        }
        let mut out = self.clone();
        for (t, &v) in out.terms.iter_mut().zip(c) {
            t.coefficient = v;
        }
        Ok(out)
    }

    /// Distinct DOFs carrying terms, in first-appearance order.
    pub fn dofs(&self) -> Vec<usize> {
        let mut d = Vec::new();
        for t in &self.terms {
            if !d.contains(&t.dof) {
                d.push(t.dof);
            }
        }
        d
    }

    /// Uncoefficiented value and derivative of term `a` at displacement `x`.
    pub fn term_value(&self, a: usize, x: f64) -> (f64, f64) {
        match self.terms[a].kind {
            TermKind::Polynomial { degree } => monomial(degree, x),
            TermKind::Spline { space, index } => self.spaces[space].basis_value(index, x),
        }
    }

    /// Restoring force vector `sum_a c_a h_a(q)` mapped to the term DOFs.
    pub fn eval_restoring_force(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(q.len());
        for law in self.compile().laws {
            f[law.dof] += law.eval(q[law.dof]).0;
        }
        f
    }

    /// Stored nonlinear potential `sum_a c_a int_0^q h_a`.
    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        self.compile().laws.iter().map(|law| law.potential(q[law.dof])).sum()
    }

    /// Group coefficiented terms by DOF for fast evaluation.
    pub fn compile(&self) -> CompiledForce {
        let mut laws: Vec<ForceLaw> = Vec::new();
        for dof in self.dofs() {
            let mut law = ForceLaw { dof, poly: Vec::new(), splines: Vec::new() };
            let mut spline_coeffs: Vec<Vec<f64>> = self.spaces.iter().map(|s| vec![0.0; s.dim()]).collect();
            let mut used = vec![false; self.spaces.len()];
            for t in self.terms.iter().filter(|t| t.dof == dof) {
                match t.kind {
                    TermKind::Polynomial { degree } => law.poly.push((degree, t.coefficient)),
                    TermKind::Spline { space, index } => {
                        spline_coeffs[space][index] += t.coefficient;
                        used[space] = true;
                    }
                }
            }
            for (s, c) in spline_coeffs.iter().enumerate() {
                if used[s] {
                    law.splines.push((self.spaces[s].clone(), self.spaces[s].combine(c)));
                }
            }
            laws.push(law);
        }
        CompiledForce { laws }
    }
}

fn monomial(degree: u32, x: f64) -> (f64, f64) {
    match degree {
        0 => (1.0, 0.0),
        1 => (x, 1.0),
        d => (x.powi(d as i32), d as f64 * x.powi(d as i32 - 1)),
    }
}

/// Total nonlinear force law at one DOF.
#[derive(Debug, Clone)]
pub struct ForceLaw {
    pub dof: usize,
    pub poly: Vec<(u32, f64)>,
    pub splines: Vec<(SplineSpace, Vec<f64>)>,
}

impl ForceLaw {
    /// Force and stiffness `(f, df/dx)` at displacement `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let mut f = 0.0;
        let mut df = 0.0;
        for &(d, c) in &self.poly {
            let (v, dv) = monomial(d, x);
            f += c * v;
            df += c * dv;
        }
        for (space, a) in &self.splines {
            let (v, dv, _) = space.eval_control(a, x);
            f += v;
            df += dv;
        }
        (f, df)
    }

    /// Potential `int_0^x f`.
    pub fn potential(&self, x: f64) -> f64 {
        let mut e = 0.0;
        for &(d, c) in &self.poly {
            e += c * x.powi(d as i32 + 1) / (d as f64 + 1.0);
        }
        for (space, a) in &self.splines {
            e += space.integral_control(a, x);
        }
        e
    }
}

/// Nonlinear force laws grouped by DOF.
#[derive(Debug, Clone, Default)]
pub struct CompiledForce {
    pub laws: Vec<ForceLaw>,
}

impl CompiledForce {
    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        self.laws.iter().map(|l| l.potential(q[l.dof])).sum()
    }
}

/// Spline basis of `segments` equal-width segments over `range`, uncoefficiented.
pub fn build_spline_basis(range: (f64, f64), segments: usize, dof: usize) -> Result<NonlinearBasis> {
    let space = SplineSpace::new(range.0, range.1, segments)?;
    let mut basis = NonlinearBasis::new();
    basis.push_spline(space, dof);
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn benchmark_frequencies_match_reference() {
        let model = assemble_beam_model(&BeamModelSpec::benchmark()).unwrap();
        assert_eq!(model.n_p, 32);
        let w = model.natural_frequencies().unwrap();
        let target = [31.28, 143.64, 397.87];
        for i in 0..3 {
            let f = w[i] / (2.0 * PI);
            assert!((f / target[i] - 1.0).abs() < 0.005, "mode {i}: {f}");
        }
    }

    #[test]
    fn zero_damping_coefficients_give_zero_matrix() {
        let mut spec = BeamModelSpec::benchmark();
        spec.alpha = 0.0;
        spec.beta = 0.0;
        let model = assemble_beam_model(&spec).unwrap();
        assert_eq!(model.c.amax(), 0.0);
        assert!(modal_damping_ratios(&model).unwrap().iter().all(|&(_, z)| z == 0.0));
    }

    #[test]
    fn single_element_cantilever_matches_closed_form() {
        let s = BeamSection { length: 0.5, width: 0.02, thickness: 0.01, elements: 1 };
        let mat = Material { youngs_modulus: 2.1e11, density: 7850.0 };
        let chain = BeamChain { spans: vec![(s, mat, 1.0)], clamp_left: true, clamp_right: false, node_masses: vec![] };
        let (k, m, _, _) = chain.assemble().unwrap();
        let (w2, _) = generalized_symmetric_eigen(&k, &m).unwrap();
        let ei = mat.youngs_modulus * s.width * s.thickness.powi(3) / 12.0;
        let ra = mat.density * s.width * s.thickness;
        let exact = 1.875_104_068_711_961f64.powi(2) * (ei / (ra * s.length.powi(4))).sqrt();
        assert!((w2[0].sqrt() / exact - 1.0).abs() < 0.02);
    }

    #[test]
    fn one_dof_damping_ratio() {
        let m = DMatrix::from_element(1, 1, 1.0);
        let k = DMatrix::from_element(1, 1, 1.0);
        let model = FeModel::from_matrices(m, k, 0.0, 0.1, 0).unwrap();
        let z = modal_damping_ratios(&model).unwrap();
        assert!((z[0].1 - 0.05).abs() < 1e-15);
    }

    #[test]
    fn general_damping_is_rejected_for_ratios() {
        let m = DMatrix::from_element(1, 1, 1.0);
        let k = DMatrix::from_element(1, 1, 1.0);
        let model = FeModel::from_matrices(m.clone(), k, 0.0, 0.1, 0).unwrap().with_damping_matrix(m).unwrap();
        assert!(matches!(modal_damping_ratios(&model), Err(Error::UnsupportedDamping(_))));
    }

    #[test]
    fn polynomial_restoring_force_values() {
        let basis = NonlinearBasis::cubic_quadratic(2, 8e9, -1.05e7);
        let mut q = DVector::zeros(4);
        q[2] = 1e-3;
        let f = basis.eval_restoring_force(&q);
        assert!((f[2] + 2.5).abs() < 1e-12);
        assert_eq!(f[0], 0.0);
        q[2] = -1e-3;
        assert!((basis.eval_restoring_force(&q)[2] + 18.5).abs() < 1e-12);
        assert_eq!(basis.eval_restoring_force(&DVector::zeros(4)).amax(), 0.0);
    }

    #[test]
    fn degenerate_assembly_is_rejected() {
        let s = BeamSection { length: 0.0, width: 0.02, thickness: 0.01, elements: 1 };
        let mat = Material { youngs_modulus: 2.1e11, density: 7850.0 };
        let chain = BeamChain { spans: vec![(s, mat, 1.0)], clamp_left: true, clamp_right: false, node_masses: vec![] };
        assert!(chain.assemble().is_err());
    }

    #[test]
    fn spline_space_dimension_and_anchor() {
        let space = SplineSpace::new(-1e-3, 1.2e-3, 10).unwrap();
        assert_eq!(space.dim(), 11);
        for j in 0..space.dim() {
            let (f, df) = space.basis_value(j, 0.0);
            assert!(f.abs() < 1e-14 && df.abs() < 1e-10, "basis {j}: {f} {df}");
        }
        assert!(SplineSpace::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn spline_anchor_at_knot() {
        let space = SplineSpace::new(-1.0, 1.0, 10).unwrap();
        for j in 0..space.dim() {
            let (f, df) = space.basis_value(j, 0.0);
            assert!(f.abs() < 1e-14 && df.abs() < 1e-12);
        }
    }
}
