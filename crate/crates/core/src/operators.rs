//! Semi-discrete operators: centred elliptic stencils, first-order upwind
//! divergence-form convection, and the boundary/source data that turn them
//! into affine systems `u' = A u + g(t)`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mesh::{FaceField, Mesh, MeshError, Point, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("entry ({row}, {col}) outside a {n}x{n} operator")]
    IndexOutOfRange { row: usize, col: usize, n: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("diffusion tensor is not symmetric at {coords:?}: a[{i}][{j}] = {aij}, a[{j}][{i}] = {aji}")]
    Asymmetric { coords: Vec<f64>, i: usize, j: usize, aij: f64, aji: f64 },
    #[error("operators have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    pub fn zeros(n: usize) -> SparseOperator {
        SparseOperator { n, row_ptr: vec![0; n + 1], cols: Vec::new(), vals: Vec::new() }
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(
        n: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<SparseOperator, OperatorError> {
        for &(row, col, value) in &triplets {
            if row >= n || col >= n {
                return Err(OperatorError::IndexOutOfRange { row, col, n });
            }
            if !value.is_finite() {
                return Err(OperatorError::NonFinite { row, col, value });
            }
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(cols.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseOperator { n, row_ptr, cols: keep_cols, vals: keep_vals })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entries of `row` as `(col, value)` pairs, columns ascending.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.row(row).find(|&(c, _)| c == col).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            *yi = s;
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for (c, v) in self.cols.iter().zip(&self.vals) {
            col[*c] += v.abs();
        }
        col.into_iter().fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &SparseOperator) -> Result<SparseOperator, OperatorError> {
        if self.n != other.n {
            return Err(OperatorError::DimensionMismatch(self.n, other.n));
        }
        SparseOperator::from_triplets(self.n, self.triplets().chain(other.triplets()).collect())
    }

    pub fn scaled(&self, s: f64) -> SparseOperator {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &SparseOperator) -> f64 {
        let diff = self.add(&other.scaled(-1.0)).expect("dimensions checked by caller");
        diff.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Coordinate text format: one `row col value` line per stored entry.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r} {c} {v:e}");
        }
        s
    }
}

/// Scalar data `f(t, x)`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Dirichlet data `b` on the whole boundary and optional inflow data `b1`.
///
/// Without an explicit `b1`, the inflow data is the restriction of `b`.
#[derive(Clone)]
pub struct BoundaryData {
    b: ScalarFn,
    b1: Option<ScalarFn>,
    time_dependent: bool,
    zero: bool,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryData")
            .field("time_dependent", &self.time_dependent)
            .field("zero", &self.zero)
            .field("separate_inflow", &self.b1.is_some())
            .finish()
    }
}

impl BoundaryData {
    pub fn homogeneous() -> BoundaryData {
        BoundaryData { b: Arc::new(|_, _| 0.0), b1: None, time_dependent: false, zero: true }
    }

    pub fn constant(value: f64) -> BoundaryData {
        if value == 0.0 {
            return BoundaryData::homogeneous();
        }
        BoundaryData { b: Arc::new(move |_, _| value), b1: None, time_dependent: false, zero: false }
    }

    /// Time-independent data `b(x)`.
    pub fn steady<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> BoundaryData {
        BoundaryData { b: Arc::new(move |_, x| f(x)), b1: None, time_dependent: false, zero: false }
    }

    /// Time-dependent data `b(t, x)`.
    pub fn unsteady<F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static>(f: F) -> BoundaryData {
        BoundaryData { b: Arc::new(f), b1: None, time_dependent: true, zero: false }
    }

    /// Replaces the inflow data by a separate evaluator.
    pub fn with_inflow<F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static>(mut self, f: F) -> BoundaryData {
        self.b1 = Some(Arc::new(f));
        self.zero = false;
        self
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.b)(t, x)
    }

    pub fn eval_inflow(&self, t: f64, x: &[f64]) -> f64 {
        match &self.b1 {
            Some(b1) => b1(t, x),
            None => (self.b)(t, x),
        }
    }

    fn dirichlet_fn(&self) -> ScalarFn {
        self.b.clone()
    }

    fn inflow_fn(&self) -> ScalarFn {
        self.b1.clone().unwrap_or_else(|| self.b.clone())
    }
}

/// Source term `f(t, x)`.
#[derive(Clone)]
pub struct SourceData {
    f: ScalarFn,
    time_dependent: bool,
}

impl std::fmt::Debug for SourceData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceData").field("time_dependent", &self.time_dependent).finish()
    }
}

impl SourceData {
    pub fn steady<F: Fn(&[f64]) -> f64 + Send + Sync + 'static>(f: F) -> SourceData {
        SourceData { f: Arc::new(move |_, x| f(x)), time_dependent: false }
    }

    pub fn unsteady<F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static>(f: F) -> SourceData {
        SourceData { f: Arc::new(f), time_dependent: true }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }
}

/// Boundary values folded into the right-hand side: `g[row] += coef * b(t, point)`.
#[derive(Clone)]
struct Injection {
    rows: Vec<usize>,
    coefs: Vec<f64>,
    points: Vec<Point>,
    data: ScalarFn,
    time_dependent: bool,
    dim: usize,
}

impl Injection {
    fn add_to(&self, t: f64, out: &mut [f64]) {
        for ((&r, &c), p) in self.rows.iter().zip(&self.coefs).zip(&self.points) {
            out[r] += c * (self.data)(t, &p[..self.dim]);
        }
    }
}

#[derive(Clone)]
struct Source {
    f: ScalarFn,
    points: Arc<Vec<Point>>,
    /// Cached values for time-independent sources.
    steady: Option<Arc<Vec<f64>>>,
    dim: usize,
}

impl Source {
    fn new(mesh: &Mesh, data: &SourceData) -> Result<Source, OperatorError> {
        let dim = mesh.dim();
        let points: Vec<Point> = (0..mesh.len()).map(|k| mesh.node_point(k)).collect();
        for p in &points {
            let v = data.eval(0.0, &p[..dim]);
            if !v.is_finite() {
                return Err(MeshError::NonFinite { coords: p[..dim].to_vec(), value: v }.into());
            }
        }
        let steady = if data.time_dependent {
            None
        } else {
            Some(Arc::new(points.iter().map(|p| data.eval(0.0, &p[..dim])).collect()))
        };
        Ok(Source { f: data.f.clone(), points: Arc::new(points), steady, dim })
    }

    fn add_to(&self, t: f64, out: &mut [f64]) {
        match &self.steady {
            Some(v) => out.iter_mut().zip(v.iter()).for_each(|(o, s)| *o += s),
            None => {
                for (o, p) in out.iter_mut().zip(self.points.iter()) {
                    *o += (self.f)(t, &p[..self.dim]);
                }
            }
        }
    }
}

/// `u' = A u + injection(t) + source(t)`.
#[derive(Clone)]
pub struct AffineSystem {
    operator: SparseOperator,
    injections: Vec<Injection>,
    sources: Vec<Source>,
}

impl std::fmt::Debug for AffineSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineSystem")
            .field("dim", &self.operator.dim())
            .field("nnz", &self.operator.nnz())
            .field("injections", &self.injections.len())
            .field("sources", &self.sources.len())
            .finish()
    }
}

impl AffineSystem {
    /// An autonomous homogeneous system `u' = A u`.
    pub fn homogeneous(operator: SparseOperator) -> AffineSystem {
        AffineSystem { operator, injections: Vec::new(), sources: Vec::new() }
    }

    /// Adds a source term sampled on the nodes of `mesh`.
    pub fn with_source(mut self, mesh: &Mesh, source: &SourceData) -> Result<AffineSystem, OperatorError> {
        if mesh.len() != self.dim() {
            return Err(OperatorError::DimensionMismatch(mesh.len(), self.dim()));
        }
        self.sources.push(Source::new(mesh, source)?);
        Ok(self)
    }

    /// Adds a constant forcing vector (mostly useful for tests).
    pub fn with_constant_forcing(mut self, g: Vec<f64>) -> AffineSystem {
        assert_eq!(g.len(), self.dim());
        let n = g.len();
        self.sources.push(Source {
            f: Arc::new(|_, _| 0.0),
            points: Arc::new(vec![[0.0; MAX_DIM]; n]),
            steady: Some(Arc::new(g)),
            dim: 0,
        });
        self
    }

    /// Adds a time-dependent forcing `g(t)_k = f(t, k)` (mostly useful for tests).
    pub fn with_forcing_fn<F>(mut self, f: F) -> AffineSystem
    where
        F: Fn(f64, usize) -> f64 + Send + Sync + 'static,
    {
        let n = self.dim();
        let points = (0..n).map(|k| [k as f64, 0.0, 0.0]).collect();
        self.sources.push(Source {
            f: Arc::new(move |t, p| f(t, p[0] as usize)),
            points: Arc::new(points),
            steady: None,
            dim: 1,
        });
        self
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn has_forcing(&self) -> bool {
        !self.injections.is_empty() || !self.sources.is_empty()
    }

    pub fn forcing_is_time_dependent(&self) -> bool {
        self.injections.iter().any(|i| i.time_dependent) || self.sources.iter().any(|s| s.steady.is_none())
    }

    /// Boundary contribution to the right-hand side at time `t`.
    pub fn boundary_injection(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.injections.iter().for_each(|i| i.add_to(t, &mut out));
        out
    }

    pub fn source(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sources.iter().for_each(|s| s.add_to(t, &mut out));
        out
    }

    /// Writes `injection(t) + source(t)` into `out`.
    pub fn forcing(&self, t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.injections.iter().for_each(|i| i.add_to(t, out));
        self.sources.iter().for_each(|s| s.add_to(t, out));
    }

    /// Right-hand side `A u + g(t)`.
    pub fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
        self.operator.apply(u, out);
        self.injections.iter().for_each(|i| i.add_to(t, out));
        self.sources.iter().for_each(|s| s.add_to(t, out));
    }

    /// The system whose operator and forcing are the sums of both parts.
    pub fn combine(&self, other: &AffineSystem) -> Result<AffineSystem, OperatorError> {
        let operator = self.operator.add(&other.operator)?;
        let mut injections = self.injections.clone();
        injections.extend(other.injections.iter().cloned());
        let mut sources = self.sources.clone();
        sources.extend(other.sources.iter().cloned());
        Ok(AffineSystem { operator, injections, sources })
    }
}

/// Coefficients of the elliptic part, written as the generator
/// `L u = div(a grad u) - alpha . grad u - beta u`.
#[derive(Clone)]
pub enum EllipticCoefficients {
    /// `a = nu I`, `alpha = 0`, `beta = 0`.
    Isotropic { nu: f64 },
    General {
        /// Row-major `dim x dim` tensor at `x`.
        a: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
        alpha: Option<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>>,
        beta: Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>>,
    },
}

impl std::fmt::Debug for EllipticCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EllipticCoefficients::Isotropic { nu } => write!(f, "Isotropic {{ nu: {nu} }}"),
            EllipticCoefficients::General { .. } => write!(f, "General {{ .. }}"),
        }
    }
}

struct Assembler<'m> {
    mesh: &'m Mesh,
    triplets: Vec<(usize, usize, f64)>,
    rows: Vec<usize>,
    coefs: Vec<f64>,
    points: Vec<Point>,
}

impl<'m> Assembler<'m> {
    fn new(mesh: &'m Mesh) -> Self {
        Assembler { mesh, triplets: Vec::new(), rows: Vec::new(), coefs: Vec::new(), points: Vec::new() }
    }

    /// Adds `coef * u(idx)` to row `row`; boundary nodes go to the injection.
    fn add(&mut self, row: usize, idx: &[usize], coef: f64) {
        if coef == 0.0 {
            return;
        }
        match self.mesh.flat_index(idx) {
            Some(col) => self.triplets.push((row, col, coef)),
            None => {
                self.rows.push(row);
                self.coefs.push(coef);
                self.points.push(self.mesh.point_of(idx));
            }
        }
    }

    fn finish(self, data: Option<(ScalarFn, bool)>) -> Result<AffineSystem, OperatorError> {
        let dim = self.mesh.dim();
        let operator = SparseOperator::from_triplets(self.mesh.len(), self.triplets)?;
        let mut injections = Vec::new();
        if let Some((data, time_dependent)) = data {
            if !self.rows.is_empty() {
                injections.push(Injection {
                    rows: self.rows,
                    coefs: self.coefs,
                    points: self.points,
                    data,
                    time_dependent,
                    dim,
                });
            }
        }
        Ok(AffineSystem { operator, injections, sources: Vec::new() })
    }
}

fn shifted(idx: &[usize; MAX_DIM], a: usize, up: bool) -> [usize; MAX_DIM] {
    let mut j = *idx;
    if up {
        j[a] += 1;
    } else {
        j[a] -= 1;
    }
    j
}

/// Centred second-order discretization of the elliptic generator with
/// Dirichlet data `b`.
///
/// For `a = nu I` this is the standard (2 dim + 1)-point stencil. General
/// tensors use face-averaged diagonal coefficients and the centred
/// divergence-form cross stencil.
pub fn assemble_elliptic(
    mesh: &Mesh,
    coeffs: &EllipticCoefficients,
    b: &BoundaryData,
) -> Result<AffineSystem, OperatorError> {
    let dim = mesh.dim();
    let mut asm = Assembler::new(mesh);
    match coeffs {
        EllipticCoefficients::Isotropic { nu } => {
            for k in 0..mesh.len() {
                let idx = mesh.multi_index(k);
                for a in 0..dim {
                    let c = nu / (mesh.axis(a).h * mesh.axis(a).h);
                    asm.triplets.push((k, k, -2.0 * c));
                    asm.add(k, &shifted(&idx, a, false), c);
                    asm.add(k, &shifted(&idx, a, true), c);
                }
            }
        }
        EllipticCoefficients::General { a: tensor, alpha, beta } => {
            let eval = |idx: &[usize]| -> Result<Vec<f64>, OperatorError> {
                let p = mesh.point_of(idx);
                let m = tensor(&p[..dim]);
                for i in 0..dim {
                    for j in 0..i {
                        if m[i * dim + j] != m[j * dim + i] {
                            return Err(OperatorError::Asymmetric {
                                coords: p[..dim].to_vec(),
                                i,
                                j,
                                aij: m[i * dim + j],
                                aji: m[j * dim + i],
                            });
                        }
                    }
                }
                Ok(m)
            };
            for k in 0..mesh.len() {
                let idx = mesh.multi_index(k);
                let p = mesh.point_of(&idx);
                let here = eval(&idx)?;
                for ai in 0..dim {
                    let ha = mesh.axis(ai).h;
                    let up = shifted(&idx, ai, true);
                    let dn = shifted(&idx, ai, false);
                    let a_up = 0.5 * (here[ai * dim + ai] + eval(&up)?[ai * dim + ai]);
                    let a_dn = 0.5 * (here[ai * dim + ai] + eval(&dn)?[ai * dim + ai]);
                    asm.add(k, &up, a_up / (ha * ha));
                    asm.add(k, &dn, a_dn / (ha * ha));
                    asm.triplets.push((k, k, -(a_up + a_dn) / (ha * ha)));
                    for bj in 0..dim {
                        if bj == ai {
                            continue;
                        }
                        let s = 1.0 / (4.0 * ha * mesh.axis(bj).h);
                        let c_up = eval(&up)?[ai * dim + bj] * s;
                        let c_dn = eval(&dn)?[ai * dim + bj] * s;
                        asm.add(k, &shifted(&up, bj, true), c_up);
                        asm.add(k, &shifted(&up, bj, false), -c_up);
                        asm.add(k, &shifted(&dn, bj, true), -c_dn);
                        asm.add(k, &shifted(&dn, bj, false), c_dn);
                    }
                }
                if let Some(alpha) = alpha {
                    let al = alpha(&p[..dim]);
                    for ai in 0..dim {
                        let c = al[ai] / (2.0 * mesh.axis(ai).h);
                        asm.add(k, &shifted(&idx, ai, true), -c);
                        asm.add(k, &shifted(&idx, ai, false), c);
                    }
                }
                if let Some(beta) = beta {
                    asm.triplets.push((k, k, -beta(&p[..dim])));
                }
            }
        }
    }
    let data = (!b.is_zero()).then(|| (b.dirichlet_fn(), b.is_time_dependent()));
    asm.finish(data)
}

/// First-order upwind flux discretization of `div(c w)`.
///
/// Row `i` is `sum_a (F_{i+1/2} - F_{i-1/2}) / h_a` with `F = c_face w_donor`,
/// where the donor is the neighbour the characteristic (velocity `-c`) comes
/// from: `w_{i+1}` if `c_face > 0`, else `w_i`. Donors outside the domain are
/// inflow faces and read `b1`; outflow faces automatically use the nearest
/// interior value.
pub fn assemble_upwind_divergence(
    mesh: &Mesh,
    velocity: &FaceField,
    b1: &BoundaryData,
) -> Result<AffineSystem, OperatorError> {
    let dim = mesh.dim();
    let mut asm = Assembler::new(mesh);
    for k in 0..mesh.len() {
        let idx = mesh.multi_index(k);
        for a in 0..dim {
            let h = mesh.axis(a).h;
            let c_up = velocity.normal(a, velocity.face_index(a, idx[a], &idx));
            let c_dn = velocity.normal(a, velocity.face_index(a, idx[a] - 1, &idx));
            if c_up > 0.0 {
                asm.add(k, &shifted(&idx, a, true), c_up / h);
            } else if c_up < 0.0 {
                asm.triplets.push((k, k, c_up / h));
            }
            if c_dn > 0.0 {
                asm.triplets.push((k, k, -c_dn / h));
            } else if c_dn < 0.0 {
                asm.add(k, &shifted(&idx, a, false), -c_dn / h);
            }
        }
    }
    let data = (!b1.is_zero()).then(|| (b1.inflow_fn(), b1.is_time_dependent()));
    asm.finish(data)
}

/// Smallest eigenvalue of the diffusion tensor over all nodes; a positive
/// value certifies strong ellipticity on the sample set.
pub fn ellipticity_estimate(coeffs: &EllipticCoefficients, mesh: &Mesh) -> f64 {
    match coeffs {
        EllipticCoefficients::Isotropic { nu } => *nu,
        EllipticCoefficients::General { a, .. } => {
            let dim = mesh.dim();
            (0..mesh.len())
                .map(|k| {
                    let p = mesh.node_point(k);
                    let m = DMatrix::from_row_slice(dim, dim, &a(&p[..dim]));
                    SymmetricEigen::new(m).eigenvalues.min()
                })
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Outcome of [`coercivity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityReport {
    /// Smallest candidate shift that made every sample pass.
    pub shift: Option<f64>,
    /// Smallest shift that would have sufficed for the samples drawn.
    pub required_shift: f64,
    pub samples: usize,
}

impl CoercivityReport {
    pub fn passed(&self) -> bool {
        self.shift.is_some()
    }
}

/// Squared discrete H1 seminorm with zero boundary values.
pub fn discrete_gradient_sq(mesh: &Mesh, u: &[f64]) -> f64 {
    let dim = mesh.dim();
    let mut total = 0.0;
    for k in 0..mesh.len() {
        let idx = mesh.multi_index(k);
        for a in 0..dim {
            let h = mesh.axis(a).h;
            let up = mesh.flat_index(&shifted(&idx, a, true)).map_or(0.0, |j| u[j]);
            let d = (up - u[k]) / h;
            total += d * d;
            if idx[a] == 1 {
                let d0 = u[k] / h;
                total += d0 * d0;
            }
        }
    }
    total * mesh.cell_volume()
}

/// Numerical check of the Gårding-type inequality
/// `<-A u, u> + s |u|^2 >= (eta / 2) |grad_h u|^2` on random vectors.
pub fn coercivity_check(
    operator: &SparseOperator,
    mesh: &Mesh,
    eta: f64,
    shifts: &[f64],
    samples: usize,
    seed: u64,
) -> CoercivityReport {
    let n = operator.dim();
    let cell = mesh.cell_volume();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut au = vec![0.0; n];
    let mut required = f64::NEG_INFINITY;
    for _ in 0..samples {
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        operator.apply(&u, &mut au);
        let form = -cell * au.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        let mass = cell * u.iter().map(|v| v * v).sum::<f64>();
        let grad = discrete_gradient_sq(mesh, &u);
        required = required.max((0.5 * eta * grad - form) / mass);
    }
    let mut sorted = shifts.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let shift = sorted.into_iter().find(|&s| s >= required);
    CoercivityReport { shift, required_shift: required, samples }
}
