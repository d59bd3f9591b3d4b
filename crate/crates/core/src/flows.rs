//! Propagators for linear subflows `u' = A u + g(t)`.
//!
//! The exponential action is computed with a scaled, truncated Taylor series
//! (the scaling-and-truncation scheme of Al-Mohy and Higham). Forcing is
//! handled by augmenting the operator: if `g(t0 + s) = sum_k c_k s^k / k!`
//! then `[u; z]` with `z_k = s^k / k!` solves the autonomous system
//!
//! ```text
//! u' = A u + sum_k c_k z_k,    z_0' = 0,  z_k' = z_{k-1},
//! ```
//!
//! so one exponential action propagates `u` exactly for polynomial forcing.

use thiserror::Error;

use crate::operators::{AffineSystem, SparseOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step must be positive, got {0}")]
    BadStep(f64),
    #[error("tolerance {0} outside [1e-14, 1e-2]")]
    BadTolerance(f64),
    #[error("exponential action needs {needed} operator applications, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("substepping did not converge: relative change {achieved:e} after {substeps} substeps")]
    NoConvergence { achieved: f64, substeps: usize },
    #[error("vector length {got} does not match operator dimension {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Anything that can be applied to a vector and bounded in the 1-norm.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// An upper bound for the induced 1-norm.
    fn norm1(&self) -> f64;
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        SparseOperator::dim(self)
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        SparseOperator::apply(self, x, y)
    }
    fn norm1(&self) -> f64 {
        SparseOperator::norm1(self)
    }
}

/// `[[A, C], [0, J]]` acting on `[u; z]`, where the columns of `C` are
/// (scaled) forcing coefficients and `J` is the lower shift `z_k' = z_{k-1}`.
pub struct AugmentedOperator<'a> {
    a: &'a SparseOperator,
    columns: Vec<Vec<f64>>,
    norm: f64,
}

impl<'a> AugmentedOperator<'a> {
    pub fn new(a: &'a SparseOperator, columns: Vec<Vec<f64>>) -> Self {
        let p = columns.len();
        let mut norm = a.norm1();
        for (k, c) in columns.iter().enumerate() {
            let shift = if k + 1 < p { 1.0 } else { 0.0 };
            norm = norm.max(c.iter().map(|v| v.abs()).sum::<f64>() + shift);
        }
        AugmentedOperator { a, columns, norm }
    }
}

impl LinearOperator for AugmentedOperator<'_> {
    fn dim(&self) -> usize {
        self.a.dim() + self.columns.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.a.dim();
        let (xu, xz) = x.split_at(n);
        let (yu, yz) = y.split_at_mut(n);
        self.a.apply(xu, yu);
        for (c, &z) in self.columns.iter().zip(xz) {
            if z != 0.0 {
                yu.iter_mut().zip(c).for_each(|(y, c)| *y += z * c);
            }
        }
        if !yz.is_empty() {
            let m = yz.len();
            yz[0] = 0.0;
            yz[1..].copy_from_slice(&xz[..m - 1]);
        }
    }

    fn norm1(&self) -> f64 {
        self.norm
    }
}

/// Default cap on operator applications per exponential action.
pub const DEFAULT_MATVEC_BUDGET: usize = 20_000_000;

const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;
const MAX_DEGREE: usize = 55;

/// Largest `theta` with `theta^(m+1) / (m+1)! <= u`: a forward bound on the
/// truncation error of a degree-`m` Taylor step with `||tA|| <= theta`.
fn theta(m: usize) -> f64 {
    let ln_fact: f64 = (1..=m + 1).map(|k| (k as f64).ln()).sum();
    ((UNIT_ROUNDOFF.ln() + ln_fact) / (m + 1) as f64).exp()
}

/// Chooses `(degree, substeps)` minimizing the number of applications.
fn taylor_parameters(norm: f64) -> (usize, usize) {
    let mut best = (MAX_DEGREE, usize::MAX, usize::MAX);
    for m in 5..=MAX_DEGREE {
        let s = (norm / theta(m)).ceil().max(1.0);
        let cost = (m as f64) * s;
        if cost < best.2 as f64 {
            best = (m, s as usize, cost as usize);
        }
    }
    (best.0, best.1)
}

/// Computes `exp(t A) v` for a general linear operator.
///
/// `tol` controls early truncation of each Taylor step; the number of substeps
/// comes from a rigorous 1-norm bound, so the result is accurate to roughly
/// `max(tol, machine precision)` relative to the propagated norms.
pub fn expmv<Op: LinearOperator + ?Sized>(
    op: &Op,
    t: f64,
    v: &[f64],
    tol: f64,
    budget: usize,
) -> Result<Vec<f64>, FlowError> {
    expmv_partial(op, t, v, tol, budget, op.dim(), 0)
}

/// [`expmv`] whose truncation test only looks at the first `norm_len`
/// entries and never stops before `min_terms` terms.
fn expmv_partial<Op: LinearOperator + ?Sized>(
    op: &Op,
    t: f64,
    v: &[f64],
    tol: f64,
    budget: usize,
    norm_len: usize,
    min_terms: usize,
) -> Result<Vec<f64>, FlowError> {
    let n = op.dim();
    if v.len() != n {
        return Err(FlowError::LengthMismatch { expected: n, got: v.len() });
    }
    let norm = t.abs() * op.norm1();
    if t == 0.0 || norm == 0.0 {
        return Ok(v.to_vec());
    }
    let (m, s) = taylor_parameters(norm);
    let needed = m.saturating_mul(s);
    if needed > budget {
        return Err(FlowError::BudgetExceeded { needed, budget });
    }
    let dt = t / s as f64;
    let mut f = v.to_vec();
    let mut b = v.to_vec();
    let mut tmp = vec![0.0; n];
    let inf = |x: &[f64]| x[..norm_len].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..s {
        let mut c1 = inf(&b);
        for k in 1..=m {
            op.apply(&b, &mut tmp);
            let scale = dt / k as f64;
            for (bi, ti) in b.iter_mut().zip(&tmp) {
                *bi = scale * ti;
            }
            f.iter_mut().zip(&b).for_each(|(fi, bi)| *fi += bi);
            let c2 = inf(&b);
            if k >= min_terms && c1 + c2 <= tol * inf(&f) {
                break;
            }
            c1 = c2;
        }
        b.copy_from_slice(&f);
    }
    Ok(f)
}

/// `exp(tau A) v`.
pub fn expm_action(a: &SparseOperator, v: &[f64], tau: f64) -> Result<Vec<f64>, FlowError> {
    expmv(a, tau, v, UNIT_ROUNDOFF, DEFAULT_MATVEC_BUDGET)
}

/// `phi1(tau A) v = (tau A)^{-1} (exp(tau A) - I) v`, equal to `v` at `tau = 0`.
pub fn phi1_action(a: &SparseOperator, v: &[f64], tau: f64) -> Result<Vec<f64>, FlowError> {
    if tau == 0.0 {
        return Ok(v.to_vec());
    }
    let n = a.dim();
    let (columns, z0) = scaled_columns(a, vec![v.to_vec()]);
    let aug = AugmentedOperator::new(a, columns);
    let mut x = vec![0.0; n + 1];
    x[n] = z0;
    let y = expmv_partial(&aug, tau, &x, UNIT_ROUNDOFF, DEFAULT_MATVEC_BUDGET, n, 2)?;
    Ok(y[..n].iter().map(|v| v / tau).collect())
}

/// Rescales forcing columns so they do not dominate the augmented norm;
/// returns the columns and the matching initial value of `z_0`.
fn scaled_columns(a: &SparseOperator, mut columns: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, f64) {
    let cmax = columns
        .iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let target = a.norm1().max(1.0);
    let eta = if cmax > target { 2f64.powi((target / cmax).log2().floor() as i32) } else { 1.0 };
    for c in &mut columns {
        c.iter_mut().for_each(|v| *v *= eta);
    }
    (columns, 1.0 / eta)
}

/// Propagates `u' = A u + g(t)` from `t0` over `tau` with `g` given as
/// Taylor coefficients `g(t0 + s) = sum_k c_k s^k / k!`.
fn propagate_polynomial(
    a: &SparseOperator,
    u0: &[f64],
    tau: f64,
    coeffs: Vec<Vec<f64>>,
    tol: f64,
) -> Result<Vec<f64>, FlowError> {
    let n = a.dim();
    if coeffs.is_empty() {
        return expmv(a, tau, u0, tol, DEFAULT_MATVEC_BUDGET);
    }
    let p = coeffs.len();
    let (columns, z0) = scaled_columns(a, coeffs);
    let aug = AugmentedOperator::new(a, columns);
    let mut x = Vec::with_capacity(n + p);
    x.extend_from_slice(u0);
    x.push(z0);
    x.extend(std::iter::repeat_n(0.0, p - 1));
    let mut y = expmv_partial(&aug, tau, &x, tol, DEFAULT_MATVEC_BUDGET, n, p + 1)?;
    y.truncate(n);
    Ok(y)
}

/// Degree of the forcing interpolant inside each substep.
const FORCING_DEGREE: usize = 6;
const MAX_SUBSTEP_LEVELS: u32 = 14;

/// Taylor coefficients at `t0` of the degree-`FORCING_DEGREE` interpolant of
/// `g` on Chebyshev points of `[t0, t0 + dt]`.
fn forcing_coefficients(system: &AffineSystem, t0: f64, dt: f64) -> Vec<Vec<f64>> {
    let q = FORCING_DEGREE;
    let n = system.dim();
    // nodes in [0, 1]
    let nodes: Vec<f64> = (0..=q)
        .map(|j| 0.5 - 0.5 * ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * (q + 1)) as f64).cos())
        .collect();
    let vander = nalgebra::DMatrix::from_fn(q + 1, q + 1, |i, j| nodes[i].powi(j as i32));
    let inv = vander.try_inverse().expect("Chebyshev Vandermonde matrix is invertible");
    let mut samples = vec![vec![0.0; n]; q + 1];
    for (j, s) in samples.iter_mut().enumerate() {
        system.forcing(t0 + nodes[j] * dt, s);
    }
    // monomial coefficients in sigma = s / dt, then c_k = k! a_k / dt^k
    let mut coeffs = vec![vec![0.0; n]; q + 1];
    let mut fact = 1.0;
    for (k, ck) in coeffs.iter_mut().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        let scale = fact / dt.powi(k as i32);
        for (j, s) in samples.iter().enumerate() {
            let w = inv[(k, j)] * scale;
            if w != 0.0 {
                ck.iter_mut().zip(s).for_each(|(c, v)| *c += w * v);
            }
        }
    }
    coeffs
}

fn relative_l2_change(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let s: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

/// Solution at `t0 + tau` of `u' = A u + injection(t) + source(t)`, `u(t0) = u0`.
///
/// Time-independent forcing is propagated in a single exponential action
/// (`exp(tau A) u0 + tau phi1(tau A) g`). Time-dependent forcing is
/// interpolated by a polynomial on each of `m` substeps, and `m` is doubled
/// until two successive answers differ by less than `tol` (relative, discrete
/// L2).
pub fn propagate(
    system: &AffineSystem,
    u0: &[f64],
    t0: f64,
    tau: f64,
    tol: f64,
) -> Result<Vec<f64>, FlowError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(FlowError::BadStep(tau));
    }
    if !(1e-14..=1e-2).contains(&tol) {
        return Err(FlowError::BadTolerance(tol));
    }
    let n = system.dim();
    if u0.len() != n {
        return Err(FlowError::LengthMismatch { expected: n, got: u0.len() });
    }
    let inner = 0.1 * tol;
    let a = system.operator();
    if !system.has_forcing() {
        return expmv(a, tau, u0, inner, DEFAULT_MATVEC_BUDGET);
    }
    if !system.forcing_is_time_dependent() {
        let mut g = vec![0.0; n];
        system.forcing(t0, &mut g);
        return propagate_polynomial(a, u0, tau, vec![g], inner);
    }
    let run = |m: usize| -> Result<Vec<f64>, FlowError> {
        let dt = tau / m as f64;
        let mut u = u0.to_vec();
        for j in 0..m {
            let coeffs = forcing_coefficients(system, t0 + j as f64 * dt, dt);
            u = propagate_polynomial(a, &u, dt, coeffs, inner)?;
        }
        Ok(u)
    };
    let mut prev = run(1)?;
    let mut achieved = f64::INFINITY;
    for level in 1..=MAX_SUBSTEP_LEVELS {
        let m = 1usize << level;
        let next = run(m)?;
        achieved = relative_l2_change(&next, &prev);
        if achieved < tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(FlowError::NoConvergence { achieved, substeps: 1 << MAX_SUBSTEP_LEVELS })
}
