//! Reference solutions of the unsplit semi-discrete system with an adaptive
//! Dormand-Prince 5(4) pair.

use thiserror::Error;

use crate::operators::AffineSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("tolerances must be at least 1e-14 (atol = {atol:e}, rtol = {rtol:e})")]
    BadTolerance { atol: f64, rtol: f64 },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {budget} exhausted at t = {t}")]
    BudgetExceeded { t: f64, budget: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("initial state has length {got}, system dimension is {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Butcher tableau of the Dormand-Prince 5(4) pair.
pub mod tableau {
    pub const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 7] = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    /// Fifth-order weights (equal to the last row of `A`: first same as last).
    pub const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    /// Embedded fourth-order weights.
    pub const B_HAT: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    pub safety: f64,
    /// Bounds on the step-size ratio `h_new / h`.
    pub min_factor: f64,
    pub max_factor: f64,
    /// PI stabilization exponent.
    pub beta: f64,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            atol: 1e-12,
            rtol: 1e-12,
            max_steps: 5_000_000,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            beta: 0.04,
        }
    }
}

impl Dopri5Options {
    pub fn with_tolerances(atol: f64, rtol: f64) -> Self {
        Dopri5Options { atol, rtol, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Largest normalized error estimate among accepted steps (always <= 1).
    pub max_accepted_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub values: Vec<f64>,
    pub stats: StepStats,
}

/// Integrates `u' = A u + g(t)` from `t = 0` to `t_end`.
///
/// Every accepted step satisfies `|err_i| <= atol + rtol max(|u_i|, |u_new_i|)`
/// componentwise; the last step is clipped to hit `t_end` exactly.
pub fn reference_solve(
    system: &AffineSystem,
    u0: &[f64],
    t_end: f64,
    options: &Dopri5Options,
) -> Result<ReferenceSolution, ReferenceError> {
    integrate_rhs(|t, u, out| system.rhs(t, u, out), u0, 0.0, t_end, options)
}

/// General-purpose driver for `u' = f(t, u)` on `[t0, t_end]`.
pub fn integrate_rhs<F>(
    f: F,
    u0: &[f64],
    t0: f64,
    t_end: f64,
    opt: &Dopri5Options,
) -> Result<ReferenceSolution, ReferenceError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    use tableau::{A, B, B_HAT, C};
    if !(opt.atol >= 1e-14 && opt.rtol >= 1e-14) {
        return Err(ReferenceError::BadTolerance { atol: opt.atol, rtol: opt.rtol });
    }
    let n = u0.len();
    let mut stats = StepStats::default();
    let mut u = u0.to_vec();
    let mut t = t0;
    if t_end <= t0 {
        return Ok(ReferenceSolution { values: u, stats });
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut u_new = vec![0.0; n];
    let e: Vec<f64> = B.iter().zip(B_HAT.iter()).map(|(b, bh)| b - bh).collect();

    f(t, &u, &mut k[0]);
    stats.rhs_evals += 1;
    let mut h = initial_step(&f, t, &u, &k[0], opt, t_end - t0);
    stats.rhs_evals += 1;
    let expo = 0.2 - 0.75 * opt.beta;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= opt.max_steps {
            return Err(ReferenceError::BudgetExceeded { t, budget: opt.max_steps });
        }
        let mut last = false;
        if t + h >= t_end || t + 1.0001 * h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
            return Err(ReferenceError::StepUnderflow { t, h });
        }
        for s in 1..7 {
            stage.copy_from_slice(&u);
            for (j, &a) in A[s].iter().enumerate().take(s) {
                if a != 0.0 {
                    stage.iter_mut().zip(&k[j]).for_each(|(y, kj)| *y += h * a * kj);
                }
            }
            if s == 6 {
                u_new.copy_from_slice(&stage);
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(t + C[s] * h, &stage, &mut tail[0]);
        }
        stats.rhs_evals += 6;
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut ei = 0.0;
            for (s, es) in e.iter().enumerate() {
                if *es != 0.0 {
                    ei += es * k[s][i];
                }
            }
            let sc = opt.atol + opt.rtol * u[i].abs().max(u_new[i].abs());
            err = err.max((h * ei).abs() / sc);
        }
        if !err.is_finite() {
            stats.rejected += 1;
            h *= opt.min_factor;
            last_rejected = true;
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            stats.max_accepted_error = stats.max_accepted_error.max(err);
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut u, &mut u_new);
            k.swap(0, 6);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(ReferenceError::NonFinite { t });
            }
            let mut fac = err.powf(expo) / err_old.powf(opt.beta) / opt.safety;
            fac = fac.clamp(1.0 / opt.max_factor, 1.0 / opt.min_factor);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            err_old = err.max(1e-4);
            last_rejected = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            let fac = (err.powf(0.2) / opt.safety).min(1.0 / opt.min_factor);
            h /= fac;
            last_rejected = true;
        }
    }
    Ok(ReferenceSolution { values: u, stats })
}

/// Starting step from the usual two-derivative estimate.
fn initial_step<F>(f: &F, t: f64, u: &[f64], f0: &[f64], opt: &Dopri5Options, span: f64) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = u.len();
    let sc: Vec<f64> = u.iter().map(|v| opt.atol + opt.rtol * v.abs()).collect();
    let rms = |x: &[f64]| {
        (x.iter().zip(&sc).map(|(v, s)| (v / s) * (v / s)).sum::<f64>() / n.max(1) as f64).sqrt()
    };
    let d0 = rms(u);
    let d1 = rms(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let u1: Vec<f64> = u.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; n];
    f(t + h0, &u1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SparseOperator;

    /// Rooted trees up to order 5 as nested child lists, with elementary
    /// weights checked against `1 / gamma(t)`.
    #[derive(Clone, Debug)]
    struct Tree(Vec<Tree>);

    impl Tree {
        fn order(&self) -> usize {
            1 + self.0.iter().map(Tree::order).sum::<usize>()
        }
        fn gamma(&self) -> f64 {
            self.order() as f64 * self.0.iter().map(Tree::gamma).product::<f64>()
        }
        /// Stage vector `g_i(t) = prod_children (A g(child))_i`.
        fn stage_weights(&self) -> [f64; 7] {
            let mut g = [1.0; 7];
            for child in &self.0 {
                let gc = child.stage_weights();
                for (i, gi) in g.iter_mut().enumerate() {
                    let s: f64 = (0..i.min(6)).map(|j| tableau::A[i][j] * gc[j]).sum();
                    *gi *= s;
                }
            }
            g
        }
    }

    fn trees_of_order(n: usize) -> Vec<Tree> {
        // children multisets of total order n - 1, built from smaller trees in
        // canonical (non-increasing index) order to avoid duplicates
        let mut all: Vec<Vec<Tree>> = vec![vec![]];
        for k in 1..n {
            all.push(trees_of_order(k));
        }
        let mut catalogue: Vec<(usize, Tree)> = Vec::new();
        for (k, ts) in all.iter().enumerate().skip(1) {
            for t in ts {
                catalogue.push((k, t.clone()));
            }
        }
        let mut out = Vec::new();
        fn build(rest: usize, max_idx: usize, cat: &[(usize, Tree)], cur: &mut Vec<Tree>, out: &mut Vec<Tree>) {
            if rest == 0 {
                out.push(Tree(cur.clone()));
                return;
            }
            for i in 0..=max_idx.min(cat.len().saturating_sub(1)) {
                let (k, t) = &cat[i];
                if *k <= rest {
                    cur.push(t.clone());
                    build(rest - k, i, cat, cur, out);
                    cur.pop();
                }
            }
        }
        if n == 1 {
            return vec![Tree(vec![])];
        }
        build(n - 1, catalogue.len().saturating_sub(1), &catalogue, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn tree_counts() {
        let counts: Vec<usize> = (1..=5).map(|n| trees_of_order(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 4, 9]);
    }

    #[test]
    fn order_conditions() {
        for n in 1..=5 {
            for t in trees_of_order(n) {
                let g = t.stage_weights();
                let phi: f64 = tableau::B.iter().zip(g).map(|(b, g)| b * g).sum();
                assert!((phi - 1.0 / t.gamma()).abs() < 1e-14, "order {n}: {t:?}");
                if n <= 4 {
                    let phi_hat: f64 = tableau::B_HAT.iter().zip(g).map(|(b, g)| b * g).sum();
                    assert!((phi_hat - 1.0 / t.gamma()).abs() < 1e-14);
                }
            }
        }
        for (i, row) in tableau::A.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - tableau::C[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn exponential_decay() {
        let sys = AffineSystem::homogeneous(SparseOperator::from_triplets(1, vec![(0, 0, -1.0)]).unwrap());
        let opt = Dopri5Options::with_tolerances(1e-10, 1e-10);
        let sol = reference_solve(&sys, &[1.0], 1.0, &opt).unwrap();
        assert!((sol.values[0] - (-1.0f64).exp()).abs() < 10.0 * opt.rtol);
        assert!(sol.stats.max_accepted_error <= 1.0);
    }

    #[test]
    fn polynomial_forcing_is_integrated_exactly() {
        let sys = AffineSystem::homogeneous(SparseOperator::zeros(1)).with_forcing_fn(|t, _| t);
        let sol = reference_solve(&sys, &[0.0], 0.7, &Dopri5Options::default()).unwrap();
        assert!((sol.values[0] - 0.245).abs() < 1e-14);
    }

    #[test]
    fn tolerance_errors() {
        let sys = AffineSystem::homogeneous(SparseOperator::zeros(1));
        let opt = Dopri5Options::with_tolerances(1e-16, 1e-12);
        assert!(matches!(reference_solve(&sys, &[0.0], 1.0, &opt), Err(ReferenceError::BadTolerance { .. })));
        let opt = Dopri5Options { max_steps: 3, ..Dopri5Options::with_tolerances(1e-12, 1e-12) };
        let stiff = AffineSystem::homogeneous(SparseOperator::from_triplets(1, vec![(0, 0, -1e4)]).unwrap());
        assert!(matches!(reference_solve(&stiff, &[1.0], 1.0, &opt), Err(ReferenceError::BudgetExceeded { .. })));
    }
}
