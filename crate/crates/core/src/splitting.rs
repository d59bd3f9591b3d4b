//! Classical and adapted Lie splitting.
//!
//! Both schemes advance `u' = D u + div(c u) + f` by composing the exact
//! flows of a convection subproblem and a diffusion subproblem, convection
//! first. The adapted scheme splits the face velocity as
//! `c = T_K c + (c - T_K c)`: the convection flow only sees the bounded part,
//! and the remainder, which is small in weak-L^N, is moved into the elliptic
//! operator.

use log::warn;
use thiserror::Error;

use crate::flows::{propagate, FlowError};
use crate::lorentz::{
    delta_threshold, face_samples, geometric_levels, select_truncation_level, truncate_vector, LorentzError,
    TruncationLevel,
};
use crate::mesh::{FaceField, Mesh};
use crate::operators::{
    assemble_elliptic, assemble_upwind_divergence, AffineSystem, BoundaryData, EllipticCoefficients, OperatorError,
    SourceData,
};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
    #[error("truncation level must be positive, got {0}")]
    BadLevel(f64),
    #[error("final time {t_end} is not an integer multiple of the step {tau}")]
    NonIntegerSteps { t_end: f64, tau: f64 },
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("initial state has length {got}, scheme dimension is {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    Classical,
    Adapted,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Classical => "classical",
            SchemeKind::Adapted => "adapted",
        })
    }
}

/// How the adapted scheme picks its truncation level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KPolicy {
    Fixed(f64),
    /// Ten times the median face speed.
    Median10,
    /// Smallest level whose remainder has weak-L^N norm at most
    /// `eta / (2 S_{N,2})`; only defined for `N >= 3`.
    Certified { eta: f64 },
}

/// Number of candidate levels scanned by the certified policy.
const CERTIFIED_LEVELS: usize = 200;

impl KPolicy {
    /// Resolves the policy for `velocity` on `mesh`.
    pub fn resolve(&self, mesh: &Mesh, velocity: &FaceField) -> Result<TruncationLevel, SplitError> {
        let level = |k: f64| -> Result<TruncationLevel, SplitError> {
            if !(k > 0.0) || !k.is_finite() {
                return Err(SplitError::BadLevel(k));
            }
            let mags = face_samples(velocity, mesh).magnitude();
            let d = crate::lorentz::distance_to_bounded(&mags, mesh.dim(), &[k])?;
            Ok(TruncationLevel { k, delta: d.value, certified: false })
        };
        match *self {
            KPolicy::Fixed(k) => level(k),
            KPolicy::Median10 => level(10.0 * velocity.median_magnitude()),
            KPolicy::Certified { eta } => {
                let delta = delta_threshold(eta, mesh.dim())?;
                let mags = face_samples(velocity, mesh).magnitude();
                let top = velocity.max_magnitude();
                if top == 0.0 {
                    return Ok(TruncationLevel { k: 1.0, delta: 0.0, certified: true });
                }
                let lo = (1e-3 * top).min(velocity.median_magnitude().max(1e-12 * top));
                let grid = geometric_levels(lo, top, CERTIFIED_LEVELS);
                Ok(select_truncation_level(&mags, mesh.dim(), delta, &grid)?)
            }
        }
    }
}

/// `(T_K c, c - T_K c)` face by face.
pub fn decompose_convection(c: &FaceField, k: f64) -> Result<(FaceField, FaceField), SplitError> {
    if !(k > 0.0) {
        return Err(SplitError::BadLevel(k));
    }
    let bounded = c.map(|v, out| {
        out.copy_from_slice(v);
        truncate_vector(out, k);
    });
    let remainder = c.sub(&bounded);
    Ok((bounded, remainder))
}

/// Problem data shared by both schemes.
#[derive(Clone)]
pub struct Problem {
    pub mesh: Mesh,
    pub coeffs: EllipticCoefficients,
    pub velocity: FaceField,
    /// Dirichlet data; its inflow restriction feeds the convection flow.
    pub boundary: BoundaryData,
    pub source: Option<SourceData>,
}

impl Problem {
    /// The unsplit semi-discrete system.
    pub fn full_system(&self) -> Result<AffineSystem, SplitError> {
        let d = self.diffusion_system(None)?;
        let c = assemble_upwind_divergence(&self.mesh, &self.velocity, &self.boundary)?;
        Ok(c.combine(&d)?)
    }

    fn diffusion_system(&self, remainder: Option<&FaceField>) -> Result<AffineSystem, SplitError> {
        let mut d = assemble_elliptic(&self.mesh, &self.coeffs, &self.boundary)?;
        if let Some(rem) = remainder {
            let r = assemble_upwind_divergence(&self.mesh, rem, &self.boundary)?;
            d = d.combine(&r)?;
        }
        if let Some(f) = &self.source {
            d = d.with_source(&self.mesh, f)?;
        }
        Ok(d)
    }
}

/// The two subflow systems of one splitting scheme.
#[derive(Debug, Clone)]
pub struct SplitScheme {
    pub kind: SchemeKind,
    pub convection: AffineSystem,
    pub diffusion: AffineSystem,
    /// Velocity seen by the convection flow.
    pub convection_velocity: FaceField,
    /// Velocity absorbed into the diffusion flow (zero for classical).
    pub remainder_velocity: FaceField,
    pub level: Option<TruncationLevel>,
    pub tol: f64,
}

impl SplitScheme {
    pub fn dim(&self) -> usize {
        self.convection.dim()
    }
}

/// Default inner tolerance of the subflow propagators.
pub const DEFAULT_SUBFLOW_TOL: f64 = 1e-10;

/// Assembles the subflow systems. For the adapted scheme `policy` fixes `K`;
/// an uncertified level is logged but not rejected.
pub fn build_scheme(
    kind: SchemeKind,
    problem: &Problem,
    policy: &KPolicy,
    tol: f64,
) -> Result<SplitScheme, SplitError> {
    let mesh = &problem.mesh;
    match kind {
        SchemeKind::Classical => Ok(SplitScheme {
            kind,
            convection: assemble_upwind_divergence(mesh, &problem.velocity, &problem.boundary)?,
            diffusion: problem.diffusion_system(None)?,
            convection_velocity: problem.velocity.clone(),
            remainder_velocity: FaceField::zeros(mesh),
            level: None,
            tol,
        }),
        SchemeKind::Adapted => {
            let level = policy.resolve(mesh, &problem.velocity)?;
            if matches!(policy, KPolicy::Certified { .. }) && !level.certified {
                warn!(
                    "no level certifies the remainder bound; using K = {} with remainder {:.3e}",
                    level.k, level.delta
                );
            }
            let (bounded, remainder) = decompose_convection(&problem.velocity, level.k)?;
            Ok(SplitScheme {
                kind,
                convection: assemble_upwind_divergence(mesh, &bounded, &problem.boundary)?,
                diffusion: problem.diffusion_system(Some(&remainder))?,
                convection_velocity: bounded,
                remainder_velocity: remainder,
                level: Some(level),
                tol,
            })
        }
    }
}

/// `u_{n+1} = phi_tau^{D,f}(phi_tau^C(u_n))`.
pub fn lie_step(scheme: &SplitScheme, u: &[f64], t: f64, tau: f64) -> Result<Vec<f64>, SplitError> {
    let w = propagate(&scheme.convection, u, t, tau, scheme.tol)?;
    Ok(propagate(&scheme.diffusion, &w, t, tau, scheme.tol)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: SchemeKind,
    pub tau: f64,
    pub times: Vec<f64>,
    /// Either every state `u_0, ..., u_N` or only the final one.
    pub states: Vec<Vec<f64>>,
    /// Smallest entry over all computed states.
    pub min_value: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least one state")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Number of steps of size `tau` covering `[0, t_end]`, if it is an integer.
pub fn step_count(t_end: f64, tau: f64) -> Result<usize, SplitError> {
    let bad = SplitError::NonIntegerSteps { t_end, tau };
    if !(tau > 0.0) || !(t_end > 0.0) {
        return Err(bad);
    }
    let n = (t_end / tau).round();
    if n < 1.0 || (n * tau - t_end).abs() > 1e-9 * t_end {
        return Err(bad);
    }
    Ok(n as usize)
}

/// Runs `T / tau` Lie steps from `u0` at `t = 0`.
pub fn integrate(
    scheme: &SplitScheme,
    u0: &[f64],
    t_end: f64,
    tau: f64,
    keep_states: bool,
) -> Result<Trajectory, SplitError> {
    if u0.len() != scheme.dim() {
        return Err(SplitError::LengthMismatch { expected: scheme.dim(), got: u0.len() });
    }
    let n = step_count(t_end, tau)?;
    let mut times = vec![0.0];
    let mut states = vec![u0.to_vec()];
    let mut u = u0.to_vec();
    let mut min_value = u.iter().copied().fold(f64::INFINITY, f64::min);
    for i in 0..n {
        let t = i as f64 * tau;
        u = lie_step(scheme, &u, t, tau)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(SplitError::NonFinite { t: t + tau });
        }
        min_value = u.iter().copied().fold(min_value, f64::min);
        times.push((i + 1) as f64 * tau);
        if keep_states {
            states.push(u.clone());
        }
    }
    if !keep_states {
        states = vec![u];
    }
    Ok(Trajectory { kind: scheme.kind, tau, times, states, min_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SparseOperator;

    fn face(mesh: &Mesh, f: impl Fn(&[f64], &mut [f64])) -> FaceField {
        FaceField::from_fn(mesh, f).unwrap()
    }

    fn singular_problem(n: usize) -> Problem {
        let mesh = Mesh::uniform(2, -0.5, 1.0, n).unwrap();
        let velocity = face(&mesh, |x, v| {
            let c = 1.0 / x[0].abs() + 1.0 / x[1].abs();
            v[0] = c;
            v[1] = c;
        });
        Problem {
            mesh,
            coeffs: EllipticCoefficients::Isotropic { nu: 0.01 },
            velocity,
            boundary: BoundaryData::constant(1.0),
            source: None,
        }
    }

    #[test]
    fn decomposition_examples() {
        let mesh = Mesh::uniform(2, 0.0, 1.0, 3).unwrap();
        let c = face(&mesh, |_, v| {
            v[0] = 6.0;
            v[1] = 8.0;
        });
        let (b, r) = decompose_convection(&c, 5.0).unwrap();
        assert!(b.iter_vectors().all(|v| v == [3.0, 4.0]));
        assert!(r.iter_vectors().all(|v| v == [3.0, 4.0]));
        let (b, r) = decompose_convection(&c, 10.0).unwrap();
        assert_eq!(b, c);
        assert_eq!(r.max_magnitude(), 0.0);
        assert!(decompose_convection(&c, 0.0).is_err());
    }

    #[test]
    fn adapted_scheme_invariants() {
        let p = singular_problem(24);
        let s = build_scheme(SchemeKind::Adapted, &p, &KPolicy::Median10, 1e-10).unwrap();
        let k = s.level.unwrap().k;
        assert!(s.convection_velocity.iter_vectors().all(|v| crate::mesh::norm(v) <= k * (1.0 + 1e-15)));
        let back = s.convection_velocity.map(|v, o| o.copy_from_slice(v));
        let sum: Vec<f64> = back
            .iter_vectors()
            .zip(s.remainder_velocity.iter_vectors())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
            .collect();
        let orig: Vec<f64> = p.velocity.iter_vectors().flatten().copied().collect();
        assert!(sum.iter().zip(&orig).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0)));
    }

    #[test]
    fn large_level_reproduces_classical_systems() {
        let p = singular_problem(24);
        let k = 2.0 * p.velocity.max_magnitude();
        let a = build_scheme(SchemeKind::Adapted, &p, &KPolicy::Fixed(k), 1e-10).unwrap();
        let c = build_scheme(SchemeKind::Classical, &p, &KPolicy::Fixed(k), 1e-10).unwrap();
        assert!(a.convection.operator().max_abs_diff(c.convection.operator()) <= 1e-12);
        assert!(a.diffusion.operator().max_abs_diff(c.diffusion.operator()) <= 1e-12);
        let (ga, gc) = (a.diffusion.boundary_injection(0.0), c.diffusion.boundary_injection(0.0));
        assert!(ga.iter().zip(&gc).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn split_operators_sum_to_full_operator() {
        let p = singular_problem(24);
        let full = p.full_system().unwrap();
        for kind in [SchemeKind::Classical, SchemeKind::Adapted] {
            let s = build_scheme(kind, &p, &KPolicy::Median10, 1e-10).unwrap();
            let sum = s.convection.combine(&s.diffusion).unwrap();
            let scale = full.operator().norm1();
            assert!(sum.operator().max_abs_diff(full.operator()) <= 1e-12 * scale);
            let (a, b) = (sum.boundary_injection(0.0), full.boundary_injection(0.0));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12 * scale));
        }
    }

    #[test]
    fn zero_operators_keep_the_state() {
        let sys = AffineSystem::homogeneous(SparseOperator::zeros(3));
        let s = SplitScheme {
            kind: SchemeKind::Classical,
            convection: sys.clone(),
            diffusion: sys,
            convection_velocity: FaceField::zeros(&Mesh::uniform(2, 0.0, 1.0, 3).unwrap()),
            remainder_velocity: FaceField::zeros(&Mesh::uniform(2, 0.0, 1.0, 3).unwrap()),
            level: None,
            tol: 1e-10,
        };
        assert_eq!(lie_step(&s, &[1.0, -2.0, 3.0], 0.0, 0.5).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn commuting_flows_are_split_exactly() {
        let ident = |a: f64| SparseOperator::from_triplets(2, vec![(0, 0, a), (1, 1, a)]).unwrap();
        let mesh = Mesh::uniform(2, 0.0, 1.0, 3).unwrap();
        let s = SplitScheme {
            kind: SchemeKind::Classical,
            convection: AffineSystem::homogeneous(ident(-0.7)),
            diffusion: AffineSystem::homogeneous(ident(0.3)),
            convection_velocity: FaceField::zeros(&mesh),
            remainder_velocity: FaceField::zeros(&mesh),
            level: None,
            tol: 1e-12,
        };
        let u = lie_step(&s, &[1.0, 2.0], 0.0, 0.5).unwrap();
        let e = (-0.2f64).exp();
        assert!((u[0] - e).abs() < 1e-12 && (u[1] - 2.0 * e).abs() < 1e-12);
    }

    #[test]
    fn step_counts() {
        assert_eq!(step_count(0.1, 0.1).unwrap(), 1);
        assert_eq!(step_count(0.1, 1.0 / 160.0).unwrap(), 16);
        assert!(matches!(step_count(0.1, 0.03), Err(SplitError::NonIntegerSteps { .. })));
        assert!(step_count(0.1, 0.0).is_err());
    }

    #[test]
    fn zero_velocity_reduces_to_diffusion() {
        let mut p = singular_problem(9);
        p.velocity = FaceField::zeros(&p.mesh);
        p.boundary = BoundaryData::homogeneous();
        for kind in [SchemeKind::Classical, SchemeKind::Adapted] {
            let s = build_scheme(kind, &p, &KPolicy::Fixed(1.0), 1e-10).unwrap();
            assert_eq!(s.convection.operator().nnz(), 0);
            let u0: Vec<f64> = (0..p.mesh.len()).map(|k| (k as f64).sin()).collect();
            let w = propagate(&s.convection, &u0, 0.0, 0.1, 1e-10).unwrap();
            assert_eq!(w, u0);
        }
    }

    #[test]
    fn certified_policy_needs_three_dimensions() {
        let p = singular_problem(9);
        let err = build_scheme(SchemeKind::Adapted, &p, &KPolicy::Certified { eta: 0.01 }, 1e-10).unwrap_err();
        assert!(matches!(err, SplitError::Lorentz(LorentzError::UnsupportedDimension(2))));
    }
}
