//! Lorentz-space numerics on sampled functions.
//!
//! A [`SampledFunction`] is a piecewise-constant function: sample `i` takes
//! the value `values[i]` on a cell of measure `weights[i]`. Its distribution
//! function is a step function, so every norm below is evaluated exactly
//! segment by segment over the sorted distinct magnitudes.

use std::f64::consts::PI;

use thiserror::Error;

use crate::mesh::{Mesh, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LorentzError {
    #[error("values and weights differ in length ({values} vs {weights})")]
    LengthMismatch { values: usize, weights: usize },
    #[error("sample {index} has a negative or non-finite weight {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("sample {index} has non-finite value {value}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("total measure must be positive")]
    EmptyDomain,
    #[error("invalid Lorentz exponents p = {p}, q = {q}")]
    BadExponents { p: f64, q: f64 },
    #[error("q = infinity is the weak norm; use weak_norm")]
    InfiniteQ,
    #[error("truncation level grid must be nonempty, positive and ascending")]
    BadLevelGrid,
    #[error("truncation level must be positive, got {0}")]
    BadLevel(f64),
    #[error("Sobolev constant needs 1 < p < N (N = {n}, p = {p})")]
    SobolevRange { n: usize, p: f64 },
    #[error("delta threshold is undefined for N = {0}; configure K or delta explicitly")]
    UnsupportedDimension(usize),
    #[error("eta must be positive, got {0}")]
    BadEta(f64),
}

/// Scalar samples with cell measures.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    values: Vec<f64>,
    weights: Vec<f64>,
    total_measure: f64,
}

impl SampledFunction {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<SampledFunction, LorentzError> {
        if values.len() != weights.len() {
            return Err(LorentzError::LengthMismatch { values: values.len(), weights: weights.len() });
        }
        for (index, (&value, &weight)) in values.iter().zip(&weights).enumerate() {
            if !value.is_finite() {
                return Err(LorentzError::NonFiniteValue { index, value });
            }
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(LorentzError::BadWeight { index, weight });
            }
        }
        let total_measure: f64 = weights.iter().sum();
        if !(total_measure > 0.0) {
            return Err(LorentzError::EmptyDomain);
        }
        Ok(SampledFunction { values, weights, total_measure })
    }

    /// Samples `f` on `grid`.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &SamplingGrid, f: F) -> Result<SampledFunction, LorentzError> {
        let values = grid.points().map(f).collect();
        SampledFunction::new(values, grid.weights.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SampledFunction {
        SampledFunction {
            values: self.values.iter().map(|&v| f(v)).collect(),
            weights: self.weights.clone(),
            total_measure: self.total_measure,
        }
    }

    /// `sum_i w_i |g_i|`.
    pub fn integral_abs(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v.abs() * w).sum()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn profile(&self) -> Profile {
        Profile::new(self.values.iter().map(|v| v.abs()), &self.weights)
    }
}

/// Vector samples (`dim` components per sample) with cell measures.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSampledFunction {
    dim: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    total_measure: f64,
}

impl VectorSampledFunction {
    pub fn new(dim: usize, values: Vec<f64>, weights: Vec<f64>) -> Result<VectorSampledFunction, LorentzError> {
        if dim == 0 || values.len() != dim * weights.len() {
            return Err(LorentzError::LengthMismatch { values: values.len(), weights: weights.len() });
        }
        let scalar = SampledFunction::new(
            values.chunks(dim).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect(),
            weights,
        )?;
        Ok(VectorSampledFunction {
            dim,
            values,
            weights: scalar.weights,
            total_measure: scalar.total_measure,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> SampledFunction {
        SampledFunction {
            values: self.values.chunks(self.dim).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect(),
            weights: self.weights.clone(),
            total_measure: self.total_measure,
        }
    }
}

/// Exponents of `L^{p,q}` together with the space dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzParams {
    pub p: f64,
    /// `f64::INFINITY` selects the weak space.
    pub q: f64,
    pub n: usize,
}

impl LorentzParams {
    pub fn new(p: f64, q: f64, n: usize) -> Result<LorentzParams, LorentzError> {
        if !(p > 1.0) || !p.is_finite() || !(q > 1.0) || q.is_nan() || n < 2 {
            return Err(LorentzError::BadExponents { p, q });
        }
        Ok(LorentzParams { p, q, n })
    }
}

/// A truncation level and the weak norm of the remainder it leaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationLevel {
    pub k: f64,
    pub delta: f64,
    /// Whether `delta` met the requested threshold.
    pub certified: bool,
}

/// Distinct magnitudes `a_0 > a_1 > ...` with `W_k = |{|g| >= a_k}|`.
struct Profile {
    levels: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Profile {
    fn new(mags: impl Iterator<Item = f64>, weights: &[f64]) -> Profile {
        let mut pairs: Vec<(f64, f64)> = mags.zip(weights.iter().copied()).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut levels: Vec<f64> = Vec::new();
        let mut cumulative: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (a, w) in pairs {
            acc += w;
            if levels.last() == Some(&a) {
                *cumulative.last_mut().unwrap() = acc;
            } else {
                levels.push(a);
                cumulative.push(acc);
            }
        }
        Profile { levels, cumulative }
    }

    /// `(a_k, W_k)` with the zero level dropped.
    fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.levels.iter().copied().zip(self.cumulative.iter().copied()).filter(|&(a, _)| a > 0.0)
    }

    /// Weak norm of `(|g| - k)_+`.
    fn weak_remainder(&self, p: f64, k: f64) -> f64 {
        self.steps()
            .take_while(|&(a, _)| a > k)
            .map(|(a, w)| (a - k) * w.powf(1.0 / p))
            .fold(0.0, f64::max)
    }
}

/// `lambda_g(h) = |{x : |g(x)| > h}|`.
pub fn distribution_function(g: &SampledFunction, h: f64) -> f64 {
    g.values.iter().zip(&g.weights).filter(|(v, _)| v.abs() > h).map(|(_, w)| w).sum()
}

/// `(p int_0^inf lambda_g(h)^{q/p} h^{q-1} dh)^{1/q}`, integrated exactly on
/// each interval where `lambda_g` is constant.
pub fn lorentz_norm(g: &SampledFunction, params: &LorentzParams) -> Result<f64, LorentzError> {
    let (p, q) = (params.p, params.q);
    if q.is_infinite() {
        return Err(LorentzError::InfiniteQ);
    }
    let prof = g.profile();
    let mut steps = prof.steps().peekable();
    let mut total = 0.0;
    while let Some((a, w)) = steps.next() {
        let next = steps.peek().map_or(0.0, |s| s.0);
        total += w.powf(q / p) * (a.powf(q) - next.powf(q));
    }
    Ok((p / q * total).powf(1.0 / q))
}

/// `sup_h h lambda_g(h)^{1/p}`.
///
/// On a step distribution function the supremum over each interval
/// `[a_{k+1}, a_k)` is approached at its right end, so the exact value is
/// `max_k a_k W_k^{1/p}`.
pub fn weak_norm(g: &SampledFunction, p: f64) -> f64 {
    g.profile().steps().map(|(a, w)| a * w.powf(1.0 / p)).fold(0.0, f64::max)
}

/// `T_K(s) = sign(s) min(|s|, K)`.
#[inline]
pub fn truncate(s: f64, k: f64) -> f64 {
    s.clamp(-k, k)
}

/// Magnitude truncation `v min(1, K/|v|)` of a vector.
pub fn truncate_vector(v: &mut [f64], k: f64) {
    let m = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if m > k {
        let s = k / m;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Applies [`truncate_vector`] to every sample.
pub fn truncate_field(v: &VectorSampledFunction, k: f64) -> Result<VectorSampledFunction, LorentzError> {
    if !(k > 0.0) {
        return Err(LorentzError::BadLevel(k));
    }
    let mut out = v.clone();
    out.values.chunks_mut(v.dim).for_each(|c| truncate_vector(c, k));
    Ok(out)
}

/// Weak-`L^N` norms of `g - T_K g` along an ascending level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimate {
    /// Value at the largest level.
    pub value: f64,
    pub levels: Vec<f64>,
    pub remainders: Vec<f64>,
}

fn check_grid(k_grid: &[f64]) -> Result<(), LorentzError> {
    let ok = !k_grid.is_empty()
        && k_grid.iter().all(|k| *k > 0.0 && k.is_finite())
        && k_grid.windows(2).all(|w| w[0] < w[1]);
    ok.then_some(()).ok_or(LorentzError::BadLevelGrid)
}

/// `||g - T_K g||_{N,inf}` for every `K` in `k_grid`; the last entry
/// approximates the distance from `g` to `L^inf` in `L^{N,inf}`.
pub fn distance_to_bounded(g: &SampledFunction, n: usize, k_grid: &[f64]) -> Result<DistanceEstimate, LorentzError> {
    check_grid(k_grid)?;
    let prof = g.profile();
    let p = n as f64;
    let remainders: Vec<f64> = k_grid.iter().map(|&k| prof.weak_remainder(p, k)).collect();
    Ok(DistanceEstimate { value: *remainders.last().unwrap(), levels: k_grid.to_vec(), remainders })
}

/// Unit-ball volume `pi^{N/2} / Gamma(N/2 + 1)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    // Gamma(N/2 + 1) by the half-integer recursion
    let mut gamma = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() / 2.0 };
    let mut x = if n.is_multiple_of(2) { 1.0 } else { 1.5 };
    while x < n as f64 / 2.0 + 1.0 - 1e-9 {
        gamma *= x;
        x += 1.0;
    }
    PI.powf(n as f64 / 2.0) / gamma
}

/// `S_{N,p} = omega_N^{-1/N} p / (N - p)`.
pub fn sobolev_constant(n: usize, p: f64) -> Result<f64, LorentzError> {
    if n < 2 || !(p > 1.0) || !(p < n as f64) {
        return Err(LorentzError::SobolevRange { n, p });
    }
    Ok(unit_ball_volume(n).powf(-1.0 / n as f64) * p / (n as f64 - p))
}

/// `delta = eta / (2 S_{N,2})`, the remainder bound that keeps the
/// modified diffusion operator elliptic with constant `eta / 2`.
pub fn delta_threshold(eta: f64, n: usize) -> Result<f64, LorentzError> {
    if !(eta > 0.0) {
        return Err(LorentzError::BadEta(eta));
    }
    if n < 3 {
        return Err(LorentzError::UnsupportedDimension(n));
    }
    Ok(eta / (2.0 * sobolev_constant(n, 2.0)?))
}

/// Smallest `K` in `k_grid` whose remainder weak-`L^N` norm is at most
/// `delta`. If none qualifies the largest level is returned uncertified.
pub fn select_truncation_level(
    c: &SampledFunction,
    n: usize,
    delta: f64,
    k_grid: &[f64],
) -> Result<TruncationLevel, LorentzError> {
    let dist = distance_to_bounded(c, n, k_grid)?;
    let pick = dist.remainders.iter().position(|&r| r <= delta);
    Ok(match pick {
        Some(i) => TruncationLevel { k: k_grid[i], delta: dist.remainders[i], certified: true },
        None => TruncationLevel { k: *k_grid.last().unwrap(), delta: dist.value, certified: false },
    })
}

/// `count` logarithmically spaced levels from `lo` to `hi`.
pub fn geometric_levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (r * i as f64).exp()).collect()
}

/// Sample points with cell measures.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

/// Ratio between consecutive ring radii of the graded grids.
const RING_RATIO: f64 = 1.01;

impl SamplingGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Cell-centred `m x m` grid of the unit square.
    pub fn unit_square(m: usize) -> SamplingGrid {
        let h = 1.0 / m as f64;
        let mut coords = Vec::with_capacity(2 * m * m);
        for j in 0..m {
            for i in 0..m {
                coords.extend_from_slice(&[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        SamplingGrid { dim: 2, coords, weights: vec![h * h; m * m] }
    }

    /// Interior nodes of `mesh`, each carrying one cell volume.
    pub fn from_mesh(mesh: &Mesh) -> SamplingGrid {
        let dim = mesh.dim();
        let mut coords = Vec::with_capacity(dim * mesh.len());
        for k in 0..mesh.len() {
            coords.extend_from_slice(&mesh.node_point(k)[..dim]);
        }
        SamplingGrid { dim, coords, weights: vec![mesh.cell_volume(); mesh.len()] }
    }

    /// Polar grid of the unit disk, geometrically graded towards the origin
    /// so that radial singularities are resolved down to radius `r_min`.
    ///
    /// Ring `[r_i, r_{i+1}]` is split into `sectors` equal sectors, each
    /// sampled at the geometric-mean radius; the central disk of radius
    /// `r_min` is one cell sampled on its rim, so a decreasing radial profile
    /// is never overestimated there. Cell measures are exact.
    pub fn unit_disk(r_min: f64, sectors: usize) -> SamplingGrid {
        let radii = graded_radii(r_min);
        let mut coords = vec![r_min, 0.0];
        let mut weights = vec![PI * r_min * r_min];
        for w in radii.windows(2) {
            let rm = (w[0] * w[1]).sqrt();
            let area = PI * (w[1] * w[1] - w[0] * w[0]) / sectors as f64;
            for s in 0..sectors {
                let phi = 2.0 * PI * (s as f64 + 0.5) / sectors as f64;
                coords.extend_from_slice(&[rm * phi.cos(), rm * phi.sin()]);
                weights.push(area);
            }
        }
        SamplingGrid { dim: 2, coords, weights }
    }

    /// Shell grid of the unit ball in three dimensions with the same radial
    /// grading as [`SamplingGrid::unit_disk`]; each shell is split into
    /// `bands` polar bands of equal area times `sectors` azimuthal sectors.
    pub fn unit_ball(r_min: f64, bands: usize, sectors: usize) -> SamplingGrid {
        let radii = graded_radii(r_min);
        let mut coords = vec![r_min, 0.0, 0.0];
        let mut weights = vec![4.0 / 3.0 * PI * r_min.powi(3)];
        let cells = (bands * sectors) as f64;
        for w in radii.windows(2) {
            let rm = (w[0] * w[1]).sqrt();
            let vol = 4.0 / 3.0 * PI * (w[1].powi(3) - w[0].powi(3)) / cells;
            for b in 0..bands {
                // equal-area bands: cos(theta) uniform in [-1, 1]
                let z = -1.0 + 2.0 * (b as f64 + 0.5) / bands as f64;
                let rho = (1.0 - z * z).sqrt();
                for s in 0..sectors {
                    let phi = 2.0 * PI * (s as f64 + 0.5) / sectors as f64;
                    coords.extend_from_slice(&[rm * rho * phi.cos(), rm * rho * phi.sin(), rm * z]);
                    weights.push(vol);
                }
            }
        }
        SamplingGrid { dim: 3, coords, weights }
    }
}

fn graded_radii(r_min: f64) -> Vec<f64> {
    let rings = ((1.0 / r_min).ln() / RING_RATIO.ln()).ceil() as usize;
    let ratio = (1.0 / r_min).powf(1.0 / rings as f64);
    let mut radii: Vec<f64> = (0..=rings).map(|i| r_min * ratio.powi(i as i32)).collect();
    *radii.last_mut().unwrap() = 1.0;
    radii
}

/// Face velocities of `mesh` as vector samples, each face carrying one
/// cell volume.
pub fn face_samples(velocity: &crate::mesh::FaceField, mesh: &Mesh) -> VectorSampledFunction {
    let dim = velocity.dim();
    let values: Vec<f64> = velocity.iter_vectors().flat_map(|v| v.iter().copied()).collect();
    let weights = vec![mesh.cell_volume(); values.len() / dim];
    VectorSampledFunction::new(dim, values, weights).expect("face velocities are finite")
}

/// Convenience for tests and the command line: the radial field `M / |x|`.
pub fn inverse_radius(m: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| {
        let r = x.iter().take(MAX_DIM).map(|v| v * v).sum::<f64>().sqrt();
        m / r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant(c: f64, m: f64) -> SampledFunction {
        SampledFunction::new(vec![c; 4], vec![m / 4.0; 4]).unwrap()
    }

    #[test]
    fn distribution_of_constant() {
        let g = constant(3.0, 1.0);
        assert_eq!(distribution_function(&g, 2.0), 1.0);
        assert_eq!(distribution_function(&g, 4.0), 0.0);
        assert_eq!(distribution_function(&g, 3.0), 0.0);
    }

    #[test]
    fn distribution_of_inverse_radius() {
        let grid = SamplingGrid::unit_disk(1e-6, 8);
        let g = SampledFunction::from_fn(&grid, inverse_radius(1.0)).unwrap();
        assert!((g.total_measure() - PI).abs() < 1e-12 * PI);
        let lam = distribution_function(&g, 2.0);
        assert!((lam / (PI / 4.0) - 1.0).abs() < 0.02, "{lam}");
    }

    #[test]
    fn norms_of_constants() {
        let g = constant(2.0, 3.0);
        let pq = LorentzParams::new(2.5, 2.5, 3).unwrap();
        assert!((lorentz_norm(&g, &pq).unwrap() - 2.0 * 3f64.powf(0.4)).abs() < 1e-12);
        assert!((weak_norm(&g, 2.0) - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        let inf = LorentzParams::new(2.0, f64::INFINITY, 2).unwrap();
        assert_eq!(lorentz_norm(&g, &inf), Err(LorentzError::InfiniteQ));
    }

    #[test]
    fn scaled_indicator() {
        let g = SampledFunction::new(vec![5.0, 0.0, 5.0], vec![0.1, 0.6, 0.2]).unwrap();
        assert!((weak_norm(&g, 3.0) - 5.0 * 0.3f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate(5.0, 2.0), 2.0);
        assert_eq!(truncate(-5.0, 2.0), -2.0);
        assert_eq!(truncate(1.0, 2.0), 1.0);
        assert_eq!(truncate(0.0, 2.0), 0.0);
        let v = VectorSampledFunction::new(2, vec![3.0, 4.0, 6.0, 8.0], vec![1.0, 1.0]).unwrap();
        let t = truncate_field(&v, 5.0).unwrap();
        assert_eq!(t.vector(0), &[3.0, 4.0]);
        assert_eq!(t.vector(1), &[3.0, 4.0]);
        assert_eq!(truncate_field(&v, 10.0).unwrap(), v);
        assert!(truncate_field(&v, 0.0).is_err());
    }

    #[test]
    fn sobolev_constants() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
        let s32 = sobolev_constant(3, 2.0).unwrap();
        assert!((s32 - 2.0 * (4.0 * PI / 3.0).powf(-1.0 / 3.0)).abs() < 1e-14);
        assert!((s32 - 1.2407).abs() < 1e-4);
        assert!((sobolev_constant(3, 1.5).unwrap() - 0.6204).abs() < 1e-4);
        assert!(sobolev_constant(2, 2.0).is_err());
        assert!((delta_threshold(1.0, 3).unwrap() - 0.4030).abs() < 1e-4);
        assert!((delta_threshold(2.0, 3).unwrap() - 0.8060).abs() < 1e-4);
        assert_eq!(delta_threshold(1.0, 2), Err(LorentzError::UnsupportedDimension(2)));
    }

    #[test]
    fn distance_of_bounded_function_vanishes() {
        let g = SampledFunction::new(vec![1.0, -7.0, 3.0], vec![0.2, 0.3, 0.5]).unwrap();
        let d = distance_to_bounded(&g, 2, &[1.0, 2.0, 7.0]).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.remainders.windows(2).all(|w| w[1] <= w[0]));
        let lvl = select_truncation_level(&g, 3, 0.0, &[1.0, 2.0, 8.0, 9.0]).unwrap();
        assert_eq!((lvl.k, lvl.delta, lvl.certified), (8.0, 0.0, true));
        let lvl = select_truncation_level(&g, 3, 1e9, &[1.0, 2.0, 8.0]).unwrap();
        assert_eq!(lvl.k, 1.0);
        assert!(distance_to_bounded(&g, 2, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn uncertified_selection_takes_largest_level() {
        let g = SampledFunction::new(vec![100.0, 1.0], vec![0.5, 0.5]).unwrap();
        let lvl = select_truncation_level(&g, 3, 1e-3, &[1.0, 10.0]).unwrap();
        assert!(!lvl.certified);
        assert_eq!(lvl.k, 10.0);
        assert!((lvl.delta - 90.0 * 0.5f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn inverse_radius_weak_norm_and_distance_2d() {
        let grid = SamplingGrid::unit_disk(1e-12, 16);
        for m in [1.0, 2.5] {
            let g = SampledFunction::from_fn(&grid, inverse_radius(m)).unwrap();
            let exact = m * PI.sqrt();
            assert!((weak_norm(&g, 2.0) / exact - 1.0).abs() < 0.05);
            let d = distance_to_bounded(&g, 2, &geometric_levels(1.0, 1e3, 7)).unwrap();
            assert!((d.value / exact - 1.0).abs() < 0.05, "{}", d.value);
        }
    }

    #[test]
    fn inverse_radius_weak_norm_3d() {
        let grid = SamplingGrid::unit_ball(1e-12, 4, 4);
        assert!((grid.total_measure() / unit_ball_volume(3) - 1.0).abs() < 1e-12);
        let g = SampledFunction::from_fn(&grid, inverse_radius(1.0)).unwrap();
        let exact = unit_ball_volume(3).cbrt();
        assert!((weak_norm(&g, 3.0) / exact - 1.0).abs() < 0.05);
        let d = distance_to_bounded(&g, 3, &[1e3]).unwrap();
        assert!((d.value / exact - 1.0).abs() < 0.05);
    }

    #[test]
    fn bounded_perturbation_keeps_the_distance() {
        let grid = SamplingGrid::unit_disk(1e-12, 16);
        let pure = SampledFunction::from_fn(&grid, inverse_radius(1.0)).unwrap();
        let pert = SampledFunction::from_fn(&grid, |x| 1.0 / x[0].hypot(x[1]) + 3.0 * (5.0 * x[0]).sin() + 2.0).unwrap();
        let levels = [1e3];
        let a = distance_to_bounded(&pure, 2, &levels).unwrap().value;
        let b = distance_to_bounded(&pert, 2, &levels).unwrap().value;
        assert!((b / a - 1.0).abs() < 0.05);
    }

    fn random_field() -> impl Strategy<Value = SampledFunction> {
        (1usize..40).prop_flat_map(|n| {
            (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(0.01f64..1.0, n))
                .prop_map(|(v, w)| SampledFunction::new(v, w).unwrap())
        })
    }

    proptest! {
        #[test]
        fn truncation_is_idempotent(s in -1e6f64..1e6, k in 1e-6f64..1e6) {
            prop_assert_eq!(truncate(truncate(s, k), k), truncate(s, k));
        }

        #[test]
        fn truncation_is_lipschitz(s in -1e3f64..1e3, t in -1e3f64..1e3, k in 1e-3f64..1e3) {
            prop_assert!((truncate(s, k) - truncate(t, k)).abs() <= (s - t).abs());
        }

        #[test]
        fn vector_truncation_bounds(v in prop::collection::vec(-100.0f64..100.0, 3), k in 0.1f64..50.0) {
            let mut w = v.clone();
            truncate_vector(&mut w, k);
            let m = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(m <= k * (1.0 + 1e-15));
            let mv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if mv <= k {
                prop_assert_eq!(w, v);
            }
        }

        #[test]
        fn distribution_is_non_increasing(g in random_field(), h1 in 0.0f64..12.0, dh in 0.0f64..5.0) {
            prop_assert!(distribution_function(&g, h1 + dh) <= distribution_function(&g, h1));
        }

        #[test]
        fn diagonal_lorentz_norm_is_lebesgue(g in random_field(), p in 1.1f64..6.0) {
            let direct: f64 = g.values().iter().zip(g.weights()).map(|(v, w)| w * v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
            let l = lorentz_norm(&g, &LorentzParams::new(p, p, 3).unwrap()).unwrap();
            prop_assert!((l - direct).abs() <= 1e-10 * direct.max(1e-300));
        }

        #[test]
        fn remainder_weak_norm_is_monotone_in_k(g in random_field(), n in 2usize..4) {
            let d = distance_to_bounded(&g, n, &geometric_levels(0.01, 20.0, 25)).unwrap();
            prop_assert!(d.remainders.windows(2).all(|w| w[1] <= w[0]));
            prop_assert_eq!(d.value, 0.0);
        }
    }
}
