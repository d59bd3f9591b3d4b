//! Tensor-product equidistant meshes, grid fields and discrete norms.
//!
//! Only interior nodes carry unknowns. Along each axis the nodes are
//! `x_i = lower + i h` for `i = 1..=n` with `h = (upper - lower) / (n + 1)`;
//! indices `0` and `n + 1` are the Dirichlet boundary nodes. Interior nodes
//! are ordered lexicographically with axis 0 running fastest.

use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// A point in up to three dimensions; only the first `dim` entries are used.
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("axis {axis}: need at least 3 interior nodes, got {n}")]
    TooFewNodes { axis: usize, n: usize },
    #[error("axis {axis}: lower bound {lower} must be below upper bound {upper}")]
    BadBounds { axis: usize, lower: f64, upper: f64 },
    #[error("axis {axis}: interior node {index} lies on the singular set x = 0; choose another node count")]
    NodeAtZero { axis: usize, index: usize },
    #[error("non-finite value {value} at node {coords:?}")]
    NonFinite { coords: Vec<f64>, value: f64 },
    #[error("field length {got} does not match mesh size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("malformed field file: {0}")]
    Parse(String),
}

/// One axis of a tensor-product mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    /// Number of interior nodes.
    pub n: usize,
    pub h: f64,
}

impl Axis {
    /// Coordinate of node `i`, `0 <= i <= n + 1` (0 and n+1 are boundary nodes).
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i == self.n + 1 {
            self.upper
        } else {
            self.lower + i as f64 * self.h
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    /// Sign of the outward normal along the face axis.
    pub fn outward_sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

impl Mesh {
    /// Builds an equidistant mesh with `n[a]` interior nodes on `[bounds[a].0, bounds[a].1]`.
    pub fn build(bounds: &[(f64, f64)], n: &[usize]) -> Result<Mesh, MeshError> {
        let dim = bounds.len();
        if !(2..=MAX_DIM).contains(&dim) || n.len() != dim {
            return Err(MeshError::BadDimension(dim));
        }
        let mut axes = Vec::with_capacity(dim);
        for (axis, (&(lower, upper), &count)) in bounds.iter().zip(n).enumerate() {
            if count < 3 {
                return Err(MeshError::TooFewNodes { axis, n: count });
            }
            if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                return Err(MeshError::BadBounds { axis, lower, upper });
            }
            let h = (upper - lower) / (count + 1) as f64;
            let ax = Axis { lower, upper, n: count, h };
            for i in 1..=count {
                if ax.coord(i).abs() <= 1e-9 * h {
                    return Err(MeshError::NodeAtZero { axis, index: i });
                }
            }
            axes.push(ax);
        }
        let mut strides = Vec::with_capacity(dim);
        let mut s = 1;
        for ax in &axes {
            strides.push(s);
            s *= ax.n;
        }
        Ok(Mesh { axes, strides, len: s })
    }

    /// Same bounds and node count on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, n: usize) -> Result<Mesh, MeshError> {
        Mesh::build(&vec![(lower, upper); dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    /// Number of interior nodes (unknowns).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    /// Volume of one grid cell, the weight of every node in discrete norms.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.h).product()
    }

    /// Interior multi-index (1-based per axis) of flat node `k`.
    pub fn multi_index(&self, mut k: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            idx[a] = k % ax.n + 1;
            k /= ax.n;
        }
        idx
    }

    /// Flat index of an interior multi-index, or `None` if any component is a boundary index.
    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> Option<usize> {
        let mut k = 0;
        for (a, ax) in self.axes.iter().enumerate() {
            let i = idx[a];
            if i == 0 || i > ax.n {
                return None;
            }
            k += (i - 1) * self.strides[a];
        }
        Some(k)
    }

    /// Coordinates of a (possibly boundary) multi-index.
    #[inline]
    pub fn point_of(&self, idx: &[usize]) -> Point {
        let mut p = [0.0; MAX_DIM];
        for (a, ax) in self.axes.iter().enumerate() {
            p[a] = ax.coord(idx[a]);
        }
        p
    }

    pub fn node_point(&self, k: usize) -> Point {
        self.point_of(&self.multi_index(k))
    }

    /// Boundary faces: one per (side, adjacent interior node) pair.
    pub fn boundary_faces(&self) -> Vec<BoundaryFace> {
        let mut faces = Vec::new();
        for k in 0..self.len {
            let idx = self.multi_index(k);
            for (a, ax) in self.axes.iter().enumerate() {
                if idx[a] == 1 {
                    faces.push(BoundaryFace { axis: a, side: Side::Lower, node: k });
                }
                if idx[a] == ax.n {
                    faces.push(BoundaryFace { axis: a, side: Side::Upper, node: k });
                }
            }
        }
        faces
    }

    /// Position of the boundary node that closes `face`.
    pub fn face_point(&self, face: &BoundaryFace) -> Point {
        let mut idx = self.multi_index(face.node);
        idx[face.axis] = match face.side {
            Side::Lower => 0,
            Side::Upper => self.axes[face.axis].n + 1,
        };
        self.point_of(&idx)
    }

    /// Header line of the flat text format.
    pub fn header(&self) -> String {
        let mut s = format!("dim={}", self.dim());
        for (a, ax) in self.axes.iter().enumerate() {
            let _ = write!(s, " axis{}={}:{}:{}", a, ax.lower, ax.upper, ax.n);
        }
        s
    }

    pub fn parse_header(line: &str) -> Result<Mesh, MeshError> {
        let bad = || MeshError::Parse(format!("bad header `{line}`"));
        let mut tokens = line.split_whitespace();
        let dim: usize = tokens
            .next()
            .and_then(|t| t.strip_prefix("dim="))
            .and_then(|t| t.parse().ok())
            .ok_or_else(bad)?;
        let mut bounds = Vec::new();
        let mut n = Vec::new();
        for a in 0..dim {
            let tok = tokens.next().ok_or_else(bad)?;
            let rest = tok.strip_prefix(&format!("axis{a}=")).ok_or_else(bad)?;
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].parse().map_err(|_| bad())?;
            let cnt: usize = parts[2].parse().map_err(|_| bad())?;
            bounds.push((lo, hi));
            n.push(cnt);
        }
        Mesh::build(&bounds, &n)
    }
}

/// A boundary face element: the face on `side` of `axis` next to interior node `node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundaryFace {
    pub axis: usize,
    pub side: Side,
    pub node: usize,
}

/// Values on the interior nodes of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    mesh: Mesh,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(mesh: Mesh, values: Vec<f64>) -> Result<GridField, MeshError> {
        if values.len() != mesh.len() {
            return Err(MeshError::LengthMismatch { expected: mesh.len(), got: values.len() });
        }
        Ok(GridField { mesh, values })
    }

    pub fn zeros(mesh: &Mesh) -> GridField {
        GridField { values: vec![0.0; mesh.len()], mesh: mesh.clone() }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same mesh, new values.
    pub fn with_values(&self, values: Vec<f64>) -> GridField {
        assert_eq!(values.len(), self.values.len());
        GridField { mesh: self.mesh.clone(), values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes the flat text format: mesh header, then one value per line.
    pub fn to_text(&self) -> String {
        let mut s = self.mesh.header();
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    /// Reads the flat text format; lines starting with `#` are ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<GridField, MeshError> {
        let mut mesh = None;
        let mut values = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| MeshError::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if mesh.is_none() {
                mesh = Some(Mesh::parse_header(line)?);
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|_| MeshError::Parse(format!("bad value `{line}`")))?,
            );
        }
        let mesh = mesh.ok_or_else(|| MeshError::Parse("missing header".into()))?;
        GridField::new(mesh, values)
    }
}

/// A vector field stored at the cell faces between neighbouring nodes.
///
/// Faces normal to axis `a` are indexed by `k = 0..=n_a` (between node `k`
/// and `k + 1` along `a`) and by the interior indices of the other axes.
/// Every face keeps the full velocity vector so magnitude truncation can act
/// on it; fluxes use the component along the face normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    dim: usize,
    counts: Vec<[usize; MAX_DIM]>,
    data: Vec<Vec<f64>>,
}

impl FaceField {
    /// Evaluates `f` at face midpoints. If the midpoint is singular the face
    /// takes the mean of the two adjacent node values instead.
    pub fn from_fn<F>(mesh: &Mesh, f: F) -> Result<FaceField, MeshError>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let dim = mesh.dim();
        let mut counts = Vec::with_capacity(dim);
        let mut data = Vec::with_capacity(dim);
        let mut v = [0.0; MAX_DIM];
        let mut w = [0.0; MAX_DIM];
        for a in 0..dim {
            let mut cnt = [1usize; MAX_DIM];
            for b in 0..dim {
                cnt[b] = if b == a { mesh.axis(b).n + 1 } else { mesh.axis(b).n };
            }
            let total: usize = cnt[..dim].iter().product();
            let mut vals = Vec::with_capacity(total * dim);
            for j in 0..total {
                let idx = unflatten(j, &cnt[..dim]);
                let mut lo = [0usize; MAX_DIM];
                for b in 0..dim {
                    lo[b] = if b == a { idx[b] } else { idx[b] + 1 };
                }
                let mut hi = lo;
                hi[a] += 1;
                let pl = mesh.point_of(&lo);
                let ph = mesh.point_of(&hi);
                let mut mid = pl;
                mid[a] = 0.5 * (pl[a] + ph[a]);
                if mid[a].abs() <= 1e-9 * mesh.axis(a).h {
                    mid[a] = 0.0;
                }
                f(&mid[..dim], &mut v[..dim]);
                if v[..dim].iter().any(|x| !x.is_finite()) {
                    f(&pl[..dim], &mut v[..dim]);
                    f(&ph[..dim], &mut w[..dim]);
                    for b in 0..dim {
                        v[b] = 0.5 * (v[b] + w[b]);
                    }
                    if let Some(bad) = v[..dim].iter().find(|x| !x.is_finite()) {
                        return Err(MeshError::NonFinite { coords: mid[..dim].to_vec(), value: *bad });
                    }
                }
                vals.extend_from_slice(&v[..dim]);
            }
            counts.push(cnt);
            data.push(vals);
        }
        Ok(FaceField { dim, counts, data })
    }

    /// The zero field on `mesh`.
    pub fn zeros(mesh: &Mesh) -> FaceField {
        FaceField::from_fn(mesh, |_, out| out.iter_mut().for_each(|o| *o = 0.0)).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of faces normal to axis `a`.
    pub fn face_count(&self, a: usize) -> usize {
        self.data[a].len() / self.dim
    }

    /// Index of the face normal to `a` with along-axis index `k` next to the
    /// interior node whose multi-index is `idx` (other axes are read from `idx`).
    #[inline]
    pub fn face_index(&self, a: usize, k: usize, idx: &[usize]) -> usize {
        let cnt = &self.counts[a];
        let mut j = 0;
        let mut s = 1;
        for b in 0..self.dim {
            let i = if b == a { k } else { idx[b] - 1 };
            j += i * s;
            s *= cnt[b];
        }
        j
    }

    pub fn vector(&self, a: usize, face: usize) -> &[f64] {
        &self.data[a][face * self.dim..(face + 1) * self.dim]
    }

    /// Component along the normal of face `face` of axis `a`.
    #[inline]
    pub fn normal(&self, a: usize, face: usize) -> f64 {
        self.data[a][face * self.dim + a]
    }

    /// Applies `g` to every face vector, producing a new field.
    pub fn map<G: FnMut(&[f64], &mut [f64])>(&self, mut g: G) -> FaceField {
        let mut out = self.clone();
        let d = self.dim;
        for (src, dst) in self.data.iter().zip(out.data.iter_mut()) {
            for (s, t) in src.chunks_exact(d).zip(dst.chunks_exact_mut(d)) {
                g(s, t);
            }
        }
        out
    }

    /// Iterates over all face vectors of all axes.
    pub fn iter_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.iter().flat_map(move |v| v.chunks_exact(self.dim))
    }

    /// Largest Euclidean magnitude over all faces.
    pub fn max_magnitude(&self) -> f64 {
        self.iter_vectors().map(norm).fold(0.0, f64::max)
    }

    /// Median Euclidean magnitude over all faces.
    pub fn median_magnitude(&self) -> f64 {
        let mut m: Vec<f64> = self.iter_vectors().map(norm).collect();
        m.sort_by(|a, b| a.total_cmp(b));
        let n = m.len();
        if n % 2 == 1 {
            m[n / 2]
        } else {
            0.5 * (m[n / 2 - 1] + m[n / 2])
        }
    }

    /// Entrywise difference `self - other`.
    pub fn sub(&self, other: &FaceField) -> FaceField {
        let mut out = self.clone();
        for (d, o) in out.data.iter_mut().zip(&other.data) {
            for (x, y) in d.iter_mut().zip(o) {
                *x -= y;
            }
        }
        out
    }

    /// Largest entrywise deviation between two fields on the same mesh.
    pub fn max_abs_diff(&self, other: &FaceField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

fn unflatten(mut j: usize, counts: &[usize]) -> [usize; MAX_DIM] {
    let mut idx = [0; MAX_DIM];
    for (b, &c) in counts.iter().enumerate() {
        idx[b] = j % c;
        j /= c;
    }
    idx
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Partition of the boundary faces into inflow and outflow parts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InflowSplit {
    pub inflow: Vec<BoundaryFace>,
    pub outflow: Vec<BoundaryFace>,
}

impl InflowSplit {
    pub fn is_inflow(&self, face: &BoundaryFace) -> bool {
        self.inflow.binary_search(face).is_ok()
    }
}

/// Boundary faces receiving data for `dw/dt = div(c w)`.
///
/// Characteristics of the divergence-form transport move with velocity `-c`,
/// so a face is inflow when `c . n_out > 0`; `c . n_out = 0` counts as outflow.
/// The sign is taken from the same face midpoints the upwind operator uses.
pub fn classify_inflow(mesh: &Mesh, velocity: &FaceField) -> InflowSplit {
    let mut split = InflowSplit::default();
    for face in mesh.boundary_faces() {
        let idx = mesh.multi_index(face.node);
        let k = match face.side {
            Side::Lower => 0,
            Side::Upper => mesh.axis(face.axis).n,
        };
        let c = velocity.normal(face.axis, velocity.face_index(face.axis, k, &idx));
        if c * face.side.outward_sign() > 0.0 {
            split.inflow.push(face);
        } else {
            split.outflow.push(face);
        }
    }
    split.inflow.sort();
    split.outflow.sort();
    split
}

/// Cell-volume weighted Euclidean norm, `sqrt(prod(h) * sum(v^2))`.
pub fn discrete_l2(field: &GridField) -> f64 {
    weighted_l2(field.values(), field.mesh().cell_volume())
}

pub(crate) fn weighted_l2(values: &[f64], cell: f64) -> f64 {
    (cell * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Evaluates `f(t, x)` at every interior node.
pub fn sample<F>(f: F, mesh: &Mesh, t: f64) -> Result<GridField, MeshError>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let dim = mesh.dim();
    let mut values = Vec::with_capacity(mesh.len());
    for k in 0..mesh.len() {
        let p = mesh.node_point(k);
        let v = f(t, &p[..dim]);
        if !v.is_finite() {
            return Err(MeshError::NonFinite { coords: p[..dim].to_vec(), value: v });
        }
        values.push(v);
    }
    Ok(GridField { mesh: mesh.clone(), values })
}
