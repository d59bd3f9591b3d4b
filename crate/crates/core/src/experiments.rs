//! Built-in experiments, tau sweeps and convergence reports.

use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mesh::{discrete_l2, sample, FaceField, GridField, Mesh, MeshError};
use crate::operators::{BoundaryData, EllipticCoefficients, SourceData};
use crate::reference::{reference_solve, Dopri5Options, ReferenceError, StepStats};
use crate::splitting::{build_scheme, integrate, KPolicy, Problem, SchemeKind, SplitError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown experiment `{0}` (expected one of ex1, ex2, ex3, ex3d)")]
    Unknown(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("need at least two finite (tau, error) pairs, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("cache I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Parse(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Convective field on the faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VelocitySpec {
    /// `(c, c)` with `c = 1/|x| + 1/|y|`.
    Isotropic,
    /// `(1/|x|, 1/|y|)`.
    Componentwise,
    /// The isotropic field with `c` replaced by `min(c, cap)`.
    Clipped { cap: f64 },
    /// `gamma x/|x|^2 + (1 - |x|^{N-2-gamma}) x / (2 - N + gamma)`.
    Radial { gamma: f64 },
    Zero,
}

impl VelocitySpec {
    pub fn eval(&self, x: &[f64], v: &mut [f64]) {
        let iso = |x: &[f64]| 1.0 / x[0].abs() + 1.0 / x[1].abs();
        match *self {
            VelocitySpec::Isotropic => v.iter_mut().for_each(|o| *o = iso(x)),
            VelocitySpec::Componentwise => v.iter_mut().zip(x).for_each(|(o, xi)| *o = 1.0 / xi.abs()),
            VelocitySpec::Clipped { cap } => v.iter_mut().for_each(|o| *o = iso(x).min(cap)),
            VelocitySpec::Radial { gamma } => {
                let n = x.len() as f64;
                let r2: f64 = x.iter().map(|t| t * t).sum();
                let r = r2.sqrt();
                let b = (1.0 - r.powf(n - 2.0 - gamma)) / (2.0 - n + gamma);
                v.iter_mut().zip(x).for_each(|(o, xi)| *o = gamma * xi / r2 + b * xi);
            }
            VelocitySpec::Zero => v.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    fn describe(&self) -> String {
        match self {
            VelocitySpec::Isotropic => "c = (1/|x| + 1/|y|) (1, 1)".into(),
            VelocitySpec::Componentwise => "c = (1/|x|, 1/|y|)".into(),
            VelocitySpec::Clipped { cap } => format!("c = min(1/|x| + 1/|y|, {cap}) (1, 1)"),
            VelocitySpec::Radial { gamma } => format!("radial field with gamma = {gamma}"),
            VelocitySpec::Zero => "c = 0".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundarySpec {
    Constant { value: f64 },
    /// `1 + sin(wx t)` on faces normal to the first axis, `1 + sin(wy t)`
    /// on the others.
    Oscillating { wx: f64, wy: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpec {
    /// `1 + sin(2 pi/3 (x + 1/2)) sin(2 pi/3 (y + 1/2))`.
    Bump,
    /// `sin(pi x) sin(pi y)`.
    SineProduct,
    Zero,
}

impl InitialSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match self {
            InitialSpec::Bump => {
                let w = 2.0 * PI / 3.0;
                1.0 + (w * (x[0] + 0.5)).sin() * (w * (x[1] + 0.5)).sin()
            }
            InitialSpec::SineProduct => (PI * x[0]).sin() * (PI * x[1]).sin(),
            InitialSpec::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceSpec {
    None,
    /// `-div(x / |x|^{N - gamma}) = -gamma / |x|^{N - gamma}`.
    Radial { gamma: f64 },
}

/// Serializable form of [`KPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KPolicySpec {
    Fixed { k: f64 },
    Median10,
    Certified { eta: f64 },
}

impl From<KPolicySpec> for KPolicy {
    fn from(p: KPolicySpec) -> KPolicy {
        match p {
            KPolicySpec::Fixed { k } => KPolicy::Fixed(k),
            KPolicySpec::Median10 => KPolicy::Median10,
            KPolicySpec::Certified { eta } => KPolicy::Certified { eta },
        }
    }
}

impl std::fmt::Display for KPolicySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KPolicySpec::Fixed { k } => write!(f, "fixed K = {k}"),
            KPolicySpec::Median10 => f.write_str("K = 10 x median face speed"),
            KPolicySpec::Certified { eta } => write!(f, "certified, eta = {eta}"),
        }
    }
}

/// Complete description of one convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub description: String,
    pub bounds: Vec<(f64, f64)>,
    pub n: Vec<usize>,
    pub nu: f64,
    pub velocity: VelocitySpec,
    pub boundary: BoundarySpec,
    pub initial: InitialSpec,
    pub source: SourceSpec,
    pub t_end: f64,
    pub taus: Vec<f64>,
    pub k_policy: KPolicySpec,
    pub ref_atol: f64,
    pub ref_rtol: f64,
    pub subflow_tol: f64,
}

pub const BUILTIN_NAMES: [&str; 4] = ["ex1", "ex2", "ex3", "ex3d"];

/// `1/10, 1/20, ..., 1/160`.
pub fn default_ladder() -> Vec<f64> {
    [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|d| 1.0 / d).collect()
}

pub fn builtin(name: &str) -> Result<ExperimentSpec, ExperimentError> {
    let base = ExperimentSpec {
        name: name.to_string(),
        description: String::new(),
        bounds: vec![(-0.5, 1.0); 2],
        n: vec![99; 2],
        nu: 0.01,
        velocity: VelocitySpec::Isotropic,
        boundary: BoundarySpec::Constant { value: 1.0 },
        initial: InitialSpec::Bump,
        source: SourceSpec::None,
        t_end: 0.1,
        taus: default_ladder(),
        k_policy: KPolicySpec::Median10,
        ref_atol: 1e-12,
        ref_rtol: 1e-12,
        subflow_tol: crate::splitting::DEFAULT_SUBFLOW_TOL,
    };
    let spec = match name {
        "ex1" => ExperimentSpec {
            description: "constant boundary data u = 1".into(),
            k_policy: KPolicySpec::Fixed { k: 1.0 },
            ..base
        },
        "ex2" => ExperimentSpec {
            description: "oscillating boundary data 1 + sin(5t), 1 + sin(10t)".into(),
            boundary: BoundarySpec::Oscillating { wx: 5.0, wy: 10.0 },
            k_policy: KPolicySpec::Fixed { k: 0.5 },
            ..base
        },
        "ex3" => ExperimentSpec {
            description: "domain [-1,1]^2, homogeneous boundary data, nu = 0.1".into(),
            bounds: vec![(-1.0, 1.0); 2],
            n: vec![100; 2],
            nu: 0.1,
            boundary: BoundarySpec::Constant { value: 0.0 },
            initial: InitialSpec::SineProduct,
            k_policy: KPolicySpec::Fixed { k: 0.2 },
            ..base
        },
        "ex3d" => ExperimentSpec {
            description: "radial field with source, homogeneous boundary data".into(),
            bounds: vec![(-0.5, 1.0); 3],
            n: vec![19; 3],
            nu: 1.0,
            velocity: VelocitySpec::Radial { gamma: 2.0 },
            boundary: BoundarySpec::Constant { value: 0.0 },
            initial: InitialSpec::Zero,
            source: SourceSpec::Radial { gamma: 2.0 },
            k_policy: KPolicySpec::Certified { eta: 1.0 },
            ..base
        },
        _ => return Err(ExperimentError::Unknown(name.to_string())),
    };
    Ok(spec)
}

impl ExperimentSpec {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn mesh(&self) -> Result<Mesh, ExperimentError> {
        Ok(Mesh::build(&self.bounds, &self.n)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.n.len() != self.dim() {
            return bad(format!("{} node counts for {} axes", self.n.len(), self.dim()));
        }
        self.mesh()?;
        if !(self.nu > 0.0) {
            return bad(format!("diffusion coefficient must be positive, got {}", self.nu));
        }
        if self.taus.is_empty() {
            return bad("empty step-size ladder".into());
        }
        for &tau in &self.taus {
            crate::splitting::step_count(self.t_end, tau)?;
        }
        if matches!(self.velocity, VelocitySpec::Isotropic | VelocitySpec::Clipped { .. }) && self.dim() != 2 {
            return bad("the isotropic field is two-dimensional".into());
        }
        if !(self.ref_atol >= 1e-14 && self.ref_rtol >= 1e-14) {
            return bad("reference tolerances must be at least 1e-14".into());
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem, ExperimentError> {
        let mesh = self.mesh()?;
        let vel = self.velocity;
        let velocity = FaceField::from_fn(&mesh, |x, v| vel.eval(x, v))?;
        let boundary = match self.boundary {
            BoundarySpec::Constant { value } => BoundaryData::constant(value),
            BoundarySpec::Oscillating { wx, wy } => {
                let (lo, hi) = self.bounds[0];
                BoundaryData::unsteady(move |t, x| {
                    let w = if x[0] == lo || x[0] == hi { wx } else { wy };
                    1.0 + (w * t).sin()
                })
            }
        };
        let source = match self.source {
            SourceSpec::None => None,
            SourceSpec::Radial { gamma } => {
                let n = self.dim() as f64;
                Some(SourceData::steady(move |x| {
                    let r = x.iter().map(|t| t * t).sum::<f64>().sqrt();
                    -gamma / r.powf(n - gamma)
                }))
            }
        };
        Ok(Problem {
            mesh,
            coeffs: EllipticCoefficients::Isotropic { nu: self.nu },
            velocity,
            boundary,
            source,
        })
    }

    pub fn initial_field(&self) -> Result<GridField, ExperimentError> {
        let init = self.initial;
        Ok(sample(|_, x| init.eval(x), &self.mesh()?, 0.0)?)
    }

    /// Hash of everything the reference solution depends on.
    pub fn reference_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            format: u32,
            bounds: &'a [(f64, f64)],
            n: &'a [usize],
            nu: f64,
            velocity: VelocitySpec,
            boundary: BoundarySpec,
            initial: InitialSpec,
            source: SourceSpec,
            t_end: f64,
            atol: f64,
            rtol: f64,
        }
        let key = Key {
            format: 1,
            bounds: &self.bounds,
            n: &self.n,
            nu: self.nu,
            velocity: self.velocity,
            boundary: self.boundary,
            initial: self.initial,
            source: self.source,
            t_end: self.t_end,
            atol: self.ref_atol,
            rtol: self.ref_rtol,
        };
        let json = serde_json::to_string(&key).expect("plain data serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// One-line summary for listings.
    pub fn summary(&self) -> String {
        format!("{:<5} {}D  {}", self.name, self.dim(), self.description)
    }

    /// Multi-line description for verbose listings.
    pub fn details(&self) -> String {
        let ladder: Vec<String> = self.taus.iter().map(|t| format_tau(*t)).collect();
        let bounds: Vec<String> = self.bounds.iter().map(|(a, b)| format!("[{a}, {b}]")).collect();
        let n: Vec<String> = self.n.iter().map(|n| n.to_string()).collect();
        format!(
            "  domain {}, n = {}, nu = {}\n  {}\n  T = {}, tau = {}\n  K policy: {}",
            bounds.join(" x "),
            n.join("x"),
            self.nu,
            self.velocity.describe(),
            self.t_end,
            ladder.join(", "),
            self.k_policy
        )
    }
}

/// `1/160` for reciprocals of integers, the plain value otherwise.
pub fn format_tau(tau: f64) -> String {
    let inv = 1.0 / tau;
    if (inv - inv.round()).abs() < 1e-9 * inv {
        format!("1/{}", inv.round())
    } else {
        format!("{tau}")
    }
}

/// A reference solution plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub field: GridField,
    pub stats: StepStats,
    pub from_cache: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// Cache file for `spec` inside `dir`.
pub fn cache_path(spec: &ExperimentSpec, dir: &Path) -> PathBuf {
    dir.join(format!("{}-{}.ref", spec.name, &spec.reference_key()[..16]))
}

/// Solves the unsplit system to the spec's tolerances.
pub fn compute_reference(spec: &ExperimentSpec) -> Result<Reference, ExperimentError> {
    let problem = spec.problem()?;
    let u0 = spec.initial_field()?;
    let system = problem.full_system()?;
    let opts = Dopri5Options::with_tolerances(spec.ref_atol, spec.ref_rtol);
    let sol = reference_solve(&system, u0.values(), spec.t_end, &opts)?;
    Ok(Reference { field: u0.with_values(sol.values), stats: sol.stats, from_cache: false })
}

/// Loads the reference from `dir` if present, otherwise computes and stores it.
pub fn load_or_compute_reference(spec: &ExperimentSpec, dir: Option<&Path>) -> Result<Reference, ExperimentError> {
    let Some(dir) = dir else {
        return compute_reference(spec);
    };
    let path = cache_path(spec, dir);
    if path.exists() {
        match read_cache(spec, &path) {
            Ok(r) => return Ok(r),
            Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let r = compute_reference(spec)?;
    write_cache(spec, &path, &r)?;
    Ok(r)
}

fn write_cache(spec: &ExperimentSpec, path: &Path, r: &Reference) -> Result<(), ExperimentError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut text = String::new();
    let _ = writeln!(text, "# splitcd reference solution");
    let _ = writeln!(text, "# experiment={}", spec.name);
    let _ = writeln!(text, "# config_hash={}", spec.reference_key());
    let _ = writeln!(text, "# atol={:e} rtol={:e}", spec.ref_atol, spec.ref_rtol);
    let _ = writeln!(
        text,
        "# accepted={} rejected={} rhs_evals={} max_error={:e}",
        r.stats.accepted, r.stats.rejected, r.stats.rhs_evals, r.stats.max_accepted_error
    );
    text.push_str(&r.field.to_text());
    // write then rename so concurrent readers never see a partial file
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn read_cache(spec: &ExperimentSpec, path: &Path) -> Result<Reference, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut stats = StepStats::default();
    let mut hash_ok = false;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        for kv in body.split_whitespace() {
            let Some((k, v)) = kv.split_once('=') else { continue };
            match k {
                "config_hash" => hash_ok = v == spec.reference_key(),
                "accepted" => stats.accepted = v.parse().unwrap_or(0),
                "rejected" => stats.rejected = v.parse().unwrap_or(0),
                "rhs_evals" => stats.rhs_evals = v.parse().unwrap_or(0),
                "max_error" => stats.max_accepted_error = v.parse().unwrap_or(0.0),
                _ => {}
            }
        }
    }
    if !hash_ok {
        return Err(ExperimentError::Parse("configuration hash mismatch".into()));
    }
    let field = GridField::from_reader(text.as_bytes())?;
    if field.mesh() != &spec.mesh()? {
        return Err(ExperimentError::Parse("cached mesh differs".into()));
    }
    Ok(Reference { field, stats, from_cache: true })
}

/// Where references are cached: the explicit directory, else `SPLITCD_CACHE_DIR`.
pub fn resolve_cache_dir(explicit: Option<PathBuf>) -> Option<PathBuf> {
    explicit.or_else(|| std::env::var_os("SPLITCD_CACHE_DIR").map(PathBuf::from))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub tau: f64,
    pub err_classical: f64,
    pub err_adapted: f64,
    /// `err_classical / err_adapted`.
    pub factor: f64,
}

/// Errors at the final time for every step size, with fitted orders.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub experiment: String,
    pub rows: Vec<ErrorRow>,
    pub slope_classical: Option<f64>,
    pub slope_adapted: Option<f64>,
    /// Geometric mean of the finite per-step factors.
    pub mean_factor: Option<f64>,
    pub k: Option<f64>,
    pub k_certified: Option<bool>,
}

/// Least-squares slope of `log(error)` against `log(tau)` over the finite,
/// positive entries.
pub fn estimate_order(pairs: &[(f64, f64)]) -> Result<f64, ExperimentError> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(t, e)| t.is_finite() && *t > 0.0 && e.is_finite() && *e > 0.0)
        .map(|(t, e)| (t.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(ExperimentError::TooFewPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(ExperimentError::TooFewPoints(1));
    }
    Ok(sxy / sxx)
}

impl ErrorReport {
    /// Fills slopes and the mean factor from `rows`.
    pub fn from_rows(experiment: &str, rows: Vec<ErrorRow>, k: Option<f64>, k_certified: Option<bool>) -> ErrorReport {
        let slope = |pick: fn(&ErrorRow) -> f64| {
            if rows.len() < 3 {
                return None;
            }
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.tau, pick(r))).collect();
            estimate_order(&pairs).ok()
        };
        let slope_classical = slope(|r| r.err_classical);
        let slope_adapted = slope(|r| r.err_adapted);
        let logs: Vec<f64> = rows
            .iter()
            .map(|r| r.factor)
            .filter(|f| f.is_finite() && *f > 0.0)
            .map(f64::ln)
            .collect();
        let mean_factor = (!logs.is_empty()).then(|| (logs.iter().sum::<f64>() / logs.len() as f64).exp());
        ErrorReport { experiment: experiment.to_string(), rows, slope_classical, slope_adapted, mean_factor, k, k_certified }
    }

    /// CSV with one row per step size and `#` footer lines.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let mut s = String::from("tau,err_classical,err_adapted,factor\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.tau, r.err_classical, r.err_adapted, r.factor);
        }
        let _ = writeln!(s, "# slope_classical={}", opt(self.slope_classical));
        let _ = writeln!(s, "# slope_adapted={}", opt(self.slope_adapted));
        let _ = writeln!(s, "# mean_factor={}", opt(self.mean_factor));
        let _ = writeln!(s, "# experiment={}", self.experiment);
        let _ = writeln!(s, "# K={}", opt(self.k));
        let _ = writeln!(
            s,
            "# K_certified={}",
            self.k_certified.map_or("none".to_string(), |c| c.to_string())
        );
        s
    }

    pub fn from_csv<R: BufRead>(reader: R) -> Result<ErrorReport, ExperimentError> {
        let perr = |m: String| ExperimentError::Parse(m);
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| perr(format!("bad number `{v}`")));
        let opt = |v: &str| -> Result<Option<f64>, ExperimentError> {
            if v == "none" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| perr("empty input".into()))?.map_err(|e| perr(e.to_string()))?;
        if header.trim() != "tau,err_classical,err_adapted,factor" {
            return Err(perr(format!("unexpected header `{header}`")));
        }
        let mut rep = ErrorReport {
            experiment: String::new(),
            rows: Vec::new(),
            slope_classical: None,
            slope_adapted: None,
            mean_factor: None,
            k: None,
            k_certified: None,
        };
        for line in lines {
            let line = line.map_err(|e| perr(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(body) = line.strip_prefix('#') {
                let (k, v) = body.trim().split_once('=').ok_or_else(|| perr(format!("bad footer `{line}`")))?;
                match k {
                    "slope_classical" => rep.slope_classical = opt(v)?,
                    "slope_adapted" => rep.slope_adapted = opt(v)?,
                    "mean_factor" => rep.mean_factor = opt(v)?,
                    "experiment" => rep.experiment = v.to_string(),
                    "K" => rep.k = opt(v)?,
                    "K_certified" => {
                        rep.k_certified = match v {
                            "none" => None,
                            other => Some(other.parse().map_err(|_| perr(format!("bad flag `{other}`")))?),
                        }
                    }
                    _ => {}
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(perr(format!("expected 4 columns in `{line}`")));
            }
            rep.rows.push(ErrorRow {
                tau: num(cols[0])?,
                err_classical: num(cols[1])?,
                err_adapted: num(cols[2])?,
                factor: num(cols[3])?,
            });
        }
        Ok(rep)
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut s = format!("{:>8} {:>14} {:>14} {:>8}\n", "tau", "classical", "adapted", "factor");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8} {:>14.6e} {:>14.6e} {:>8.3}",
                format_tau(r.tau),
                r.err_classical,
                r.err_adapted,
                r.factor
            );
        }
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let _ = writeln!(
            s,
            "slope classical {}, slope adapted {}, mean factor {}",
            show(self.slope_classical),
            show(self.slope_adapted),
            show(self.mean_factor)
        );
        if let Some(k) = self.k {
            let tag = match self.k_certified {
                Some(true) => " (certified)",
                Some(false) => " (uncertified)",
                None => "",
            };
            let _ = writeln!(s, "K = {k:.6e}{tag}");
        }
        s
    }
}

/// Gnuplot commands drawing both error curves on log-log axes with a
/// slope-one guide through the adapted error at the largest step.
pub fn plot_script(report: &ErrorReport, csv_path: &str, image_path: &str) -> String {
    let anchor = report
        .rows
        .iter()
        .filter(|r| r.err_adapted.is_finite())
        .max_by(|a, b| a.tau.total_cmp(&b.tau))
        .map_or(1.0, |r| r.err_adapted / r.tau);
    format!(
        "set terminal pngcairo size 800,600\n\
         set output '{image_path}'\n\
         set datafile separator ','\n\
         set logscale xy\n\
         set key top left\n\
         set xlabel 'tau'\n\
         set ylabel 'discrete L2 error at T'\n\
         set title '{name}'\n\
         guide(x) = {anchor:e} * x\n\
         plot '{csv_path}' using 1:2 skip 1 with linespoints title 'classical', \\\n\
         \x20    '{csv_path}' using 1:3 skip 1 with linespoints title 'adapted', \\\n\
         \x20    guide(x) with lines dashtype 4 title 'slope one'\n",
        name = report.experiment,
    )
}

/// Knobs of [`run_sweep`] that do not change the results.
#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

/// A report with the run metadata that is not part of the CSV.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ErrorReport,
    pub reference: StepStats,
    pub reference_cached: bool,
    pub seconds: f64,
}

/// Runs both schemes for every step size and compares with the reference.
///
/// A run whose state blows up is recorded with an infinite error.
pub fn run_sweep(spec: &ExperimentSpec, opts: &SweepOptions) -> Result<SweepOutcome, ExperimentError> {
    spec.validate()?;
    let start = Instant::now();
    let reference = load_or_compute_reference(spec, opts.cache_dir.as_deref())?;
    info!(
        "{}: reference {} ({} steps)",
        spec.name,
        if reference.from_cache { "loaded from cache" } else { "computed" },
        reference.stats.accepted
    );
    let problem = spec.problem()?;
    let u0 = spec.initial_field()?;
    let policy: KPolicy = spec.k_policy.into();
    let classical = build_scheme(SchemeKind::Classical, &problem, &policy, spec.subflow_tol)?;
    let adapted = build_scheme(SchemeKind::Adapted, &problem, &policy, spec.subflow_tol)?;
    let level = adapted.level;
    let cell = problem.mesh.cell_volume();

    let jobs: Vec<(usize, SchemeKind)> = (0..spec.taus.len())
        .flat_map(|i| [SchemeKind::Classical, SchemeKind::Adapted].map(|k| (i, k)))
        .collect();
    let work = || -> Result<Vec<f64>, ExperimentError> {
        jobs.par_iter()
            .map(|&(i, kind)| {
                let scheme = if kind == SchemeKind::Classical { &classical } else { &adapted };
                let tau = spec.taus[i];
                match integrate(scheme, u0.values(), spec.t_end, tau, false) {
                    Ok(traj) => {
                        let diff: Vec<f64> =
                            traj.final_state().iter().zip(reference.field.values()).map(|(a, b)| a - b).collect();
                        let err = crate::mesh::weighted_l2(&diff, cell);
                        info!("{} {kind} tau = {}: error {err:.6e}", spec.name, format_tau(tau));
                        Ok(if err.is_finite() { err } else { f64::INFINITY })
                    }
                    Err(SplitError::NonFinite { t }) => {
                        warn!("{} {kind} tau = {} diverged at t = {t}", spec.name, format_tau(tau));
                        Ok(f64::INFINITY)
                    }
                    Err(e) => Err(e.into()),
                }
            })
            .collect()
    };
    let errors = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let rows = spec
        .taus
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let (c, a) = (errors[2 * i], errors[2 * i + 1]);
            ErrorRow { tau, err_classical: c, err_adapted: a, factor: c / a }
        })
        .collect();
    let report = ErrorReport::from_rows(&spec.name, rows, level.map(|l| l.k), level.map(|l| l.certified));
    Ok(SweepOutcome {
        report,
        reference: reference.stats,
        reference_cached: reference.from_cache,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Discrete L2 distance between two fields on the same mesh.
pub fn field_distance(a: &GridField, b: &GridField) -> f64 {
    let diff: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    discrete_l2(&a.with_values(diff))
}
