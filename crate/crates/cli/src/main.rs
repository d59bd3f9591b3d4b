//! `splitcd`: run the splitting experiments and query the Lorentz toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use splitcd::experiments::{
    builtin, format_tau, plot_script, resolve_cache_dir, run_sweep, ExperimentSpec, KPolicySpec, SweepOptions,
    BUILTIN_NAMES,
};
use splitcd::lorentz::{
    delta_threshold, distance_to_bounded, face_samples, geometric_levels, inverse_radius, select_truncation_level,
    weak_norm, SampledFunction, SamplingGrid,
};
use splitcd::mesh::FaceField;

#[derive(Parser)]
#[command(name = "splitcd", version, about = "Lie splitting experiments for singular convection-diffusion problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in experiments.
    List {
        /// Also print domains, step-size ladders and truncation policies.
        #[arg(long)]
        verbose: bool,
    },
    /// Run a step-size sweep of both schemes against a reference solution.
    Run(RunArgs),
    /// Evaluate weak norms and truncation levels of analytic fields.
    Lorentz {
        #[arg(value_enum)]
        query: LorentzQuery,
        /// Field name (inv_r, const, ex1, ex3d) followed by key=value parameters.
        #[arg(required = true, num_args = 1..)]
        field: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LorentzQuery {
    Weaknorm,
    Dist,
    #[value(name = "selectK")]
    SelectK,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PolicyArg {
    Fixed,
    Certified,
    Median10,
}

#[derive(Args, Default)]
struct RunArgs {
    /// Experiment name (see `list`).
    experiment: String,
    /// Comma-separated step sizes; fractions such as 1/160 are accepted.
    #[arg(long)]
    tau: Option<String>,
    /// Truncation level for the adapted scheme (implies the fixed policy).
    #[arg(long = "K")]
    k: Option<f64>,
    /// How the truncation level is chosen.
    #[arg(long = "K-policy", value_enum)]
    k_policy: Option<PolicyArg>,
    /// Ellipticity constant used by the certified policy.
    #[arg(long)]
    eta: Option<f64>,
    /// Interior nodes per axis.
    #[arg(long)]
    n: Option<usize>,
    /// Relative tolerance of the reference solver.
    #[arg(long)]
    rtol: Option<f64>,
    /// Absolute tolerance of the reference solver.
    #[arg(long)]
    atol: Option<f64>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    plot: bool,
    /// Reference cache directory (falls back to SPLITCD_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Worker threads for the sweep.
    #[arg(long)]
    jobs: Option<usize>,
    /// `key = value` file with defaults for the options above.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Errors in what the user asked for, as opposed to failures while doing it.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::List { verbose } => list(verbose),
        Command::Run(args) => run(args),
        Command::Lorentz { query, field } => lorentz(query, &field),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("Usage: splitcd <list|run|lorentz> ... (see --help)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn list(verbose: bool) -> Result<()> {
    for name in BUILTIN_NAMES {
        let spec = builtin(name)?;
        println!("{}", spec.summary());
        if verbose {
            println!("{}", spec.details());
        }
    }
    Ok(())
}

/// Parses `0.1`, `1/160` or `2/3`.
fn parse_fraction(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = match (a.trim().parse(), b.trim().parse()) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return usage(format!("bad step size `{s}`")),
            };
            a / b
        }
        None => match s.parse() {
            Ok(v) => v,
            Err(_) => return usage(format!("bad step size `{s}`")),
        },
    };
    if !(v > 0.0) || !v.is_finite() {
        return usage(format!("step size must be positive, got `{s}`"));
    }
    Ok(v)
}

fn parse_ladder(s: &str) -> Result<Vec<f64>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_fraction).collect()
}

/// Reads `key = value` lines; `#` starts a comment.
fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return usage(format!("{}:{}: expected `key = value`", path.display(), i + 1));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    match v.parse() {
        Ok(x) => Ok(x),
        Err(_) => usage(format!("invalid value `{v}` for `{key}`")),
    }
}

/// Fills options missing on the command line from the config file.
fn merge_config(mut args: RunArgs) -> Result<RunArgs> {
    let Some(path) = args.config.clone() else {
        return Ok(args);
    };
    for (k, v) in read_config(&path)? {
        match k.as_str() {
            "tau" => args.tau = args.tau.or(Some(v)),
            "K" => args.k = args.k.or(Some(parse_value(&k, &v)?)),
            "K-policy" => {
                if args.k_policy.is_none() {
                    args.k_policy = match PolicyArg::from_str(&v, false) {
                        Ok(p) => Some(p),
                        Err(_) => return usage(format!("invalid K-policy `{v}`")),
                    };
                }
            }
            "eta" => args.eta = args.eta.or(Some(parse_value(&k, &v)?)),
            "n" => args.n = args.n.or(Some(parse_value(&k, &v)?)),
            "rtol" => args.rtol = args.rtol.or(Some(parse_value(&k, &v)?)),
            "atol" => args.atol = args.atol.or(Some(parse_value(&k, &v)?)),
            "out" => args.out = args.out.or(Some(PathBuf::from(v))),
            "plot" => args.plot = args.plot || parse_value::<bool>(&k, &v)?,
            "cache-dir" => args.cache_dir = args.cache_dir.or(Some(PathBuf::from(v))),
            "jobs" => args.jobs = args.jobs.or(Some(parse_value(&k, &v)?)),
            other => return usage(format!("unknown config key `{other}`")),
        }
    }
    Ok(args)
}

fn configure(args: &RunArgs) -> Result<ExperimentSpec> {
    let Ok(mut spec) = builtin(&args.experiment) else {
        return usage(format!(
            "unknown experiment `{}` (expected one of {})",
            args.experiment,
            BUILTIN_NAMES.join(", ")
        ));
    };
    if let Some(t) = &args.tau {
        spec.taus = parse_ladder(t)?;
    }
    if let Some(n) = args.n {
        spec.n = vec![n; spec.dim()];
    }
    if let Some(r) = args.rtol {
        spec.ref_rtol = r;
    }
    if let Some(a) = args.atol {
        spec.ref_atol = a;
    }
    let policy = args.k_policy.or(args.k.map(|_| PolicyArg::Fixed));
    spec.k_policy = match policy {
        None => spec.k_policy,
        Some(PolicyArg::Median10) => KPolicySpec::Median10,
        Some(PolicyArg::Fixed) => match args.k {
            Some(k) if k > 0.0 => KPolicySpec::Fixed { k },
            _ => return usage("--K-policy fixed needs a positive --K"),
        },
        Some(PolicyArg::Certified) => {
            let eta = args.eta.unwrap_or(spec.nu);
            if spec.dim() < 3 {
                return usage("the certified policy needs a three-dimensional experiment");
            }
            KPolicySpec::Certified { eta }
        }
    };
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    Ok(spec)
}

fn run(args: RunArgs) -> Result<()> {
    let args = merge_config(args)?;
    let spec = configure(&args)?;
    let opts = SweepOptions { cache_dir: resolve_cache_dir(args.cache_dir.clone()), jobs: args.jobs };
    let outcome = run_sweep(&spec, &opts).with_context(|| format!("running {}", spec.name))?;
    let ladder: Vec<String> = spec.taus.iter().map(|t| format_tau(*t)).collect();
    println!("{}: tau = {}", spec.name, ladder.join(", "));
    print!("{}", outcome.report.table());
    println!(
        "reference: {} accepted steps ({}), {:.1} s total",
        outcome.reference.accepted,
        if outcome.reference_cached { "cached" } else { "computed" },
        outcome.seconds
    );
    if let Some(out) = &args.out {
        fs::write(out, outcome.report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
        if args.plot {
            let script = out.with_extension("gp");
            let image = out.with_extension("png");
            let text = plot_script(&outcome.report, &out.to_string_lossy(), &image.to_string_lossy());
            fs::write(&script, text).with_context(|| format!("writing {}", script.display()))?;
        }
    } else if args.plot {
        return usage("--plot needs --out");
    }
    Ok(())
}

/// Parsed `field key=value ...` arguments of the `lorentz` command.
struct FieldSpec {
    name: String,
    params: BTreeMap<String, String>,
}

impl FieldSpec {
    fn parse(words: &[String]) -> Result<FieldSpec> {
        let (name, rest) = words.split_first().expect("clap requires one word");
        let mut params = BTreeMap::new();
        for w in rest {
            let Some((k, v)) = w.split_once('=') else {
                return usage(format!("expected key=value, got `{w}`"));
            };
            params.insert(k.to_string(), v.to_string());
        }
        Ok(FieldSpec { name: name.clone(), params })
    }

    fn num(&self, key: &str, default: f64) -> Result<f64> {
        self.params.get(key).map_or(Ok(default), |v| parse_value(key, v))
    }

    fn dim(&self) -> Result<usize> {
        let default = if self.name == "ex3d" { 3 } else { 2 };
        let n = self.params.get("N").map_or(Ok(default), |v| parse_value("N", v))?;
        if !(2..=3).contains(&n) {
            return usage(format!("N must be 2 or 3, got {n}"));
        }
        Ok(n)
    }

    /// Samples the field; experiment fields use their face velocities.
    fn sample(&self) -> Result<SampledFunction> {
        let n = self.dim()?;
        if let "ex1" | "ex2" | "ex3" | "ex3d" = self.name.as_str() {
            if let Some(m) = self.params.get("mesh").filter(|m| *m != "experiment") {
                return usage(format!("field `{}` is sampled on its own mesh, not `{m}`", self.name));
            }
            let spec = builtin(&self.name)?;
            let mesh = spec.mesh()?;
            let vel = spec.velocity;
            let faces = FaceField::from_fn(&mesh, |x, v| vel.eval(x, v))?;
            return Ok(face_samples(&faces, &mesh).magnitude());
        }
        let default_mesh = if n == 3 { "unit-ball-grid" } else { "unit-disk-grid" };
        let grid = match self.params.get("mesh").map_or(default_mesh, String::as_str) {
            "unit-disk-grid" if n == 2 => SamplingGrid::unit_disk(1e-12, 16),
            "unit-ball-grid" if n == 3 => SamplingGrid::unit_ball(1e-12, 4, 4),
            "unit-square" if n == 2 => SamplingGrid::unit_square(100),
            other => return usage(format!("unknown mesh `{other}` for N = {n}")),
        };
        let f: Box<dyn Fn(&[f64]) -> f64> = match self.name.as_str() {
            "inv_r" => Box::new(inverse_radius(self.num("M", 1.0)?)),
            "const" => {
                let c = self.num("c", 1.0)?;
                Box::new(move |_| c)
            }
            other => return usage(format!("unknown field `{other}` (expected inv_r, const, ex1, ex2, ex3, ex3d)")),
        };
        Ok(SampledFunction::from_fn(&grid, f)?)
    }

    fn levels(&self, lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
        let lo = self.num("Kmin", lo)?;
        let hi = self.num("Kmax", self.num("K", hi)?)?;
        let count = self.num("levels", count as f64)? as usize;
        if !(lo > 0.0 && hi >= lo && count >= 1) {
            return usage("need 0 < Kmin <= Kmax and levels >= 1");
        }
        Ok(geometric_levels(lo, hi, count))
    }
}

fn lorentz(query: LorentzQuery, words: &[String]) -> Result<()> {
    let field = FieldSpec::parse(words)?;
    let g = field.sample()?;
    let n = field.dim()?;
    match query {
        LorentzQuery::Weaknorm => {
            let p = field.num("p", n as f64)?;
            if !(p >= 1.0) {
                return usage("p must be at least 1");
            }
            println!("weak_norm = {}", weak_norm(&g, p));
        }
        LorentzQuery::Dist => {
            let levels = field.levels(1.0, 1e3, 7)?;
            let d = distance_to_bounded(&g, n, &levels)?;
            println!("distance = {}", d.value);
            for (k, r) in d.levels.iter().zip(&d.remainders) {
                println!("  K = {k:.6e}  remainder = {r:.6e}");
            }
        }
        LorentzQuery::SelectK => {
            let delta = match (field.params.get("delta"), field.params.get("eta")) {
                (Some(d), _) => parse_value::<f64>("delta", d)?,
                (None, Some(e)) => match delta_threshold(parse_value("eta", e)?, n) {
                    Ok(d) => d,
                    Err(err) => return usage(err.to_string()),
                },
                (None, None) => return usage("selectK needs delta=... or eta=..."),
            };
            if !(delta >= 0.0) {
                return usage("delta must be nonnegative");
            }
            let levels = field.levels(1.0, 1e3, 31)?;
            let lvl = select_truncation_level(&g, n, delta, &levels)?;
            println!(
                "K = {}  remainder = {:.6e}  {}",
                lvl.k,
                lvl.delta,
                if lvl.certified { "certified" } else { "uncertified" }
            );
        }
    }
    Ok(())
}
