//! Run configuration and subcommand dispatch for the `drbsde` binary.
//!
//! Configs are flat `key = value` files with `#` comments. Any key can be
//! overridden from the environment as `DRBSDE_<KEY>` (upper case).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::{
    fit_rate_constant, grid_sweep, penalty_sweep, read_rows, run_trial, summarize, write_manifest, write_rows,
    SweepKind, SweepReport, TrialSetup,
};
use crate::forward_sim::{GridSpec, Sampler};
use crate::model::{validate_regime, ModelSpec, PenaltyParam};
use crate::reference::{bs_put_price, crr_dynkin_price, TreeSpec};
use crate::regression::BasisSpec;

pub const ENV_PREFIX: &str = "DRBSDE_";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ACCEPTANCE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// How the penalty is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    /// `lambda = value`.
    Literal(f64),
    /// `lambda = lambda0 * sqrt(n)`.
    Coupled(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ModelSpec,
    pub n: usize,
    pub m: usize,
    pub n_paths: usize,
    pub seeds: Vec<u64>,
    pub basis_degree: usize,
    pub include_payoff: bool,
    pub lambda: LambdaChoice,
    pub levels: Vec<usize>,
    pub exponents: Vec<f64>,
    pub lambda_scale: f64,
    pub n_tree: usize,
    pub sampler: Sampler,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            spec: ModelSpec::default(),
            n: 200,
            m: 1,
            n_paths: 60_000,
            seeds: vec![1, 2, 3],
            basis_degree: 8,
            include_payoff: true,
            lambda: LambdaChoice::Coupled(2000.0),
            levels: vec![25, 50, 100, 200, 400, 800, 1600, 3200],
            exponents: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0],
            lambda_scale: 2000.0,
            n_tree: 10_000,
            sampler: Sampler::Exact,
            output: PathBuf::from("sweep.csv"),
        }
    }
}

const KEYS: &[&str] = &[
    "r",
    "sigma",
    "x0",
    "strike",
    "maturity",
    "delta",
    "n",
    "m",
    "n_paths",
    "seeds",
    "basis_degree",
    "include_payoff",
    "lambda",
    "lambda0",
    "levels",
    "exponents",
    "lambda_scale",
    "n_tree",
    "sampler",
    "output",
];

struct Entry {
    value: String,
    line: usize,
}

fn config_err(line: usize, key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_scalar<T: std::str::FromStr>(entry: &Entry, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    entry
        .value
        .parse::<T>()
        .map_err(|e| config_err(entry.line, key, format!("cannot parse `{}`: {e}", entry.value)))
}

fn parse_list<T: std::str::FromStr>(entry: &Entry, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = entry
        .value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| config_err(entry.line, key, format!("cannot parse list item `{s}`: {e}")))
        })
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(config_err(entry.line, key, "list must not be empty"));
    }
    Ok(items)
}

fn parse_bool(entry: &Entry, key: &str) -> Result<bool> {
    match entry.value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(config_err(entry.line, key, format!("expected a boolean, got `{other}`"))),
    }
}

/// Parses config text with no environment overrides.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_env(text, std::iter::empty())
}

/// Parses config text, then applies `DRBSDE_*` overrides from `env`.
///
/// Environment errors are reported with line 0.
pub fn parse_config_with_env<I>(text: &str, env: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(line, key, "unknown key"));
        }
        if entries.contains_key(key) {
            return Err(config_err(line, key, "duplicate key"));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }

    for (name, value) in env {
        let Some(suffix) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = suffix.to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(config_err(0, &name, "unknown key in environment override"));
        }
        entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line: 0,
            },
        );
    }

    build(&entries)
}

fn build(entries: &BTreeMap<String, Entry>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let get = |k: &str| entries.get(k);

    let mut spec = cfg.spec;
    for (key, slot) in [
        ("r", &mut spec.r),
        ("sigma", &mut spec.sigma),
        ("x0", &mut spec.x0),
        ("strike", &mut spec.strike),
        ("maturity", &mut spec.maturity),
        ("delta", &mut spec.delta),
    ] {
        if let Some(e) = get(key) {
            *slot = parse_scalar(e, key)?;
        }
    }
    if let Err(Error::InvalidParameter { name, reason }) = spec.validate() {
        let line = get(name).map_or(0, |e| e.line);
        return Err(config_err(line, name, reason));
    }
    cfg.spec = spec;

    let positive = |key: &str, value: usize| -> Result<usize> {
        if value == 0 {
            Err(config_err(get(key).map_or(0, |e| e.line), key, "must be >= 1"))
        } else {
            Ok(value)
        }
    };
    if let Some(e) = get("n") {
        cfg.n = positive("n", parse_scalar(e, "n")?)?;
    }
    if let Some(e) = get("m") {
        cfg.m = positive("m", parse_scalar(e, "m")?)?;
    }
    if let Some(e) = get("n_paths") {
        cfg.n_paths = positive("n_paths", parse_scalar(e, "n_paths")?)?;
    }
    if let Some(e) = get("n_tree") {
        cfg.n_tree = positive("n_tree", parse_scalar(e, "n_tree")?)?;
    }
    if let Some(e) = get("seeds") {
        cfg.seeds = parse_list(e, "seeds")?;
    }
    if let Some(e) = get("basis_degree") {
        cfg.basis_degree = parse_scalar(e, "basis_degree")?;
        if cfg.basis_degree > crate::regression::MAX_DEGREE {
            return Err(config_err(e.line, "basis_degree", "must be <= 10"));
        }
    }
    if let Some(e) = get("include_payoff") {
        cfg.include_payoff = parse_bool(e, "include_payoff")?;
    }

    let nonneg = |e: &Entry, key: &str| -> Result<f64> {
        let v: f64 = parse_scalar(e, key)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(config_err(e.line, key, format!("must be finite and >= 0, got {v}")));
        }
        Ok(v)
    };
    cfg.lambda = match (get("lambda"), get("lambda0")) {
        (Some(_), Some(e0)) => {
            return Err(config_err(e0.line, "lambda0", "`lambda` and `lambda0` are mutually exclusive"));
        }
        (Some(e), None) => LambdaChoice::Literal(nonneg(e, "lambda")?),
        (None, Some(e)) => LambdaChoice::Coupled(nonneg(e, "lambda0")?),
        (None, None) => cfg.lambda,
    };
    if let Some(e) = get("lambda_scale") {
        cfg.lambda_scale = nonneg(e, "lambda_scale")?;
    }
    if let Some(e) = get("levels") {
        let levels: Vec<usize> = parse_list(e, "levels")?;
        if levels.contains(&0) {
            return Err(config_err(e.line, "levels", "grid levels must be >= 1"));
        }
        cfg.levels = levels;
    }
    if let Some(e) = get("exponents") {
        let exps: Vec<f64> = parse_list(e, "exponents")?;
        if exps.iter().any(|a| !a.is_finite()) {
            return Err(config_err(e.line, "exponents", "exponents must be finite"));
        }
        cfg.exponents = exps;
    }
    if let Some(e) = get("sampler") {
        cfg.sampler = e.value.parse().map_err(|msg: String| config_err(e.line, "sampler", msg))?;
    }
    if let Some(e) = get("output") {
        if e.value.is_empty() {
            return Err(config_err(e.line, "output", "must not be empty"));
        }
        cfg.output = PathBuf::from(&e.value);
    }
    Ok(cfg)
}

fn join<T: std::fmt::Debug>(items: &[T]) -> String {
    items.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Canonical `key=value` lines covering every result-affecting setting.
    /// The output path is excluded.
    pub fn canonical_entries(&self) -> Vec<(String, String)> {
        let s = &self.spec;
        let (lambda_key, lambda_value) = match self.lambda {
            LambdaChoice::Literal(v) => ("lambda", v),
            LambdaChoice::Coupled(v) => ("lambda0", v),
        };
        vec![
            ("r".into(), format!("{:?}", s.r)),
            ("sigma".into(), format!("{:?}", s.sigma)),
            ("x0".into(), format!("{:?}", s.x0)),
            ("strike".into(), format!("{:?}", s.strike)),
            ("maturity".into(), format!("{:?}", s.maturity)),
            ("delta".into(), format!("{:?}", s.delta)),
            ("n".into(), self.n.to_string()),
            ("m".into(), self.m.to_string()),
            ("n_paths".into(), self.n_paths.to_string()),
            ("seeds".into(), join(&self.seeds)),
            ("basis_degree".into(), self.basis_degree.to_string()),
            ("include_payoff".into(), self.include_payoff.to_string()),
            (lambda_key.into(), format!("{lambda_value:?}")),
            ("levels".into(), join(&self.levels)),
            ("exponents".into(), join(&self.exponents)),
            ("lambda_scale".into(), format!("{:?}", self.lambda_scale)),
            ("n_tree".into(), self.n_tree.to_string()),
            ("sampler".into(), self.sampler.to_string()),
        ]
    }

    /// First 16 hex digits of the SHA-256 of the canonical entries.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.canonical_entries() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().take(8).fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }

    pub fn basis(&self) -> Result<BasisSpec> {
        BasisSpec::new(self.basis_degree, self.include_payoff, self.spec.x0, self.spec.strike)
    }

    pub fn trial_setup(&self) -> Result<TrialSetup> {
        Ok(TrialSetup {
            spec: self.spec,
            basis: self.basis()?,
            n_paths: self.n_paths,
            m: self.m,
            sampler: self.sampler,
        })
    }

    pub fn penalty_at(&self, n: usize) -> Result<PenaltyParam> {
        match self.lambda {
            LambdaChoice::Literal(v) => PenaltyParam::new(v),
            LambdaChoice::Coupled(l0) => PenaltyParam::coupled(l0, n),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n, self.m, self.spec.maturity)
    }

    /// Regime warnings for the configured `(n, m, lambda)`.
    pub fn warnings(&self) -> Result<Vec<String>> {
        Ok(validate_regime(&self.spec, self.penalty_at(self.n)?, &self.grid()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Reference,
    Solve,
    SweepGrid,
    SweepPenalty,
    FitRate,
    CheckEuropean,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Reference => "reference",
            Subcommand::Solve => "solve",
            Subcommand::SweepGrid => "sweep-grid",
            Subcommand::SweepPenalty => "sweep-penalty",
            Subcommand::FitRate => "fit-rate",
            Subcommand::CheckEuropean => "check-european",
        }
    }
}

/// Paths a subcommand may read or write.
#[derive(Debug, Clone, Default)]
pub struct Io {
    /// Overrides the configured output path.
    pub out: Option<PathBuf>,
    /// Input CSV for `fit-rate`; defaults to the output path.
    pub csv: Option<PathBuf>,
}

/// Number printed with up to 12 decimals and trailing zeros removed.
pub fn fmt_short(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}

pub fn manifest_path(csv: &Path) -> PathBuf {
    let mut p = csv.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

pub fn timing_path(csv: &Path) -> PathBuf {
    let mut p = csv.as_os_str().to_owned();
    p.push(".timing");
    PathBuf::from(p)
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Runs one subcommand. Returns the process exit status.
pub fn dispatch(cmd: Subcommand, cfg: &RunConfig, io: &Io, stdout: &mut dyn Write) -> Result<i32> {
    writeln!(stdout, "config_fingerprint={}", cfg.fingerprint()).map_err(io_err)?;
    let out_path = io.out.clone().unwrap_or_else(|| cfg.output.clone());

    match cmd {
        Subcommand::Reference => {
            let value = crr_dynkin_price(&cfg.spec, TreeSpec::new(cfg.n_tree)?)?;
            writeln!(stdout, "n_tree={}", cfg.n_tree).map_err(io_err)?;
            writeln!(stdout, "reference={value:.12}").map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Subcommand::Solve => {
            let setup = cfg.trial_setup()?;
            let grid = cfg.grid()?;
            let lam = cfg.penalty_at(cfg.n)?;
            let seed = cfg.seeds[0];
            let y0 = run_trial(&setup, &grid, lam, seed)?;
            writeln!(stdout, "n={} lambda={:?} seed={seed} n_paths={}", cfg.n, lam.value(), cfg.n_paths)
                .map_err(io_err)?;
            writeln!(stdout, "y0={y0:?}").map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Subcommand::SweepGrid => {
            let lambda0 = match cfg.lambda {
                LambdaChoice::Coupled(l0) => l0,
                LambdaChoice::Literal(_) => {
                    return Err(config_err(0, "lambda", "sweep-grid couples lambda to n; set `lambda0` instead"));
                }
            };
            let reference = crr_dynkin_price(&cfg.spec, TreeSpec::new(cfg.n_tree)?)?;
            let report = grid_sweep(&cfg.trial_setup()?, &cfg.levels, lambda0, &cfg.seeds, reference)?;
            let fit = if report.rows.len() >= 2 {
                Some(fit_rate_constant(&report.rows)?)
            } else {
                None
            };
            emit_sweep(cfg, &out_path, SweepKind::Grid, &report, reference, fit.as_ref().map(|f| f.c), stdout)?;
            Ok(EXIT_OK)
        }
        Subcommand::SweepPenalty => {
            let reference = crr_dynkin_price(&cfg.spec, TreeSpec::new(cfg.n_tree)?)?;
            let report = penalty_sweep(
                &cfg.trial_setup()?,
                cfg.n,
                &cfg.exponents,
                cfg.lambda_scale,
                &cfg.seeds,
                reference,
            )?;
            emit_sweep(cfg, &out_path, SweepKind::Penalty, &report, reference, None, stdout)?;
            Ok(EXIT_OK)
        }
        Subcommand::FitRate => {
            let csv = io.csv.clone().unwrap_or(out_path);
            let (kind, rows) = read_rows(&csv)?;
            if kind != SweepKind::Grid {
                return Err(Error::Csv {
                    path: csv,
                    reason: "rate fit needs a grid-sweep CSV".into(),
                });
            }
            let fit = fit_rate_constant(&rows)?;
            writeln!(stdout, "points={}", join(&fit.points_used)).map_err(io_err)?;
            writeln!(stdout, "rate_constant={}", fmt_short(fit.c)).map_err(io_err)?;
            Ok(EXIT_OK)
        }
        Subcommand::CheckEuropean => {
            let setup = cfg.trial_setup()?;
            let grid = cfg.grid()?;
            let zero = PenaltyParam::new(0.0)?;
            let estimates = cfg
                .seeds
                .iter()
                .map(|&seed| run_trial(&setup, &grid, zero, seed))
                .collect::<Result<Vec<_>>>()?;
            let closed_form = bs_put_price(&cfg.spec);
            let (mean, se, abs_err, _) = summarize(&estimates, closed_form);
            let pass = se.is_finite() && abs_err <= 3.0 * se;
            writeln!(stdout, "y0_mean={mean:?}").map_err(io_err)?;
            writeln!(stdout, "bs_put={closed_form:?}").map_err(io_err)?;
            writeln!(stdout, "se={se:?}").map_err(io_err)?;
            writeln!(stdout, "abs_diff={abs_err:?}").map_err(io_err)?;
            writeln!(stdout, "within_3se={pass}").map_err(io_err)?;
            Ok(if pass { EXIT_OK } else { EXIT_ACCEPTANCE })
        }
    }
}

fn emit_sweep(
    cfg: &RunConfig,
    out_path: &Path,
    kind: SweepKind,
    report: &SweepReport,
    reference: f64,
    rate_constant: Option<f64>,
    stdout: &mut dyn Write,
) -> Result<()> {
    write_rows(&report.rows, kind, out_path)?;

    let mut manifest = vec![
        ("config_fingerprint".to_string(), cfg.fingerprint()),
        ("kind".to_string(), match kind {
            SweepKind::Grid => "grid".to_string(),
            SweepKind::Penalty => "penalty".to_string(),
        }),
    ];
    manifest.extend(cfg.canonical_entries());
    manifest.push(("reference".into(), format!("{reference:?}")));
    manifest.push(("rows".into(), report.rows.len().to_string()));
    if let Some(c) = rate_constant {
        manifest.push(("rate_constant".into(), format!("{c:?}")));
    }
    write_manifest(&manifest_path(out_path), &manifest)?;

    // wall times live in their own file so the manifest stays reproducible
    let timing: Vec<(String, String)> = report
        .rows
        .iter()
        .zip(&report.row_seconds)
        .map(|(row, secs)| {
            let key = match row.a {
                Some(a) => format!("row_seconds_a={a:?}"),
                None => format!("row_seconds_n={}", row.n),
            };
            (key, format!("{secs:.3}"))
        })
        .collect();
    write_manifest(&timing_path(out_path), &timing)?;

    writeln!(stdout, "reference={reference:.12}").map_err(io_err)?;
    for row in &report.rows {
        match kind {
            SweepKind::Grid => writeln!(
                stdout,
                "n={} lambda={:.4e} Y0={:.10} abs_err={:.4e} rel_err={:.4e} se={:.2e}",
                row.n, row.lambda, row.y0, row.abs_err, row.rel_err, row.se
            ),
            SweepKind::Penalty => writeln!(
                stdout,
                "a={} lambda={:.5e} Y0={:.10} abs_err={:.4e} rel_err={:.4e} se={:.2e}",
                row.a.unwrap_or(f64::NAN),
                row.lambda,
                row.y0,
                row.abs_err,
                row.rel_err,
                row.se
            ),
        }
        .map_err(io_err)?;
    }
    if let Some(c) = rate_constant {
        writeln!(stdout, "rate_constant={}", fmt_short(c)).map_err(io_err)?;
    }
    writeln!(stdout, "csv={}", out_path.display()).map_err(io_err)?;
    Ok(())
}
