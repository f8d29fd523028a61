//! Multi-seed trials, grid and penalty sweeps, rate fitting and CSV output.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::backward_solver::{backward_induct, BackwardSolution, SolveOptions};
use crate::error::{Error, Result};
use crate::forward_sim::{simulate, GridSpec, Sampler};
use crate::model::{ModelSpec, PenaltyParam};
use crate::regression::BasisSpec;

/// Everything a single solver trial needs besides grid, penalty and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSetup {
    pub spec: ModelSpec,
    pub basis: BasisSpec,
    pub n_paths: usize,
    /// Fine refinement factor (only used by the Euler sampler).
    pub m: usize,
    pub sampler: Sampler,
}

impl TrialSetup {
    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        GridSpec::new(n, self.m, self.spec.maturity)
    }
}

/// Simulates paths for `seed` and runs the backward recursion on them.
pub fn run_trial_solution(
    setup: &TrialSetup,
    grid: &GridSpec,
    lam: PenaltyParam,
    seed: u64,
    options: SolveOptions,
) -> Result<BackwardSolution> {
    let paths = simulate(&setup.spec, grid, seed, setup.n_paths, setup.sampler);
    backward_induct(&paths, lam, &setup.basis, &setup.spec, options)
}

/// The `Y_0` estimate of one seeded trial.
pub fn run_trial(setup: &TrialSetup, grid: &GridSpec, lam: PenaltyParam, seed: u64) -> Result<f64> {
    run_trial_solution(setup, grid, lam, seed, SolveOptions::default()).map(|s| s.y0)
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub dt: f64,
    pub lambda: f64,
    /// Penalty exponent; penalty sweeps only.
    pub a: Option<f64>,
    /// Mean of the per-seed estimates.
    pub y0: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    /// Not stored in the CSV; zero for parsed rows.
    pub n_seeds: usize,
    /// Standard error of `y0` across seeds.
    pub se: f64,
}

/// Mean, standard error and errors against `reference`.
pub fn summarize(estimates: &[f64], reference: f64) -> (f64, f64, f64, f64) {
    let k = estimates.len() as f64;
    let mean = estimates.iter().fold(0.0, |acc, v| acc + v) / k;
    let se = if estimates.len() > 1 {
        let var = estimates.iter().fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / (k - 1.0);
        (var / k).sqrt()
    } else {
        f64::NAN
    };
    let abs_err = (mean - reference).abs();
    (mean, se, abs_err, abs_err / reference.abs())
}

/// Rows plus the summed trial wall time behind each row.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub row_seconds: Vec<f64>,
}

struct Job {
    n: usize,
    lam: PenaltyParam,
    a: Option<f64>,
}

fn run_jobs(setup: &TrialSetup, jobs: &[Job], seeds: &[u64], reference: f64) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    let pairs: Vec<(usize, u64)> = (0..jobs.len())
        .flat_map(|j| seeds.iter().map(move |&s| (j, s)))
        .collect();
    // collected in (job, seed) order whatever the schedule
    let results: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(j, seed)| {
            let job = &jobs[j];
            let grid = setup.grid(job.n)?;
            let start = Instant::now();
            let y0 = run_trial(setup, &grid, job.lam, seed)?;
            Ok((y0, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(jobs.len());
    let mut row_seconds = Vec::with_capacity(jobs.len());
    for (job, chunk) in jobs.iter().zip(results.chunks(seeds.len())) {
        let estimates: Vec<f64> = chunk.iter().map(|r| r.0).collect();
        let (y0, se, abs_err, rel_err) = summarize(&estimates, reference);
        rows.push(SweepRow {
            n: job.n,
            dt: setup.spec.maturity / job.n as f64,
            lambda: job.lam.value(),
            a: job.a,
            y0,
            abs_err,
            rel_err,
            n_seeds: seeds.len(),
            se,
        });
        row_seconds.push(chunk.iter().map(|r| r.1).sum());
    }
    Ok(SweepReport { rows, row_seconds })
}

/// Time-step sweep with `lambda = lambda0 * sqrt(n)`, rows sorted by `n`.
pub fn grid_sweep(
    setup: &TrialSetup,
    levels: &[usize],
    lambda0: f64,
    seeds: &[u64],
    reference: f64,
) -> Result<SweepReport> {
    if levels.is_empty() {
        return Err(Error::invalid("levels", "need at least one grid level"));
    }
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    let jobs = sorted
        .iter()
        .map(|&n| {
            Ok(Job {
                n,
                lam: PenaltyParam::coupled(lambda0, n)?,
                a: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_jobs(setup, &jobs, seeds, reference)
}

/// Penalty sweep at fixed `n` with `lambda = lambda_scale * n^a`.
pub fn penalty_sweep(
    setup: &TrialSetup,
    n: usize,
    exponents: &[f64],
    lambda_scale: f64,
    seeds: &[u64],
    reference: f64,
) -> Result<SweepReport> {
    if exponents.is_empty() {
        return Err(Error::invalid("exponents", "need at least one exponent"));
    }
    let jobs = exponents
        .iter()
        .map(|&a| {
            Ok(Job {
                n,
                lam: PenaltyParam::power_law(lambda_scale, n, a)?,
                a: Some(a),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_jobs(setup, &jobs, seeds, reference)
}

/// Constant `C` of the profile `C n^{-1/2}` fitted to the relative errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub c: f64,
    pub points_used: Vec<usize>,
}

/// Least squares of `rel_err` on `n^{-1/2}` without intercept:
/// `C = sum e_i n_i^{-1/2} / sum n_i^{-1}`.
pub fn fit_rate_constant(rows: &[SweepRow]) -> Result<RateFit> {
    if rows.len() < 2 {
        return Err(Error::invalid("rows", format!("rate fit needs at least two rows, got {}", rows.len())));
    }
    if let Some(bad) = rows.iter().find(|r| r.n == 0) {
        return Err(Error::invalid("rows", format!("row without a grid size (rel_err {})", bad.rel_err)));
    }
    let (num, den) = rows.iter().fold((0.0, 0.0), |(num, den), row| {
        let n = row.n as f64;
        (num + row.rel_err / n.sqrt(), den + 1.0 / n)
    });
    Ok(RateFit {
        c: num / den,
        points_used: rows.iter().map(|r| r.n).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Grid,
    Penalty,
}

impl SweepKind {
    pub fn header(self) -> &'static str {
        match self {
            SweepKind::Grid => "n,dt,lambda,Y0,abs_err,rel_err,se",
            SweepKind::Penalty => "a,lambda,Y0,abs_err,rel_err,se",
        }
    }
}

/// CSV text for the rows; floats use the shortest round-trip representation.
pub fn format_rows(rows: &[SweepRow], kind: SweepKind) -> String {
    let mut out = String::new();
    out.push_str(kind.header());
    out.push('\n');
    for r in rows {
        match kind {
            SweepKind::Grid => writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.n, r.dt, r.lambda, r.y0, r.abs_err, r.rel_err, r.se
            ),
            SweepKind::Penalty => writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?},{:?}",
                r.a.unwrap_or(f64::NAN),
                r.lambda,
                r.y0,
                r.abs_err,
                r.rel_err,
                r.se
            ),
        }
        .expect("writing to a String");
    }
    out
}

pub fn write_rows(rows: &[SweepRow], kind: SweepKind, path: &Path) -> Result<()> {
    std::fs::write(path, format_rows(rows, kind)).map_err(|e| Error::io(path, e))
}

/// Parses a sweep CSV written by [`write_rows`]; the schema is taken from the header.
pub fn parse_rows(text: &str, source: &Path) -> Result<(SweepKind, Vec<SweepRow>)> {
    let bad = |reason: String| Error::Csv {
        path: source.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let kind = match header.trim() {
        h if h == SweepKind::Grid.header() => SweepKind::Grid,
        h if h == SweepKind::Penalty.header() => SweepKind::Penalty,
        other => return Err(bad(format!("unrecognized header `{other}`"))),
    };

    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let want = kind.header().split(',').count();
        if fields.len() != want {
            return Err(bad(format!("line {}: expected {want} fields, got {}", idx + 2, fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("line {}: field {} `{}`: {e}", idx + 2, k + 1, fields[k])))
        };
        let row = match kind {
            SweepKind::Grid => SweepRow {
                n: fields[0]
                    .parse()
                    .map_err(|e| bad(format!("line {}: n `{}`: {e}", idx + 2, fields[0])))?,
                dt: num(1)?,
                lambda: num(2)?,
                a: None,
                y0: num(3)?,
                abs_err: num(4)?,
                rel_err: num(5)?,
                n_seeds: 0,
                se: num(6)?,
            },
            SweepKind::Penalty => SweepRow {
                n: 0,
                dt: 0.0,
                lambda: num(1)?,
                a: Some(num(0)?),
                y0: num(2)?,
                abs_err: num(3)?,
                rel_err: num(4)?,
                n_seeds: 0,
                se: num(5)?,
            },
        };
        rows.push(row);
    }
    Ok((kind, rows))
}

pub fn read_rows(path: &Path) -> Result<(SweepKind, Vec<SweepRow>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rows(&text, path)
}

/// Writes `key=value` lines in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in entries {
        writeln!(text, "{k}={v}").expect("writing to a String");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
