//! Forward path generation on a coarse/fine grid pair.
//!
//! Brownian increments are drawn on the fine grid from a per-path ChaCha
//! stream keyed by `(seed, path_index)`, so the draws of one path never depend
//! on how many other paths exist or on thread scheduling. Coarse increments are
//! left-to-right sums of `m` consecutive fine increments.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GameModel, ModelSpec};

/// Coarse backward grid of `n` steps refined `m` times for forward simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub m: usize,
    pub maturity: f64,
}

impl GridSpec {
    pub fn new(n: usize, m: usize, maturity: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "coarse step count must be >= 1"));
        }
        if m == 0 {
            return Err(Error::invalid("m", "refinement factor must be >= 1"));
        }
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(Error::invalid("maturity", "must be > 0"));
        }
        Ok(GridSpec { n, m, maturity })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.maturity / self.n as f64
    }

    #[inline]
    pub fn fine_dt(&self) -> f64 {
        self.maturity / (self.m * self.n) as f64
    }

    pub fn fine_steps(&self) -> usize {
        self.m * self.n
    }

    /// Coarse time `t_i`.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.maturity * i as f64 / self.n as f64
    }

    /// Fine time `t~_j`; `fine_time(i * m) == time(i)` exactly.
    #[inline]
    pub fn fine_time(&self, j: usize) -> f64 {
        // written as a ratio of integers so coarse nodes land on identical values
        if j % self.m == 0 {
            self.time(j / self.m)
        } else {
            self.maturity * j as f64 / self.fine_steps() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// Exact geometric Brownian motion transition on the coarse grid.
    Exact,
    /// Euler–Maruyama on the fine grid, projected to the coarse grid.
    Euler,
}

impl Sampler {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampler::Exact => "exact",
            Sampler::Euler => "euler",
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Sampler::Exact),
            "euler" => Ok(Sampler::Euler),
            other => Err(format!("unknown sampler `{other}` (expected exact|euler)")),
        }
    }
}

/// Simulated forward paths, stored time-major on the coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: GridSpec,
    pub n_paths: usize,
    pub seed: u64,
    pub sampler: Sampler,
    /// `coarse_x[i][p]` is `X_{t_i}` on path `p`.
    coarse_x: Vec<Vec<f64>>,
    /// `coarse_increments[i][p]` is `W_{t_{i+1}} - W_{t_i}` on path `p`.
    coarse_increments: Vec<Vec<f64>>,
    /// Path-major fine values, retained only on request.
    fine_x: Option<Vec<Vec<f64>>>,
}

impl PathEnsemble {
    /// Forward values at coarse time index `i` across all paths.
    pub fn x(&self, i: usize) -> &[f64] {
        &self.coarse_x[i]
    }

    /// `Delta W_{i+1}` across all paths, for `i in 0..n`.
    pub fn increments(&self, i: usize) -> &[f64] {
        &self.coarse_increments[i]
    }

    pub fn path_x(&self, path: usize, i: usize) -> f64 {
        self.coarse_x[i][path]
    }

    pub fn path_increment(&self, path: usize, i: usize) -> f64 {
        self.coarse_increments[i][path]
    }

    /// Fine-grid values of one path when the ensemble was built with `keep_fine`.
    pub fn fine_path(&self, path: usize) -> Option<&[f64]> {
        self.fine_x.as_ref().map(|f| f[path].as_slice())
    }

    /// Dumps `path,i,t,x` rows for debugging.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "path,i,t,x")?;
            for p in 0..self.n_paths {
                for i in 0..=self.grid.n {
                    writeln!(w, "{},{},{},{}", p, i, self.grid.time(i), self.coarse_x[i][p])?;
                }
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// The `m * n` fine Brownian increments of path `path_index`, each
/// `N(0, dt_fine)`. A pure function of `(seed, path_index, grid)`.
pub fn derive_increments(seed: u64, path_index: u64, grid: &GridSpec) -> Vec<f64> {
    let mut rng = path_rng(seed, path_index);
    let scale = grid.fine_dt().sqrt();
    (0..grid.fine_steps())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        })
        .collect()
}

/// Sums each block of `m` fine increments left to right.
pub fn coarse_increments(fine: &[f64], grid: &GridSpec) -> Vec<f64> {
    fine.chunks_exact(grid.m)
        .map(|block| block.iter().fold(0.0, |acc, &dw| acc + dw))
        .collect()
}

/// One simulated path: coarse values, coarse increments, optional fine values.
#[derive(Debug, Clone)]
pub struct PathRow {
    pub coarse_x: Vec<f64>,
    pub coarse_increments: Vec<f64>,
    pub fine_x: Option<Vec<f64>>,
}

/// Exact GBM transition driven by the given fine increments.
pub fn gbm_path_from_increments(spec: &ModelSpec, grid: &GridSpec, fine: &[f64]) -> PathRow {
    let dw = coarse_increments(fine, grid);
    let drift = (spec.r - 0.5 * spec.sigma * spec.sigma) * grid.dt();
    let mut x = Vec::with_capacity(grid.n + 1);
    let mut level = spec.x0;
    x.push(level);
    for &inc in &dw {
        level *= (drift + spec.sigma * inc).exp();
        x.push(level);
    }
    PathRow {
        coarse_x: x,
        coarse_increments: dw,
        fine_x: None,
    }
}

/// Euler–Maruyama recursion on the fine grid driven by the given increments;
/// coarse values are the fine values at indices `i * m`.
pub fn euler_path_from_increments<M: GameModel + ?Sized>(
    model: &M,
    grid: &GridSpec,
    fine: &[f64],
    keep_fine: bool,
) -> PathRow {
    let h = grid.fine_dt();
    let mut fine_x = Vec::with_capacity(fine.len() + 1);
    let mut level = model.initial_state();
    fine_x.push(level);
    for (j, &dw) in fine.iter().enumerate() {
        let t = grid.fine_time(j);
        level = level + model.drift(t, level) * h + model.diffusion(t, level) * dw;
        fine_x.push(level);
    }
    let coarse_x = fine_x.iter().step_by(grid.m).copied().collect();
    PathRow {
        coarse_x,
        coarse_increments: coarse_increments(fine, grid),
        fine_x: keep_fine.then_some(fine_x),
    }
}

const BLOCK: usize = 4096;

fn assemble<F>(grid: GridSpec, seed: u64, n_paths: usize, sampler: Sampler, keep_fine: bool, row: F) -> PathEnsemble
where
    F: Fn(&[f64]) -> PathRow + Sync,
{
    let mut coarse_x = vec![Vec::with_capacity(n_paths); grid.n + 1];
    let mut coarse_inc = vec![Vec::with_capacity(n_paths); grid.n];
    let mut fine_x = keep_fine.then(|| Vec::with_capacity(n_paths));

    // blocks are generated in parallel and scattered in path order
    for start in (0..n_paths).step_by(BLOCK) {
        let end = (start + BLOCK).min(n_paths);
        let rows: Vec<PathRow> = (start..end)
            .into_par_iter()
            .map(|p| row(&derive_increments(seed, p as u64, &grid)))
            .collect();
        for r in rows {
            for (col, v) in coarse_x.iter_mut().zip(&r.coarse_x) {
                col.push(*v);
            }
            for (col, v) in coarse_inc.iter_mut().zip(&r.coarse_increments) {
                col.push(*v);
            }
            if let (Some(store), Some(f)) = (fine_x.as_mut(), r.fine_x) {
                store.push(f);
            }
        }
    }

    PathEnsemble {
        grid,
        n_paths,
        seed,
        sampler,
        coarse_x,
        coarse_increments: coarse_inc,
        fine_x,
    }
}

/// Paths sampled exactly from the Black–Scholes transition on the coarse grid.
pub fn simulate_exact_gbm(spec: &ModelSpec, grid: &GridSpec, seed: u64, n_paths: usize) -> PathEnsemble {
    assemble(*grid, seed, n_paths, Sampler::Exact, false, |fine| {
        gbm_path_from_increments(spec, grid, fine)
    })
}

/// Two-grid Euler–Maruyama paths for any model's drift and diffusion.
pub fn simulate_euler_two_grid<M: GameModel + ?Sized>(
    model: &M,
    grid: &GridSpec,
    seed: u64,
    n_paths: usize,
    keep_fine: bool,
) -> PathEnsemble {
    assemble(*grid, seed, n_paths, Sampler::Euler, keep_fine, |fine| {
        euler_path_from_increments(model, grid, fine, keep_fine)
    })
}

/// Dispatches on the sampler tag for the built-in model.
pub fn simulate(spec: &ModelSpec, grid: &GridSpec, seed: u64, n_paths: usize, sampler: Sampler) -> PathEnsemble {
    match sampler {
        Sampler::Exact => simulate_exact_gbm(spec, grid, seed, n_paths),
        Sampler::Euler => simulate_euler_two_grid(spec, grid, seed, n_paths, false),
    }
}
