//! Penalized implicit backward induction over the coarse grid.
//!
//! ```text
//! Y_{t_n} = g(X_{t_n})
//! Z_{t_i} = E[Y_{t_{i+1}} dW_{i+1} | F_{t_i}] / dt
//! Y_{t_i} = E[Y_{t_{i+1}} | F_{t_i}] + f_lambda(t_i, X_{t_i}, Y_{t_i}, Z_{t_i}) dt
//! ```
//!
//! Conditional expectations are cross-sectional regressions on the basis; at
//! `t_0` every path shares `x0` so they reduce to sample means.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward_sim::PathEnsemble;
use crate::model::{penalized_driver, GameModel, ObstaclePair, PenaltyParam};
use crate::regression::{BasisSpec, LeastSquares};

const BISECTION_TOL: f64 = 1e-12;
const MAX_BRACKET_DOUBLINGS: u32 = 2000;
const MAX_BISECTIONS: u32 = 400;

/// Root of `y = c + dt * f_lambda(t, x, y, z)` with the number of
/// iterations spent (zero for the closed form).
pub fn implicit_step_solve_counted<M: GameModel + ?Sized>(
    model: &M,
    c: f64,
    t: f64,
    x: f64,
    lam: PenaltyParam,
    dt: f64,
    z: f64,
) -> Result<(f64, u32)> {
    if !(dt > 0.0) || dt * model.driver_lipschitz_y() >= 1.0 {
        return Err(Error::invalid(
            "dt",
            format!("need 0 < dt*K_y < 1, got dt = {dt}, K_y = {}", model.driver_lipschitz_y()),
        ));
    }
    match model.linear_discount_rate() {
        Some(rate) => affine_root(c, model.obstacles(t, x), rate, lam.value(), dt).map(|y| (y, 0)),
        None => bisection_root(model, c, t, x, lam, dt, z),
    }
}

/// Unique `y` solving `y = c + dt * f_lambda(t, x, y, z)`.
pub fn implicit_step_solve<M: GameModel + ?Sized>(
    model: &M,
    c: f64,
    t: f64,
    x: f64,
    lam: PenaltyParam,
    dt: f64,
    z: f64,
) -> Result<f64> {
    implicit_step_solve_counted(model, c, t, x, lam, dt, z).map(|(y, _)| y)
}

/// Closed-form root for the driver `-rate * y`.
///
/// `h(y) = y - dt f_lambda(y) - c` is increasing and piecewise affine with
/// kinks at the obstacles, and `h(p_b) = a p_b - c`, `h(p_w) = a p_w - c`
/// with `a = 1 + rate dt`, so the sign of those two values picks the piece.
fn affine_root(c: f64, ob: ObstaclePair, rate: f64, lambda: f64, dt: f64) -> Result<f64> {
    let a = 1.0 + rate * dt;
    let k = lambda * dt;
    let ObstaclePair { lower, upper } = ob;

    let y = if k == 0.0 {
        c / a
    } else if c < a * lower {
        lower + (c - a * lower) / (a + k)
    } else if c > a * upper {
        upper + (c - a * upper) / (a + k)
    } else {
        c / a
    };

    // c / a may land an ulp outside the band when c sits on a kink
    let slack = 4.0 * f64::EPSILON * lower.abs().max(upper.abs()).max(1.0);
    let consistent = if k == 0.0 {
        true
    } else if c < a * lower {
        y <= lower
    } else if c > a * upper {
        y >= upper
    } else {
        y >= lower - slack && y <= upper + slack
    };
    if !y.is_finite() || !consistent {
        return Err(Error::Solver(format!(
            "no region-consistent root for c = {c}, obstacles [{lower}, {upper}], lambda = {lambda}, dt = {dt}"
        )));
    }
    Ok(y)
}

/// Safeguarded bisection for a general driver.
fn bisection_root<M: GameModel + ?Sized>(
    model: &M,
    c: f64,
    t: f64,
    x: f64,
    lam: PenaltyParam,
    dt: f64,
    z: f64,
) -> Result<(f64, u32)> {
    if !c.is_finite() {
        return Err(Error::Solver(format!("non-finite conditional mean {c}")));
    }
    let h = |y: f64| y - dt * penalized_driver(model, lam, t, x, y, z) - c;

    let mut width = 1.0_f64.max(c.abs());
    let mut lo = c - width;
    let mut hi = c + width;
    let mut iterations = 0u32;
    while !(h(lo) <= 0.0 && h(hi) >= 0.0) {
        iterations += 1;
        if iterations > MAX_BRACKET_DOUBLINGS || !width.is_finite() {
            return Err(Error::Solver(format!("could not bracket implicit root around c = {c}")));
        }
        width *= 2.0;
        lo = c - width;
        hi = c + width;
    }

    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= BISECTION_TOL * mid.abs().max(1.0) || mid == lo || mid == hi {
            break;
        }
        iterations += 1;
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    Ok((y, iterations))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveOptions {
    /// Keep every `Y_{t_i}` path value (memory `(n + 1) * N`).
    pub retain_y: bool,
    /// Keep every `Z_{t_i}` path value.
    pub retain_z: bool,
}

/// Per-step statistics of the backward sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub solver_iterations: u64,
    /// Mean of `(p_b - Y)^+` across paths.
    pub lower_violation: f64,
    /// Mean of `(Y - p_w)^+` across paths.
    pub upper_violation: f64,
    pub regularized: bool,
}

/// Mean and standard error of an ensemble statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub y0: f64,
    pub z0: f64,
    /// `y_per_step[i][p]` when retained; index `n` holds the terminal payoff.
    pub y_per_step: Option<Vec<Vec<f64>>>,
    pub z_per_step: Option<Vec<Vec<f64>>>,
    /// Steps `n-1, ..., 1, 0` in the order they were solved.
    pub diagnostics: Vec<StepDiagnostics>,
    /// `(p_b(t_i, X_{t_i}) - Y_{t_i})^+` averaged over steps `1..n` and paths.
    pub lower_gap: MeanEstimate,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64
}

/// Runs the penalized backward recursion on a path ensemble.
pub fn backward_induct<M: GameModel + ?Sized>(
    paths: &PathEnsemble,
    lam: PenaltyParam,
    basis: &BasisSpec,
    model: &M,
    options: SolveOptions,
) -> Result<BackwardSolution> {
    let grid = paths.grid;
    let n = grid.n;
    let n_paths = paths.n_paths;
    let dt = grid.dt();
    if n_paths < basis.n_features().max(1) {
        return Err(Error::Regression(format!(
            "{n_paths} paths cannot support {} basis features",
            basis.n_features()
        )));
    }

    let mut y: Vec<f64> = paths.x(n).iter().map(|&x| model.terminal(x)).collect();
    let mut y_store = options.retain_y.then(|| vec![Vec::new(); n + 1]);
    let mut z_store = options.retain_z.then(|| vec![Vec::new(); n + 1]);
    let mut diagnostics = Vec::with_capacity(n);
    // per-path running sum of lower-obstacle violations over steps 1..n
    let mut gap_per_path = vec![0.0; n_paths];

    for i in (1..n).rev() {
        let t = grid.time(i);
        let xs = paths.x(i);
        let dw = paths.increments(i);

        let design = basis.design_matrix(xs);
        let ls = LeastSquares::new(&design)?;
        let cont = ls.fit(&design, &y)?;
        let z_targets: Vec<f64> = y.iter().zip(dw).map(|(v, w)| v * w / dt).collect();
        let z_fit = ls.fit(&design, &z_targets)?;
        let c = cont.fitted_values(&design);
        let z = z_fit.fitted_values(&design);

        let solved: Vec<(f64, u32)> = (0..n_paths)
            .into_par_iter()
            .map(|p| implicit_step_solve_counted(model, c[p], t, xs[p], lam, dt, z[p]))
            .collect::<Result<_>>()?;

        let mut iterations = 0u64;
        let mut lower_sum = 0.0;
        let mut upper_sum = 0.0;
        for (p, &(value, iters)) in solved.iter().enumerate() {
            y[p] = value;
            iterations += u64::from(iters);
            let ob = model.obstacles(t, xs[p]);
            let below = (ob.lower - value).max(0.0);
            lower_sum += below;
            upper_sum += (value - ob.upper).max(0.0);
            gap_per_path[p] += below;
        }
        diagnostics.push(StepDiagnostics {
            step: i,
            solver_iterations: iterations,
            lower_violation: lower_sum / n_paths as f64,
            upper_violation: upper_sum / n_paths as f64,
            regularized: ls.is_regularized(),
        });

        if let Some(store) = y_store.as_mut() {
            store[i] = y.clone();
        }
        if let Some(store) = z_store.as_mut() {
            store[i] = z;
        }
    }

    let dw0 = paths.increments(0);
    let c0 = mean(&y);
    let z_targets: Vec<f64> = y.iter().zip(dw0).map(|(v, w)| v * w / dt).collect();
    let z0 = mean(&z_targets);
    let x0 = paths.x(0)[0];
    let (y0, iters) = implicit_step_solve_counted(model, c0, 0.0, x0, lam, dt, z0)?;
    let ob0 = model.obstacles(0.0, x0);
    diagnostics.push(StepDiagnostics {
        step: 0,
        solver_iterations: u64::from(iters),
        lower_violation: (ob0.lower - y0).max(0.0),
        upper_violation: (y0 - ob0.upper).max(0.0),
        regularized: false,
    });
    if !y0.is_finite() {
        return Err(Error::Solver(format!("non-finite initial value {y0}")));
    }

    let interior_steps = n.saturating_sub(1);
    let lower_gap = if interior_steps == 0 {
        MeanEstimate { mean: 0.0, se: 0.0 }
    } else {
        let per_path: Vec<f64> = gap_per_path.iter().map(|g| g / interior_steps as f64).collect();
        let m = mean(&per_path);
        let var = per_path.iter().fold(0.0, |acc, g| acc + (g - m) * (g - m)) / (n_paths.max(2) - 1) as f64;
        MeanEstimate {
            mean: m,
            se: (var / n_paths as f64).sqrt(),
        }
    };

    if let Some(store) = y_store.as_mut() {
        store[0] = vec![y0];
        store[n] = paths.x(n).iter().map(|&x| model.terminal(x)).collect();
    }
    if let Some(store) = z_store.as_mut() {
        store[0] = vec![z0];
    }

    Ok(BackwardSolution {
        y0,
        z0,
        y_per_step: y_store,
        z_per_step: z_store,
        diagnostics,
        lower_gap,
    })
}
