//! Penalty-free reference values: the CRR binomial Dynkin-game recursion and
//! the closed-form Black–Scholes European put.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeSpec {
    pub n_tree: usize,
}

impl TreeSpec {
    pub fn new(n_tree: usize) -> Result<Self> {
        if n_tree == 0 {
            return Err(Error::invalid("n_tree", "must be >= 1"));
        }
        Ok(TreeSpec { n_tree })
    }
}

/// Which obstacle clamps the recursion applies at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exercise {
    /// `min(p_w, max(p_b, cont))`.
    Game,
    /// `max(p_b, min(p_w, cont))`; identical to `Game` whenever `p_b <= p_w`.
    GameReversed,
    /// Holder exercise only.
    American,
    /// No clamps.
    European,
}

/// CRR lattice parameters `(u, d, p, discount)` for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrrParams {
    pub up: f64,
    pub down: f64,
    pub p: f64,
    pub discount: f64,
    pub step: f64,
}

pub fn crr_params(spec: &ModelSpec, tree: TreeSpec) -> Result<CrrParams> {
    let step = spec.maturity / tree.n_tree as f64;
    let up = (spec.sigma * step.sqrt()).exp();
    let down = 1.0 / up;
    let p = ((spec.r * step).exp() - down) / (up - down);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(
            "n_tree",
            format!("risk-neutral up probability {p} outside (0, 1)"),
        ));
    }
    Ok(CrrParams {
        up,
        down,
        p,
        discount: (-spec.r * step).exp(),
        step,
    })
}

/// Backward recursion over a single value array of length `n_tree + 1`.
pub fn crr_price(spec: &ModelSpec, tree: TreeSpec, exercise: Exercise) -> Result<f64> {
    let CrrParams { up, p, discount, step, .. } = crr_params(spec, tree)?;
    let n = tree.n_tree;
    let log_up = up.ln();
    // levels[k] = x0 * u^(k - n); node j at level i sits at u^(i - 2j)
    let levels: Vec<f64> = (0..=2 * n)
        .map(|k| spec.x0 * (log_up * (k as f64 - n as f64)).exp())
        .collect();
    let node = |i: usize, j: usize| levels[n + i - 2 * j];

    let mut values: Vec<f64> = (0..=n).map(|j| spec.put_payoff(node(n, j))).collect();
    for i in (0..n).rev() {
        let t = step * i as f64;
        for j in 0..=i {
            let cont = discount * (p * values[j] + (1.0 - p) * values[j + 1]);
            let ob = spec.obstacles_unchecked(t, node(i, j));
            values[j] = match exercise {
                Exercise::Game => ob.upper.min(ob.lower.max(cont)),
                Exercise::GameReversed => ob.lower.max(ob.upper.min(cont)),
                Exercise::American => ob.lower.max(cont),
                Exercise::European => cont,
            };
        }
    }
    Ok(values[0])
}

/// Game-put value from the CRR Dynkin recursion.
pub fn crr_dynkin_price(spec: &ModelSpec, tree: TreeSpec) -> Result<f64> {
    crr_price(spec, tree, Exercise::Game)
}

/// Closed-form European put.
pub fn bs_put_price(spec: &ModelSpec) -> f64 {
    let ModelSpec {
        r,
        sigma,
        x0,
        strike,
        maturity,
        ..
    } = *spec;
    if strike == 0.0 {
        return 0.0;
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let vol = sigma * maturity.sqrt();
    let d1 = ((x0 / strike).ln() + (r + 0.5 * sigma * sigma) * maturity) / vol;
    let d2 = d1 - vol;
    strike * (-r * maturity).exp() * std_normal.cdf(-d2) - x0 * std_normal.cdf(-d1)
}
