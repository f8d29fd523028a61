//! Problem data for the game put: coefficients, obstacles, terminal payoff and
//! the penalized driver.
//!
//! The built-in [`ModelSpec`] is the one-dimensional Black–Scholes game put
//!
//! ```text
//! dX = r X dt + sigma X dW,   f(t, x, y, z) = -r y,
//! g(x) = (K - x)^+,  p_b(t, x) = (K - x)^+,  p_w(t, x) = p_b(t, x) + delta (T - t).
//! ```
//!
//! Other models plug in through [`GameModel`].

use crate::error::{Error, Result};
use crate::forward_sim::GridSpec;

/// Market, obstacle and driver parameters of the game put.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    /// Risk-free rate.
    pub r: f64,
    /// Volatility.
    pub sigma: f64,
    /// Initial asset level.
    pub x0: f64,
    /// Strike `K`.
    pub strike: f64,
    /// Maturity `T`.
    pub maturity: f64,
    /// Cancellation premium rate `delta`.
    pub delta: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            r: 0.02,
            sigma: 0.2,
            x0: 24.0,
            strike: 25.0,
            maturity: 1.0,
            delta: 1.0,
        }
    }
}

impl ModelSpec {
    pub fn new(r: f64, sigma: f64, x0: f64, strike: f64, maturity: f64, delta: f64) -> Result<Self> {
        let spec = ModelSpec {
            r,
            sigma,
            x0,
            strike,
            maturity,
            delta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.r.is_finite() {
            return Err(Error::invalid("r", "must be finite"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return Err(Error::invalid("x0", format!("must be > 0, got {}", self.x0)));
        }
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(Error::invalid("strike", format!("must be >= 0, got {}", self.strike)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::invalid("maturity", format!("must be > 0, got {}", self.maturity)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }

    #[inline]
    pub fn put_payoff(&self, x: f64) -> f64 {
        (self.strike - x).max(0.0)
    }

    /// Obstacles at `(t, x)` without the time-domain check.
    #[inline]
    pub fn obstacles_unchecked(&self, t: f64, x: f64) -> ObstaclePair {
        let lower = self.put_payoff(x);
        ObstaclePair {
            lower,
            upper: lower + self.delta * (self.maturity - t),
        }
    }
}

/// Penalty intensity `lambda >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PenaltyParam(f64);

impl PenaltyParam {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Ok(PenaltyParam(lambda))
    }

    /// `lambda0 * sqrt(n)`, the coupling used by the grid-refinement sweep.
    pub fn coupled(lambda0: f64, n: usize) -> Result<Self> {
        Self::new(lambda0 * (n as f64).sqrt())
    }

    /// `scale * n^a`, the parameterization of the penalty sweep.
    pub fn power_law(scale: f64, n: usize, exponent: f64) -> Result<Self> {
        Self::new(scale * (n as f64).powf(exponent))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Lower (holder exercise) and upper (writer cancel) obstacle values at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstaclePair {
    pub lower: f64,
    pub upper: f64,
}

/// Coefficients of a decoupled Markovian doubly reflected BSDE in one dimension.
///
/// Implementations must satisfy `obstacles(t, x).lower <= obstacles(t, x).upper`
/// and `obstacles(T, x).lower == terminal(x)`.
pub trait GameModel: Sync {
    fn maturity(&self) -> f64;
    fn initial_state(&self) -> f64;
    fn drift(&self, t: f64, x: f64) -> f64;
    fn diffusion(&self, t: f64, x: f64) -> f64;
    /// Base driver `f(t, x, y, z)` before penalization.
    fn driver(&self, t: f64, x: f64, y: f64, z: f64) -> f64;
    /// Lipschitz constant `K_y` of the driver in `y`.
    fn driver_lipschitz_y(&self) -> f64;
    fn obstacles(&self, t: f64, x: f64) -> ObstaclePair;
    fn terminal(&self, x: f64) -> f64;

    /// `Some(r)` when the driver is exactly `-r * y`, which lets the implicit
    /// step be solved in closed form.
    fn linear_discount_rate(&self) -> Option<f64> {
        None
    }
}

impl GameModel for ModelSpec {
    fn maturity(&self) -> f64 {
        self.maturity
    }

    fn initial_state(&self) -> f64 {
        self.x0
    }

    #[inline]
    fn drift(&self, _t: f64, x: f64) -> f64 {
        self.r * x
    }

    #[inline]
    fn diffusion(&self, _t: f64, x: f64) -> f64 {
        self.sigma * x
    }

    #[inline]
    fn driver(&self, _t: f64, _x: f64, y: f64, _z: f64) -> f64 {
        -self.r * y
    }

    fn driver_lipschitz_y(&self) -> f64 {
        self.r.abs()
    }

    #[inline]
    fn obstacles(&self, t: f64, x: f64) -> ObstaclePair {
        self.obstacles_unchecked(t, x)
    }

    #[inline]
    fn terminal(&self, x: f64) -> f64 {
        self.put_payoff(x)
    }

    fn linear_discount_rate(&self) -> Option<f64> {
        Some(self.r)
    }
}

/// Obstacle pair and terminal payoff of the game put at `(t, x)`.
pub fn payoff_bundle(spec: &ModelSpec, t: f64, x: f64) -> Result<(ObstaclePair, f64)> {
    if !(0.0..=spec.maturity).contains(&t) {
        return Err(Error::Domain(format!(
            "time {t} outside [0, {}]",
            spec.maturity
        )));
    }
    Ok((spec.obstacles_unchecked(t, x), spec.put_payoff(x)))
}

/// `f(t,x,y,z) + lambda (p_b - y)^+ - lambda (y - p_w)^+`.
#[inline]
pub fn penalized_driver<M: GameModel + ?Sized>(
    model: &M,
    lam: PenaltyParam,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
) -> f64 {
    let ObstaclePair { lower, upper } = model.obstacles(t, x);
    let lambda = lam.value();
    model.driver(t, x, y, z) + lambda * (lower - y).max(0.0) - lambda * (y - upper).max(0.0)
}

/// Checks the parameter regime the error analysis assumes and returns one
/// message per violated hypothesis.
pub fn validate_regime(spec: &ModelSpec, lam: PenaltyParam, grid: &GridSpec) -> Vec<String> {
    let mut warnings = Vec::new();
    let k_y = spec.driver_lipschitz_y();
    let lambda = lam.value();
    let dt = grid.dt();

    if lambda <= 2.0 * k_y {
        warnings.push(format!(
            "lambda below 2*K_y: lambda = {lambda}, K_y = {k_y}"
        ));
    }
    if dt * k_y >= 1.0 {
        warnings.push(format!(
            "dt*K_y >= 1 (dt = {dt}, K_y = {k_y}); the implicit step is not uniquely solvable"
        ));
    }
    // dt_fine <= dt / lambda^2  <=>  m >= lambda^2
    let needed = lambda * lambda;
    if (grid.m as f64) < needed {
        warnings.push(format!(
            "two-grid coupling violated: m = {} < lambda^2 = {needed:e}, so dt_fine = {:e} exceeds dt/lambda^2 = {:e} (only matters for the euler sampler)",
            grid.m,
            grid.fine_dt(),
            dt / needed
        ));
    }
    warnings
}
