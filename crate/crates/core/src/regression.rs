//! Cross-sectional least squares for the conditional expectations of the
//! backward recursion.
//!
//! Features are monomials in `u = x / center` plus an optional put hinge
//! `(K - x)^+ / center`. The system is solved through a Householder QR of the
//! design matrix; a small ridge term is added only when the factorization
//! shows a (numerically) rank-deficient design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 10;

/// Pivot threshold on the normal system, relative to its largest pivot.
const PIVOT_TOL: f64 = 1e-10;
const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisSpec {
    pub degree: usize,
    pub include_payoff: bool,
    /// Scaling level for the features, normally `x0`.
    pub center: f64,
    /// Strike of the hinge feature.
    pub strike: f64,
}

impl BasisSpec {
    pub fn new(degree: usize, include_payoff: bool, center: f64, strike: f64) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::invalid("degree", format!("must be <= {MAX_DEGREE}, got {degree}")));
        }
        if !(center > 0.0 && center.is_finite()) {
            return Err(Error::invalid("center", "must be > 0"));
        }
        if !strike.is_finite() {
            return Err(Error::invalid("strike", "must be finite"));
        }
        Ok(BasisSpec {
            degree,
            include_payoff,
            center,
            strike,
        })
    }

    pub fn n_features(&self) -> usize {
        self.degree + 1 + usize::from(self.include_payoff)
    }

    /// Writes the feature vector of `x` into `out` (length `n_features()`).
    #[inline]
    pub fn features_into(&self, x: f64, out: &mut [f64]) {
        let u = x / self.center;
        let mut power = 1.0;
        for slot in out.iter_mut().take(self.degree + 1) {
            *slot = power;
            power *= u;
        }
        if self.include_payoff {
            out[self.degree + 1] = (self.strike - x).max(0.0) / self.center;
        }
    }

    pub fn features(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features()];
        self.features_into(x, &mut out);
        out
    }

    /// One row per sample.
    pub fn design_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let p = self.n_features();
        let mut row = vec![0.0; p];
        let mut a = DMatrix::zeros(xs.len(), p);
        for (i, &x) in xs.iter().enumerate() {
            self.features_into(x, &mut row);
            for (j, &v) in row.iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    /// Set when the ridge fallback was needed.
    pub condition_flag: bool,
}

impl RegressionFit {
    /// Inner product of the coefficients with a feature row.
    #[inline]
    pub fn evaluate(&self, features: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(features)
            .fold(0.0, |acc, (b, f)| acc + b * f)
    }

    /// `design * coefficients`, row by row.
    pub fn fitted_values(&self, design: &DMatrix<f64>) -> Vec<f64> {
        let p = self.coefficients.len();
        (0..design.nrows())
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..p {
                    acc += self.coefficients[j] * design[(i, j)];
                }
                acc
            })
            .collect()
    }
}

/// A factorized design matrix that can be solved against several targets.
pub struct LeastSquares {
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    rows: usize,
    cols: usize,
    /// Ridge weight when the design was found rank deficient.
    ridge: Option<f64>,
}

impl LeastSquares {
    pub fn new(design: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = design.shape();
        if cols == 0 {
            return Err(Error::Regression("design matrix has no columns".into()));
        }
        if rows < cols {
            return Err(Error::Regression(format!(
                "{rows} samples cannot determine {cols} coefficients"
            )));
        }

        let qr = design.clone().qr();
        let r = qr.r();
        let pivots: Vec<f64> = (0..cols).map(|k| r[(k, k)] * r[(k, k)]).collect();
        let largest = pivots.iter().cloned().fold(0.0, f64::max);
        let deficient = largest == 0.0 || pivots.iter().any(|&p| p < PIVOT_TOL * largest || !p.is_finite());

        if !deficient {
            return Ok(LeastSquares {
                qr,
                r,
                rows,
                cols,
                ridge: None,
            });
        }

        // Augment with sqrt(eps) * I so that the QR solves (A'A + eps I) b = A'y.
        let mean_sq_norm = design.row_iter().map(|row| row.norm_squared()).sum::<f64>() / rows as f64;
        let eps = RIDGE_SCALE * mean_sq_norm.max(f64::MIN_POSITIVE);
        let mut augmented = DMatrix::zeros(rows + cols, cols);
        augmented.view_mut((0, 0), (rows, cols)).copy_from(design);
        for k in 0..cols {
            augmented[(rows + k, k)] = eps.sqrt();
        }
        let qr = augmented.qr();
        let r = qr.r();
        Ok(LeastSquares {
            qr,
            r,
            rows,
            cols,
            ridge: Some(eps),
        })
    }

    pub fn is_regularized(&self) -> bool {
        self.ridge.is_some()
    }

    /// Coefficients minimizing the squared residual against `targets`.
    pub fn coefficients(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.len() != self.rows {
            return Err(Error::Regression(format!(
                "expected {} targets, got {}",
                self.rows,
                targets.len()
            )));
        }
        let mut rhs = DVector::zeros(self.qr_rows());
        rhs.rows_mut(0, self.rows).copy_from_slice(targets);
        self.qr.q_tr_mul(&mut rhs);
        let head = rhs.rows(0, self.cols).into_owned();
        let beta = self
            .r
            .solve_upper_triangular(&head)
            .ok_or_else(|| Error::Solver("singular triangular factor after ridge fallback".into()))?;
        Ok(beta.iter().copied().collect())
    }

    /// Full fit including the residual statistic.
    pub fn fit(&self, design: &DMatrix<f64>, targets: &[f64]) -> Result<RegressionFit> {
        let coefficients = self.coefficients(targets)?;
        let mut fit = RegressionFit {
            coefficients,
            residual_rms: 0.0,
            condition_flag: self.is_regularized(),
        };
        let fitted = fit.fitted_values(design);
        let ss: f64 = fitted
            .iter()
            .zip(targets)
            .map(|(f, y)| (y - f) * (y - f))
            .sum();
        fit.residual_rms = (ss / self.rows as f64).sqrt();
        Ok(fit)
    }

    fn qr_rows(&self) -> usize {
        self.rows + if self.ridge.is_some() { self.cols } else { 0 }
    }
}

/// Least-squares fit of `targets` on the columns of `design`.
pub fn fit(design: &DMatrix<f64>, targets: &[f64]) -> Result<RegressionFit> {
    LeastSquares::new(design)?.fit(design, targets)
}

/// Evaluates a fit at `x` under the basis it was produced with.
pub fn predict(fit: &RegressionFit, basis: &BasisSpec, x: f64) -> Result<f64> {
    if fit.coefficients.len() != basis.n_features() {
        return Err(Error::Regression(format!(
            "fit has {} coefficients but basis has {} features",
            fit.coefficients.len(),
            basis.n_features()
        )));
    }
    Ok(fit.evaluate(&basis.features(x)))
}
