//! Poisson GLM with log link and `log(population)` offset, fitted by IRLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::data::ObservationTable;
use crate::fit::CoefEstimate;
use crate::linalg::{weighted_cross, weighted_gram, ScaledCholesky};
use crate::model::Covariate;

pub const MAX_ITER: usize = 50;
pub const DEVIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PoissonError {
    #[error("observation table is empty")]
    EmptyTable,
    #[error("invalid covariate list: {0}")]
    Spec(String),
    #[error("design is rank deficient: `{column}` is collinear with {with:?}")]
    RankDeficient { column: String, with: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub label: String,
    pub covariates: Vec<Covariate>,
    pub coefficients: Vec<CoefEstimate>,
    /// Row-major `(XᵀŴX)⁻¹`.
    pub covariance: Vec<Vec<f64>>,
    /// Fitted expected counts.
    pub mu_hat: Vec<f64>,
    pub deviance: f64,
    pub loglik: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of `Xᵀ(y − μ̂)`.
    pub score_norm: f64,
    pub n_obs: usize,
    pub table_digest: String,
}

impl PoissonFit {
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }
}

fn design(table: &ObservationTable, covariates: &[Covariate]) -> DMatrix<f64> {
    DMatrix::from_fn(table.len(), covariates.len(), |i, j| {
        let c = &table.cells[i];
        match covariates[j] {
            Covariate::Intercept => 1.0,
            Covariate::Age => c.age_mid,
            Covariate::Period => c.period_mid,
        }
    })
}

/// Unit deviance `2[y log(y/μ) − (y − μ)]`, with `y log(y/μ) = 0` at `y = 0`.
fn unit_deviance(y: f64, mu: f64) -> f64 {
    let a = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    (2.0 * (a - (y - mu))).max(0.0)
}

fn total_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    y.iter().zip(mu.iter()).map(|(&a, &b)| unit_deviance(a, b)).sum()
}

fn collinearity_error(x: &DMatrix<f64>, w: &DVector<f64>, col: usize, names: &[Covariate]) -> PoissonError {
    // Regress the failing column on the preceding ones to list the partners.
    let prev = x.columns(0, col).into_owned();
    let target = x.column(col).into_owned();
    let with = ScaledCholesky::factor(&weighted_gram(&prev, w))
        .map(|c| c.solve(&weighted_cross(&prev, w, &target)))
        .map(|coef| {
            (0..col)
                .filter(|&j| (coef[j] * prev.column(j).amax()).abs() > 1e-8 * target.amax().max(1.0))
                .map(|j| names[j].as_str().to_string())
                .collect()
        })
        .unwrap_or_else(|_| names[..col].iter().map(|c| c.as_str().to_string()).collect());
    PoissonError::RankDeficient {
        column: names[col].as_str().to_string(),
        with,
    }
}

/// Fits `log E[deaths] = log(population) + xᵀβ` by IRLS.
pub fn fit_poisson(
    table: &ObservationTable,
    covariates: &[Covariate],
) -> Result<PoissonFit, PoissonError> {
    if table.is_empty() {
        return Err(PoissonError::EmptyTable);
    }
    if covariates.is_empty() {
        return Err(PoissonError::Spec("at least one covariate is required".into()));
    }
    for (i, c) in covariates.iter().enumerate() {
        if covariates[..i].contains(c) {
            return Err(PoissonError::Spec(format!("`{}` listed twice", c.as_str())));
        }
    }
    let x = design(table, covariates);
    let y = DVector::from_iterator(table.len(), table.cells.iter().map(|c| c.deaths_raw as f64));
    let offset = DVector::from_vec(table.log_pop());

    let mut mu = y.map(|v| v + 0.5);
    let mut eta = mu.map(f64::ln);
    let mut dev = total_deviance(&y, &mu);
    let mut beta = DVector::zeros(covariates.len());
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=MAX_ITER {
        iterations = iter;
        let z = DVector::from_fn(y.len(), |k, _| eta[k] - offset[k] + (y[k] - mu[k]) / mu[k]);
        let gram = weighted_gram(&x, &mu);
        let chol = ScaledCholesky::factor(&gram)
            .map_err(|col| collinearity_error(&x, &mu, col, covariates))?;
        let mut proposal = chol.solve(&weighted_cross(&x, &mu, &z));
        // Halve only if the step leaves the domain.
        let mut new_dev = f64::NAN;
        for _ in 0..30 {
            let e = &offset + &x * &proposal;
            let m = e.map(f64::exp);
            new_dev = total_deviance(&y, &m);
            if new_dev.is_finite() && m.iter().all(|v| *v > 0.0 && v.is_finite()) {
                eta = e;
                mu = m;
                break;
            }
            proposal = (&proposal + &beta) * 0.5;
        }
        beta = proposal;
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if change < DEVIANCE_TOL {
            converged = true;
            break;
        }
    }

    let gram = weighted_gram(&x, &mu);
    let cov = ScaledCholesky::factor(&gram)
        .map_err(|col| collinearity_error(&x, &mu, col, covariates))?
        .inverse();
    let coefficients = covariates
        .iter()
        .enumerate()
        .map(|(j, c)| CoefEstimate {
            name: c.as_str().to_string(),
            estimate: beta[j],
            std_err: Some(cov[(j, j)].max(0.0).sqrt()),
        })
        .collect();
    let loglik: f64 = y
        .iter()
        .zip(mu.iter())
        .map(|(&yk, &mk)| yk * mk.ln() - mk - ln_gamma(yk + 1.0))
        .sum();
    let score_norm = (x.transpose() * (&y - &mu)).amax();
    Ok(PoissonFit {
        label: "poisson".into(),
        covariates: covariates.to_vec(),
        coefficients,
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        mu_hat: mu.iter().copied().collect(),
        deviance: dev,
        loglik,
        aic: -2.0 * loglik + 2.0 * covariates.len() as f64,
        iterations,
        converged,
        score_norm,
        n_obs: table.len(),
        table_digest: table.key_digest(),
    })
}

/// `sign(y − μ̂) √(unit deviance)`.
pub fn deviance_residuals(fit: &PoissonFit, table: &ObservationTable) -> Vec<f64> {
    table
        .cells
        .iter()
        .zip(&fit.mu_hat)
        .map(|(c, &mu)| {
            let y = c.deaths_raw as f64;
            (y - mu).signum() * unit_deviance(y, mu).sqrt()
        })
        .collect()
}

/// `log(μ̂ / population)` per cell.
pub fn poisson_fitted_log_rate(fit: &PoissonFit, table: &ObservationTable) -> Vec<f64> {
    fit.mu_hat
        .iter()
        .zip(&table.cells)
        .map(|(m, c)| m.ln() - c.log_pop)
        .collect()
}
