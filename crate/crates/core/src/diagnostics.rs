//! Simulated residual envelopes, log-rate correlation, model comparison
//! and component-curve export.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fmt_num, ObservationTable};
use crate::fit::{fit_with, fitted_log_rate, residuals, CoefEstimate, LogSymFit, ResidualKind};
use crate::par::{map_indexed, Execution};
use crate::poisson::{deviance_residuals, fit_poisson, poisson_fitted_log_rate, PoissonFit};
use crate::stats::{norm_quantile, pearson, percentile_sorted};

/// Refit-failure share above which an envelope is rejected.
pub const MAX_FAILURE_SHARE: f64 = 0.10;
/// AIC gap below which two models tie.
pub const AIC_TIE_TOL: f64 = 1e-9;
pub const TIE: &str = "tie";

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("model has not converged")]
    NotConverged,
    #[error("residual kind `{kind}` does not apply to a {model} fit")]
    KindMismatch { kind: &'static str, model: &'static str },
    #[error("{failed} of {m_sims} envelope refits failed")]
    Envelope { failed: usize, m_sims: usize },
    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("fit and table do not share the same cells")]
    TableMismatch,
    #[error("no term `{0}` in the fit")]
    UnknownTerm(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Either fitted model class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Logsym(LogSymFit),
    Poisson(PoissonFit),
}

impl FittedModel {
    pub fn label(&self) -> &str {
        match self {
            FittedModel::Logsym(f) => &f.label,
            FittedModel::Poisson(f) => &f.label,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            FittedModel::Logsym(f) => f.spec.generator.name(),
            FittedModel::Poisson(_) => "poisson",
        }
    }

    pub fn aic(&self) -> f64 {
        match self {
            FittedModel::Logsym(f) => f.aic,
            FittedModel::Poisson(f) => f.aic,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Logsym(f) => f.converged,
            FittedModel::Poisson(f) => f.converged,
        }
    }

    pub fn table_digest(&self) -> &str {
        match self {
            FittedModel::Logsym(f) => &f.table_digest,
            FittedModel::Poisson(f) => &f.table_digest,
        }
    }

    pub fn fitted_log_rate(&self, table: &ObservationTable) -> Vec<f64> {
        match self {
            FittedModel::Logsym(f) => fitted_log_rate(f, table),
            FittedModel::Poisson(f) => poisson_fitted_log_rate(f, table),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Location,
    Dispersion,
    Deviance,
}

impl EnvelopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeKind::Location => "location",
            EnvelopeKind::Dispersion => "dispersion",
            EnvelopeKind::Deviance => "deviance",
        }
    }

    /// The natural kind for a model class.
    pub fn default_for(model: &FittedModel) -> Self {
        match model {
            FittedModel::Logsym(_) => EnvelopeKind::Location,
            FittedModel::Poisson(_) => EnvelopeKind::Deviance,
        }
    }
}

impl std::str::FromStr for EnvelopeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "location" => Ok(EnvelopeKind::Location),
            "dispersion" => Ok(EnvelopeKind::Dispersion),
            "deviance" => Ok(EnvelopeKind::Deviance),
            other => Err(format!("unknown residual kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub kind: EnvelopeKind,
    pub ordered_residuals: Vec<f64>,
    pub ref_quantiles: Vec<f64>,
    pub band_lo: Vec<f64>,
    pub band_hi: Vec<f64>,
    pub outside_count: usize,
    pub m_sims: usize,
    /// Replicates that failed twice and were left out of the bands.
    pub failed: usize,
    pub level: f64,
    pub seed: u64,
}

impl EnvelopeResult {
    pub fn outside_fraction(&self) -> f64 {
        self.outside_count as f64 / self.ordered_residuals.len() as f64
    }
}

/// `Φ⁻¹((k − 0.375)/(n + 0.25))`, `k = 1..n`.
pub fn reference_quantiles(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| norm_quantile((k as f64 - 0.375) / (n as f64 + 0.25)))
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn model_residuals(model: &FittedModel, table: &ObservationTable, kind: EnvelopeKind) -> Vec<f64> {
    match (model, kind) {
        (FittedModel::Logsym(f), EnvelopeKind::Location) => residuals(f, table, ResidualKind::Location),
        (FittedModel::Logsym(f), EnvelopeKind::Dispersion) => residuals(f, table, ResidualKind::Dispersion),
        (FittedModel::Poisson(f), _) => deviance_residuals(f, table),
        (FittedModel::Logsym(_), EnvelopeKind::Deviance) => unreachable!("checked by caller"),
    }
}

/// Draws a response from the fitted model, refits and returns sorted residuals.
fn replicate(
    model: &FittedModel,
    table: &ObservationTable,
    kind: EnvelopeKind,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<f64>> {
    let refit = match model {
        FittedModel::Logsym(f) => {
            let g = f.spec.generator;
            let y: Vec<f64> = f
                .mu_hat
                .iter()
                .zip(&f.phi_hat)
                .map(|(mu, phi)| mu + phi.sqrt() * g.draw(rng))
                .collect();
            let sim = table.with_log_response(&y);
            let refit = fit_with(&f.fixed_spec(), &sim, Execution::Sequential).ok()?;
            (FittedModel::Logsym(refit), sim)
        }
        FittedModel::Poisson(f) => {
            let deaths: Vec<u64> = f
                .mu_hat
                .iter()
                .map(|&m| Poisson::new(m).map(|p| p.sample(rng) as u64).unwrap_or(0))
                .collect();
            let sim = table.with_deaths(&deaths);
            let refit = fit_poisson(&sim, &f.covariates).ok()?;
            (FittedModel::Poisson(refit), sim)
        }
    };
    let (fit, sim) = refit;
    if !fit.converged() {
        return None;
    }
    let r = model_residuals(&fit, &sim, kind);
    r.iter().all(|v| v.is_finite()).then(|| sorted(r))
}

/// Pointwise percentile envelope from `m_sims` refits of data simulated
/// from `model`. Replicate `m` draws from a generator seeded with `seed + m`.
pub fn simulated_envelope(
    model: &FittedModel,
    table: &ObservationTable,
    kind: EnvelopeKind,
    m_sims: usize,
    level: f64,
    seed: u64,
    exec: Execution,
) -> Result<EnvelopeResult, DiagnosticsError> {
    if !model.converged() {
        return Err(DiagnosticsError::NotConverged);
    }
    match (model, kind) {
        (FittedModel::Logsym(_), EnvelopeKind::Deviance) => {
            return Err(DiagnosticsError::KindMismatch { kind: kind.as_str(), model: "log-symmetric" })
        }
        (FittedModel::Poisson(_), EnvelopeKind::Location | EnvelopeKind::Dispersion) => {
            return Err(DiagnosticsError::KindMismatch { kind: kind.as_str(), model: "poisson" })
        }
        _ => {}
    }
    if model.table_digest() != table.key_digest() {
        return Err(DiagnosticsError::TableMismatch);
    }
    if m_sims == 0 {
        return Err(DiagnosticsError::Argument("m_sims must be positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(DiagnosticsError::Argument(format!("level {level} outside (0, 1)")));
    }

    let sims: Vec<Option<Vec<f64>>> = map_indexed(exec, m_sims, |m| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(m as u64));
        // The retry continues the replicate's own stream.
        replicate(model, table, kind, &mut rng).or_else(|| replicate(model, table, kind, &mut rng))
    });
    let ok: Vec<&Vec<f64>> = sims.iter().flatten().collect();
    let failed = m_sims - ok.len();
    if ok.is_empty() || failed as f64 > MAX_FAILURE_SHARE * m_sims as f64 {
        return Err(DiagnosticsError::Envelope { failed, m_sims });
    }

    let n = table.len();
    let (mut band_lo, mut band_hi) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let column = sorted(ok.iter().map(|s| s[k]).collect());
        band_lo.push(percentile_sorted(&column, (1.0 - level) / 2.0));
        band_hi.push(percentile_sorted(&column, (1.0 + level) / 2.0));
    }
    let ordered_residuals = sorted(model_residuals(model, table, kind));
    let outside_count = ordered_residuals
        .iter()
        .zip(band_lo.iter().zip(&band_hi))
        .filter(|(r, (lo, hi))| *r < lo || *r > hi)
        .count();
    Ok(EnvelopeResult {
        kind,
        ref_quantiles: reference_quantiles(n),
        ordered_residuals,
        band_lo,
        band_hi,
        outside_count,
        m_sims,
        failed,
        level,
        seed,
    })
}

/// Pearson correlation between fitted and observed log-rates.
pub fn log_rate_correlation(fitted: &[f64], table: &ObservationTable) -> Result<f64, DiagnosticsError> {
    if fitted.len() != table.len() {
        return Err(DiagnosticsError::Argument(format!(
            "{} fitted values for {} cells",
            fitted.len(),
            table.len()
        )));
    }
    if fitted.len() < 2 {
        return Err(DiagnosticsError::UndefinedCorrelation("fewer than two cells".into()));
    }
    pearson(fitted, &table.observed_log_rates())
        .ok_or_else(|| DiagnosticsError::UndefinedCorrelation("zero variance".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub label: String,
    pub lambda: f64,
    pub edf: f64,
    pub coef_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub family: String,
    pub aic: f64,
    pub loglik: f64,
    pub rho: f64,
    pub converged: bool,
    pub jacobian_adjusted: bool,
    pub location: Vec<CoefEstimate>,
    pub dispersion: Vec<CoefEstimate>,
    pub terms: Vec<TermSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<ModelSummary>,
    /// Label of the lower-AIC model, or `"tie"`.
    pub preferred: String,
    /// Set when a log-scale density AIC meets a count AIC without the
    /// Jacobian adjustment.
    pub scale_caveat: bool,
}

fn summarize(model: &FittedModel, table: &ObservationTable) -> Result<ModelSummary, DiagnosticsError> {
    let rho = log_rate_correlation(&model.fitted_log_rate(table), table)?;
    Ok(match model {
        FittedModel::Logsym(f) => ModelSummary {
            label: f.label.clone(),
            family: model.family().into(),
            aic: f.aic,
            loglik: f.loglik,
            rho,
            converged: f.converged,
            jacobian_adjusted: f.jacobian_adjusted,
            location: f.location.coefficients.clone(),
            dispersion: f.dispersion.coefficients.clone(),
            terms: f
                .location
                .terms
                .iter()
                .chain(&f.dispersion.terms)
                .map(|t| TermSummary {
                    label: t.label.clone(),
                    lambda: t.lambda,
                    edf: t.edf,
                    coef_norm: t.coef_norm,
                })
                .collect(),
        },
        FittedModel::Poisson(f) => ModelSummary {
            label: f.label.clone(),
            family: "poisson".into(),
            aic: f.aic,
            loglik: f.loglik,
            rho,
            converged: f.converged,
            jacobian_adjusted: false,
            location: f.coefficients.clone(),
            dispersion: Vec::new(),
            terms: Vec::new(),
        },
    })
}

/// Side-by-side summary of two fits of the same table.
pub fn compare_models(
    first: &FittedModel,
    second: &FittedModel,
    table: &ObservationTable,
) -> Result<ComparisonReport, DiagnosticsError> {
    let digest = table.key_digest();
    if first.table_digest() != digest || second.table_digest() != digest {
        return Err(DiagnosticsError::TableMismatch);
    }
    let a = summarize(first, table)?;
    let b = summarize(second, table)?;
    let preferred = if (a.aic - b.aic).abs() <= AIC_TIE_TOL {
        TIE.to_string()
    } else if a.aic < b.aic {
        a.label.clone()
    } else {
        b.label.clone()
    };
    let unadjusted = |m: &FittedModel| matches!(m, FittedModel::Logsym(f) if !f.jacobian_adjusted);
    let is_count = |m: &FittedModel| matches!(m, FittedModel::Poisson(_));
    let scale_caveat =
        (unadjusted(first) && is_count(second)) || (unadjusted(second) && is_count(first));
    Ok(ComparisonReport { models: vec![a, b], preferred, scale_caveat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub term: String,
    pub covariate: f64,
    pub value: f64,
}

/// The centered spline term on `grid_size` equally spaced points across
/// the observed covariate range.
pub fn export_component_curves(
    fit: &LogSymFit,
    term: &str,
    grid_size: usize,
) -> Result<Vec<CurvePoint>, DiagnosticsError> {
    let t = fit.term(term).ok_or_else(|| DiagnosticsError::UnknownTerm(term.to_string()))?;
    if grid_size < 2 {
        return Err(DiagnosticsError::Argument("grid_size must be at least 2".into()));
    }
    let (lo, hi) = t.basis.range();
    let step = (hi - lo) / (grid_size - 1) as f64;
    let xs: Vec<f64> = (0..grid_size)
        .map(|i| if i + 1 == grid_size { hi } else { lo + step * i as f64 })
        .collect();
    let values = t.block_evaluate(&xs);
    Ok(xs
        .into_iter()
        .zip(values)
        .map(|(covariate, value)| CurvePoint { term: t.label.clone(), covariate, value })
        .collect())
}

/// Every spline term of both submodels, location first.
pub fn export_all_curves(fit: &LogSymFit, grid_size: usize) -> Result<Vec<CurvePoint>, DiagnosticsError> {
    let mut out = Vec::new();
    for t in fit.location.terms.iter().chain(&fit.dispersion.terms) {
        out.extend(export_component_curves(fit, &t.label, grid_size)?);
    }
    Ok(out)
}

pub fn write_envelope_csv<W: Write>(env: &EnvelopeResult, sink: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["order_index", "ref_quantile", "residual", "band_lo", "band_hi"])?;
    for k in 0..env.ordered_residuals.len() {
        w.write_record([
            (k + 1).to_string(),
            fmt_num(env.ref_quantiles[k]),
            fmt_num(env.ordered_residuals[k]),
            fmt_num(env.band_lo[k]),
            fmt_num(env.band_hi[k]),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_curves_csv<W: Write>(points: &[CurvePoint], sink: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["term", "covariate", "value"])?;
    for p in points {
        w.write_record([p.term.clone(), fmt_num(p.covariate), fmt_num(p.value)])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Observed vs fitted log-rate per cell, one block of rows per model.
pub fn write_scatter_csv<W: Write>(
    models: &[&FittedModel],
    table: &ObservationTable,
    sink: W,
) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["model", "age_mid", "period_mid", "observed_log_rate", "fitted_log_rate"])?;
    for m in models {
        for (c, f) in table.cells.iter().zip(m.fitted_log_rate(table)) {
            w.write_record([
                m.label().to_string(),
                fmt_num(c.age_mid),
                fmt_num(c.period_mid),
                fmt_num(c.observed_log_rate()),
                fmt_num(f),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
