use std::fmt::Write;

use logsym_core::diagnostics::{ComparisonReport, EnvelopeResult, FittedModel};
use logsym_core::fit::CoefEstimate;

fn coef_rows(out: &mut String, title: &str, coefs: &[CoefEstimate]) {
    if coefs.is_empty() {
        return;
    }
    let _ = writeln!(out, "  {title:<24}{:>14}{:>12}", "Estimate", "Std.Err");
    for c in coefs {
        let se = c.std_err.map(|s| format!("{s:.6}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "    {:<22}{:>14.6}{:>12}", c.name, c.estimate, se);
    }
}

pub fn fit_summary(model: &FittedModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} ({})", model.label(), model.family());
    match model {
        FittedModel::Logsym(f) => {
            coef_rows(&mut out, "location", &f.location.coefficients);
            coef_rows(&mut out, "dispersion (log phi)", &f.dispersion.coefficients);
            let terms: Vec<_> = f.location.terms.iter().chain(&f.dispersion.terms).collect();
            if !terms.is_empty() {
                let _ = writeln!(out, "  {:<24}{:>14}{:>12}", "smooth terms", "Smooth param", "d.f.");
                for t in terms {
                    let _ = writeln!(out, "    {:<22}{:>14.6e}{:>12.3}", t.label, t.lambda, t.edf);
                }
            }
            let _ = writeln!(
                out,
                "  AIC {:.4}{}   loglik {:.4}   n {}",
                f.aic,
                if f.jacobian_adjusted { " (Jacobian adjusted)" } else { "" },
                f.loglik,
                f.n_obs
            );
            let _ = writeln!(
                out,
                "  converged {}   iterations {}   max |gradient| {:.2e}",
                f.converged, f.iterations, f.grad_norm
            );
        }
        FittedModel::Poisson(f) => {
            coef_rows(&mut out, "log rate", &f.coefficients);
            let _ = writeln!(
                out,
                "  AIC {:.4}   deviance {:.4}   loglik {:.4}   n {}",
                f.aic, f.deviance, f.loglik, f.n_obs
            );
            let _ = writeln!(out, "  converged {}   iterations {}", f.converged, f.iterations);
        }
    }
    out
}

pub fn comparison_summary(r: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<20}{:>12}{:>16}{:>10}", "model", "family", "AIC", "rho");
    for m in &r.models {
        let _ = writeln!(out, "{:<20}{:>12}{:>16.4}{:>10.4}", m.label, m.family, m.aic, m.rho);
    }
    let _ = writeln!(out, "preferred: {}", r.preferred);
    if r.scale_caveat {
        let _ = writeln!(
            out,
            "note: log-scale density AIC compared with count AIC; rerun with --jacobian-adjust for a common scale"
        );
    }
    out
}

pub fn envelope_summary(e: &EnvelopeResult) -> String {
    format!(
        "{} residuals: {} of {} outside the {:.0}% band ({} simulations, {} failed)\n",
        e.kind.as_str(),
        e.outside_count,
        e.ordered_residuals.len(),
        100.0 * e.level,
        e.m_sims,
        e.failed
    )
}
