//! Declarative description of a log-symmetric location/dispersion model.
//!
//! The JSON encoding of [`ModelSpec`] is the model-spec file read by the
//! command-line tool.

use serde::{Deserialize, Serialize};

use crate::data::ZeroPolicy;
use crate::family::Generator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Intercept,
    Age,
    Period,
}

impl Covariate {
    pub fn as_str(self) -> &'static str {
        match self {
            Covariate::Intercept => "intercept",
            Covariate::Age => "age",
            Covariate::Period => "period",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Ncs,
    Psp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Aic,
}

/// Smoothing parameter of a term: a fixed `λ` or a grid-selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Smoothing {
    Fixed(f64),
    Select(SelectionRule),
}

fn default_basis_dim() -> usize {
    23
}

fn default_diff_order() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: BasisKind,
    pub covariate: Covariate,
    /// P-spline basis dimension (cubic, so segments = basis_dim − 3).
    #[serde(default = "default_basis_dim")]
    pub basis_dim: usize,
    #[serde(default = "default_diff_order")]
    pub diff_order: usize,
    pub lambda: Smoothing,
}

impl TermSpec {
    pub fn ncs(covariate: Covariate, lambda: Smoothing) -> Self {
        Self {
            kind: BasisKind::Ncs,
            covariate,
            basis_dim: default_basis_dim(),
            diff_order: default_diff_order(),
            lambda,
        }
    }

    pub fn psp(covariate: Covariate, lambda: Smoothing) -> Self {
        Self {
            kind: BasisKind::Psp,
            ..Self::ncs(covariate, lambda)
        }
    }

    /// `ncs(age)`, `psp(period)`, …
    pub fn label(&self) -> String {
        let kind = match self.kind {
            BasisKind::Ncs => "ncs",
            BasisKind::Psp => "psp",
        };
        format!("{kind}({})", self.covariate.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelSpec {
    #[serde(default)]
    pub use_offset: bool,
    pub parametric: Vec<Covariate>,
    #[serde(default)]
    pub smooth: Vec<TermSpec>,
}

impl SubmodelSpec {
    pub fn intercept_only() -> Self {
        Self {
            use_offset: false,
            parametric: vec![Covariate::Intercept],
            smooth: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Convergence {
    pub tol_loglik: f64,
    pub tol_param: f64,
    /// Max-norm of the analytic penalized gradient accepted as converged.
    pub tol_grad: f64,
    pub max_outer: usize,
    pub max_halvings: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            tol_loglik: 1e-8,
            tol_param: 1e-6,
            tol_grad: 1e-6,
            max_outer: 200,
            max_halvings: 30,
        }
    }
}

/// Candidate smoothing parameters for AIC selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaGrid(pub Vec<f64>);

impl LambdaGrid {
    pub fn log_spaced(min: f64, max: f64, points: usize) -> Self {
        if points <= 1 {
            return Self(vec![min]);
        }
        let (a, b) = (min.ln(), max.ln());
        Self(
            (0..points)
                .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                .collect(),
        )
    }

    /// Value used for not-yet-selected terms while another term is being
    /// selected: the geometric midpoint of the grid.
    pub fn midpoint(&self) -> f64 {
        let lo = self.0.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo * hi).sqrt()
    }
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self::log_spaced(1e-4, 1e8, 30)
    }
}

fn default_location() -> SubmodelSpec {
    SubmodelSpec {
        use_offset: true,
        ..SubmodelSpec::intercept_only()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub generator: Generator,
    #[serde(default = "default_location")]
    pub location: SubmodelSpec,
    #[serde(default = "SubmodelSpec::intercept_only")]
    pub dispersion: SubmodelSpec,
    #[serde(default)]
    pub zero_policy: ZeroPolicy,
    #[serde(default)]
    pub convergence: Convergence,
    #[serde(default)]
    pub lambda_grid: LambdaGrid,
    /// Adds `2 Σ log t` to the AIC so it refers to the density of `T`
    /// rather than of `log T`.
    #[serde(default)]
    pub jacobian_adjust: bool,
}

impl ModelSpec {
    pub fn new(generator: Generator) -> Self {
        Self {
            generator,
            location: default_location(),
            dispersion: SubmodelSpec::intercept_only(),
            zero_policy: ZeroPolicy::default(),
            convergence: Convergence::default(),
            lambda_grid: LambdaGrid::default(),
            jacobian_adjust: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.generator.validate().map_err(|e| e.to_string())?;
        for (name, sub) in [("location", &self.location), ("dispersion", &self.dispersion)] {
            if !sub.parametric.contains(&Covariate::Intercept) {
                return Err(format!("{name} submodel must contain an intercept"));
            }
            let mut seen = Vec::new();
            for c in &sub.parametric {
                if seen.contains(c) {
                    return Err(format!("{name}: covariate `{}` listed twice", c.as_str()));
                }
                seen.push(*c);
            }
            for t in &sub.smooth {
                if t.covariate == Covariate::Intercept {
                    return Err(format!("{name}: a spline term needs age or period"));
                }
                if seen.contains(&t.covariate) {
                    return Err(format!(
                        "{name}: covariate `{}` appears in more than one term",
                        t.covariate.as_str()
                    ));
                }
                seen.push(t.covariate);
                if let Smoothing::Fixed(l) = t.lambda {
                    if !(l >= 0.0 && l.is_finite()) {
                        return Err(format!("{name}: {} has invalid lambda {l}", t.label()));
                    }
                }
            }
        }
        if self.dispersion.use_offset {
            return Err("dispersion submodel cannot carry the population offset".into());
        }
        if self.lambda_grid.0.is_empty() || self.lambda_grid.0.iter().any(|l| !(*l >= 0.0)) {
            return Err("lambda grid must be non-empty and non-negative".into());
        }
        Ok(())
    }

    /// Fixed λ per term (location terms first), `None` where selection is
    /// requested.
    pub fn fixed_lambdas(&self) -> Vec<Option<f64>> {
        self.location
            .smooth
            .iter()
            .chain(&self.dispersion.smooth)
            .map(|t| match t.lambda {
                Smoothing::Fixed(l) => Some(l),
                Smoothing::Select(_) => None,
            })
            .collect()
    }

    pub fn n_terms(&self) -> usize {
        self.location.smooth.len() + self.dispersion.smooth.len()
    }

    /// Copy with every term's λ fixed to the given values.
    pub fn with_lambdas(&self, lambdas: &[f64]) -> Self {
        assert_eq!(lambdas.len(), self.n_terms());
        let mut out = self.clone();
        for (t, &l) in out
            .location
            .smooth
            .iter_mut()
            .chain(out.dispersion.smooth.iter_mut())
            .zip(lambdas)
        {
            t.lambda = Smoothing::Fixed(l);
        }
        out
    }
}
