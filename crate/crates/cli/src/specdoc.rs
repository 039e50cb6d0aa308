use logsym_core::data::ZeroPolicy;
use logsym_core::diagnostics::FittedModel;
use logsym_core::model::{Covariate, ModelSpec};
use logsym_core::par::Execution;
use logsym_core::{data::ObservationTable, fit_poisson, fit_with};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Model document: a log-symmetric spec or a Poisson covariate list,
/// tagged by `"model"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SpecDoc {
    Logsym {
        #[serde(default)]
        label: Option<String>,
        #[serde(flatten)]
        spec: ModelSpec,
    },
    Poisson {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_covariates")]
        covariates: Vec<Covariate>,
    },
}

fn default_covariates() -> Vec<Covariate> {
    vec![Covariate::Intercept, Covariate::Age, Covariate::Period]
}

impl SpecDoc {
    pub fn label(&self) -> String {
        match self {
            SpecDoc::Logsym { label, .. } => label.clone().unwrap_or_else(|| "semiparametric".into()),
            SpecDoc::Poisson { label, .. } => label.clone().unwrap_or_else(|| "poisson".into()),
        }
    }

    pub fn zero_policy(&self) -> Option<ZeroPolicy> {
        match self {
            SpecDoc::Logsym { spec, .. } => Some(spec.zero_policy),
            SpecDoc::Poisson { .. } => None,
        }
    }

    /// Applies command-line overrides.
    pub fn adjust(&mut self, policy: ZeroPolicy, jacobian_adjust: bool) {
        if let SpecDoc::Logsym { spec, .. } = self {
            spec.zero_policy = policy;
            spec.jacobian_adjust |= jacobian_adjust;
        }
    }

    pub fn fit(&self, table: &ObservationTable) -> Result<FittedModel, CliError> {
        let label = self.label();
        let model = match self {
            SpecDoc::Logsym { spec, .. } => {
                spec.validate().map_err(CliError::Input)?;
                let mut f = fit_with(spec, table, Execution::default())?;
                f.label = label;
                FittedModel::Logsym(f)
            }
            SpecDoc::Poisson { covariates, .. } => {
                let mut f = fit_poisson(table, covariates)?;
                f.label = label;
                FittedModel::Poisson(f)
            }
        };
        Ok(model)
    }
}
