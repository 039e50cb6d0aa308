//! Penalized maximum likelihood for the log-symmetric location/dispersion
//! model
//!
//! ```text
//! y_k = log t_k = μ_k + √φ_k ε_k,   ε_k ~ c_g g(ε²)
//! μ_k     = offset_k + x_kᵀβ + Σ_j f_j(·)
//! log φ_k = w_kᵀγ + Σ_j f_j(·)
//! ```
//!
//! Each spline term contributes `−½ λ_j a_jᵀ K_j a_j` to the objective.
//! Estimation alternates a penalized weighted least-squares step for the
//! location (weights `v(z)/φ`) with a penalized scoring step for the
//! dispersion, both guarded by step halving, and finishes with safeguarded
//! joint Newton steps once the alternating steps have settled.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{center_block, ncs_build, psp_build, BasisBlock, BasisError, SplineBasis};
use crate::data::ObservationTable;
use crate::family::Generator;
use crate::linalg::{block_diagonal, kahan_sum, weighted_cross, weighted_gram, ScaledCholesky};
use crate::model::{BasisKind, Covariate, ModelSpec, Smoothing, SubmodelSpec, TermSpec};
use crate::par::{map_indexed, Execution};
use crate::stats::norm_quantile;

/// Finite-difference gradient bound required of a converged fit.
pub const STATIONARITY_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("observation table is empty")]
    EmptyTable,
    #[error("response must be positive and finite; cell {cell} has t = {value}")]
    NonPositiveResponse { cell: usize, value: f64 },
    #[error("term {term}: {source}")]
    Basis {
        term: String,
        #[source]
        source: BasisError,
    },
    #[error("penalized normal equations are singular at {0}")]
    RankDeficient(String),
    #[error("likelihood evaluation failed: {0}")]
    Evaluation(String),
    #[error("smoothing parameter selection failed: {0}")]
    Selection(String),
    #[error("parameter dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct TermDesign {
    pub spec: TermSpec,
    pub label: String,
    pub block: BasisBlock,
    /// First column of the term inside the submodel design.
    pub start: usize,
}

/// Stacked design `[parametric | term_1 | term_2 | …]` of one submodel.
#[derive(Debug, Clone)]
pub struct SubmodelDesign {
    pub x: DMatrix<f64>,
    pub n_param: usize,
    pub param_names: Vec<String>,
    pub terms: Vec<TermDesign>,
    col_scale: Vec<f64>,
}

fn covariate_values(table: &ObservationTable, c: Covariate) -> Vec<f64> {
    match c {
        Covariate::Intercept => vec![1.0; table.len()],
        Covariate::Age => table.ages(),
        Covariate::Period => table.periods(),
    }
}

impl SubmodelDesign {
    fn build(sub: &SubmodelSpec, table: &ObservationTable, which: &str) -> Result<Self, FitError> {
        let n = table.len();
        let mut cols: Vec<Vec<f64>> = sub
            .parametric
            .iter()
            .map(|&c| covariate_values(table, c))
            .collect();
        let param_names = sub.parametric.iter().map(|c| c.as_str().to_string()).collect();
        let n_param = cols.len();
        let mut terms = Vec::new();
        let mut start = n_param;
        for spec in &sub.smooth {
            let label = format!("{which}:{}", spec.label());
            let x = covariate_values(table, spec.covariate);
            let raw = match spec.kind {
                BasisKind::Ncs => ncs_build(&x),
                BasisKind::Psp => psp_build(&x, spec.basis_dim, spec.diff_order),
            }
            .map_err(|source| FitError::Basis {
                term: label.clone(),
                source,
            })?;
            let block = center_block(&raw);
            for j in 0..block.ncols() {
                cols.push(block.b.column(j).iter().copied().collect());
            }
            let width = block.ncols();
            terms.push(TermDesign {
                spec: spec.clone(),
                label,
                block,
                start,
            });
            start += width;
        }
        let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let col_scale = cols
            .iter()
            .map(|c| c.iter().fold(1.0f64, |m, v| m.max(v.abs())))
            .collect();
        Ok(Self {
            x,
            n_param,
            param_names,
            terms,
            col_scale,
        })
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    fn penalty(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let blocks: Vec<(usize, DMatrix<f64>)> = self
            .terms
            .iter()
            .zip(lambdas)
            .map(|(t, &l)| (t.start, &t.block.k * l))
            .collect();
        block_diagonal(self.ncols(), &blocks)
    }

    fn term_coefs(&self, theta: &DVector<f64>, j: usize) -> DVector<f64> {
        let t = &self.terms[j];
        theta.rows(t.start, t.block.ncols()).into_owned()
    }

    /// `Σ λ_j ‖L_j a_j‖²`; the factored form keeps affine components exact
    /// at large `λ`.
    fn penalty_value(&self, theta: &DVector<f64>, lambdas: &[f64]) -> f64 {
        (0..self.terms.len())
            .map(|j| {
                if lambdas[j] == 0.0 {
                    0.0
                } else {
                    lambdas[j] * (&self.terms[j].block.root * self.term_coefs(theta, j)).norm_squared()
                }
            })
            .sum()
    }

    /// Copy with the non-intercept parametric columns centered, the
    /// intercept position and the column means. Raw year columns are nearly
    /// collinear with the intercept and wreck the normal equations.
    fn centered(&self) -> Option<(Self, usize, Vec<f64>)> {
        let icpt = self
            .param_names
            .iter()
            .position(|s| s == Covariate::Intercept.as_str())?;
        let mut c = self.clone();
        let mut means = vec![0.0; self.n_param];
        for (j, m) in means.iter_mut().enumerate() {
            if j != icpt {
                *m = c.x.column(j).mean();
                c.x.column_mut(j).add_scalar_mut(-*m);
            }
        }
        Some((c, icpt, means))
    }

    fn column_owner(&self, col: usize) -> String {
        if col < self.n_param {
            return format!("parametric column `{}`", self.param_names[col]);
        }
        self.terms
            .iter()
            .find(|t| col >= t.start && col < t.start + t.block.ncols())
            .map(|t| format!("term {}", t.label))
            .unwrap_or_else(|| format!("column {col}"))
    }
}

/// Coefficients and smoothing parameters of a log-symmetric model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Location parametric coefficients followed by each term's
    /// (centered) spline coefficients.
    pub location: Vec<f64>,
    pub dispersion: Vec<f64>,
    pub location_lambdas: Vec<f64>,
    pub dispersion_lambdas: Vec<f64>,
}

/// Response, offset and both submodel designs for one table.
#[derive(Debug, Clone)]
pub struct ModelDesign {
    pub generator: Generator,
    pub y: DVector<f64>,
    pub offset: DVector<f64>,
    pub location: SubmodelDesign,
    pub dispersion: SubmodelDesign,
}

struct Pointwise {
    r: DVector<f64>,
    tau: DVector<f64>,
    z: DVector<f64>,
    /// Weights with `|z|` floored, for reweighting and information.
    v: DVector<f64>,
    /// Unfloored weights, for the score. `v z` stays finite at `z → 0` even
    /// when `v` does not, and the floor would bias it there.
    v_score: DVector<f64>,
}

impl ModelDesign {
    pub fn build(spec: &ModelSpec, table: &ObservationTable) -> Result<Self, FitError> {
        spec.validate().map_err(FitError::Spec)?;
        if table.is_empty() {
            return Err(FitError::EmptyTable);
        }
        for (i, c) in table.cells.iter().enumerate() {
            if !(c.t_value > 0.0 && c.log_t.is_finite()) {
                return Err(FitError::NonPositiveResponse {
                    cell: i,
                    value: c.t_value,
                });
            }
        }
        let offset = if spec.location.use_offset {
            DVector::from_vec(table.log_pop())
        } else {
            DVector::zeros(table.len())
        };
        Ok(Self {
            generator: spec.generator,
            y: DVector::from_vec(table.log_t()),
            offset,
            location: SubmodelDesign::build(&spec.location, table, "location")?,
            dispersion: SubmodelDesign::build(&spec.dispersion, table, "dispersion")?,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    fn check(&self, p: &ModelParams) -> Result<(), FitError> {
        let ok = p.location.len() == self.location.ncols()
            && p.dispersion.len() == self.dispersion.ncols()
            && p.location_lambdas.len() == self.location.terms.len()
            && p.dispersion_lambdas.len() == self.dispersion.terms.len();
        if ok {
            Ok(())
        } else {
            Err(FitError::Dimension(format!(
                "design has {}+{} coefficients and {}+{} terms",
                self.location.ncols(),
                self.dispersion.ncols(),
                self.location.terms.len(),
                self.dispersion.terms.len()
            )))
        }
    }

    fn pointwise(&self, tl: &DVector<f64>, td: &DVector<f64>) -> Pointwise {
        let mu = &self.offset + &self.location.x * tl;
        let tau = &self.dispersion.x * td;
        let r = &self.y - mu;
        let z = DVector::from_fn(self.n(), |k, _| r[k] * (-0.5 * tau[k]).exp());
        let v = z.map(|zk| self.generator.fitting_weight(zk));
        let v_score = z.map(|zk| {
            if zk == 0.0 {
                self.generator.fitting_weight(zk)
            } else {
                self.generator.weight_v(zk)
            }
        });
        Pointwise { r, tau, z, v, v_score }
    }

    /// `(penalized, unpenalized)` log-likelihood, `None` when not finite.
    fn eval(&self, tl: &DVector<f64>, td: &DVector<f64>, ll: &[f64], ld: &[f64]) -> Option<(f64, f64)> {
        let mu = &self.offset + &self.location.x * tl;
        let tau = &self.dispersion.x * td;
        let loglik = kahan_sum((0..self.n()).map(|k| {
            let z = (self.y[k] - mu[k]) * (-0.5 * tau[k]).exp();
            self.generator.logpdf(z) - 0.5 * tau[k]
        }));
        let pen = self.location.penalty_value(tl, ll) + self.dispersion.penalty_value(td, ld);
        let pll = loglik - 0.5 * pen;
        (pll.is_finite() && tau.iter().all(|t| t.exp() > 0.0 && t.exp().is_finite()))
            .then_some((pll, loglik))
    }

    fn gradient_parts(
        &self,
        tl: &DVector<f64>,
        td: &DVector<f64>,
        ll: &[f64],
        ld: &[f64],
    ) -> (DVector<f64>, DVector<f64>) {
        let pw = self.pointwise(tl, td);
        let score_mu = DVector::from_fn(self.n(), |k, _| pw.v_score[k] * pw.r[k] * (-pw.tau[k]).exp());
        let score_tau = DVector::from_fn(self.n(), |k, _| 0.5 * (pw.v_score[k] * pw.z[k] * pw.z[k] - 1.0));
        let gl = self.location.x.transpose() * score_mu - self.location.penalty(ll) * tl;
        let gd = self.dispersion.x.transpose() * score_tau - self.dispersion.penalty(ld) * td;
        (gl, gd)
    }

    /// Negative Hessian of the penalized log-likelihood over the stacked
    /// `[location, dispersion]` coefficients.
    fn observed_information(
        &self,
        tl: &DVector<f64>,
        td: &DVector<f64>,
        ll: &[f64],
        ld: &[f64],
    ) -> DMatrix<f64> {
        let pw = self.pointwise(tl, td);
        let n = self.n();
        let (mut a, mut c, mut d) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
        for k in 0..n {
            let u = pw.z[k] * pw.z[k];
            let vu = self.generator.fitting_weight_du(pw.z[k]);
            let e = (-pw.tau[k]).exp();
            a[k] = e * (pw.v[k] + 2.0 * u * vu);
            c[k] = pw.r[k] * e * (pw.v[k] + u * vu);
            d[k] = 0.5 * u * (pw.v[k] + u * vu);
        }
        let xl = &self.location.x;
        let xd = &self.dispersion.x;
        let aa = weighted_gram(xl, &a) + self.location.penalty(ll);
        let dd = weighted_gram(xd, &d) + self.dispersion.penalty(ld);
        let mut xc = xd.clone();
        for mut col in xc.column_iter_mut() {
            col.component_mul_assign(&c);
        }
        let cc = xl.transpose() * xc;
        stack_symmetric(&aa, &cc, &dd)
    }

    /// Block-diagonal expected information, used when the observed
    /// information is not positive definite.
    fn expected_information(
        &self,
        tl: &DVector<f64>,
        td: &DVector<f64>,
        ll: &[f64],
        ld: &[f64],
    ) -> DMatrix<f64> {
        let pw = self.pointwise(tl, td);
        let dg = self.generator.info_location();
        let wl = pw.tau.map(|t| dg * (-t).exp());
        let wd = DVector::from_element(self.n(), self.dispersion_fisher_weight());
        let aa = weighted_gram(&self.location.x, &wl) + self.location.penalty(ll);
        let dd = weighted_gram(&self.dispersion.x, &wd) + self.dispersion.penalty(ld);
        let cc = DMatrix::zeros(aa.nrows(), dd.nrows());
        stack_symmetric(&aa, &cc, &dd)
    }

    fn dispersion_fisher_weight(&self) -> f64 {
        0.25 * (self.generator.info_dispersion_factor() - 1.0)
    }

    fn split(&self, p: &ModelParams) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_column_slice(&p.location),
            DVector::from_column_slice(&p.dispersion),
        )
    }

    pub fn penalized_loglik(&self, p: &ModelParams) -> Result<f64, FitError> {
        self.check(p)?;
        let (tl, td) = self.split(p);
        self.eval(&tl, &td, &p.location_lambdas, &p.dispersion_lambdas)
            .map(|v| v.0)
            .ok_or_else(|| FitError::Evaluation("non-finite dispersion or likelihood".into()))
    }

    /// Analytic penalized score, location coefficients first.
    pub fn gradient(&self, p: &ModelParams) -> Result<Vec<f64>, FitError> {
        self.check(p)?;
        let (tl, td) = self.split(p);
        let (gl, gd) = self.gradient_parts(&tl, &td, &p.location_lambdas, &p.dispersion_lambdas);
        Ok(gl.iter().chain(gd.iter()).copied().collect())
    }

    /// `Σ λ_j ‖L_j a_j‖²` over both submodels.
    pub fn penalty_value(&self, p: &ModelParams) -> Result<f64, FitError> {
        self.check(p)?;
        let (tl, td) = self.split(p);
        Ok(self.location.penalty_value(&tl, &p.location_lambdas)
            + self.dispersion.penalty_value(&td, &p.dispersion_lambdas))
    }

    /// Five-point finite-difference gradient of the penalized
    /// log-likelihood. Steps are scaled by the column magnitude and, for
    /// location coefficients, by the typical `√φ`. Location steps are kept
    /// near 1e-5 in `z` units because the power exponential score is only
    /// Hölder continuous at `z = 0` when `ζ > 0`.
    ///
    /// A step moves the linear predictors by `h x_j` from their base
    /// values rather than recomputing `Xθ`: with raw year columns the
    /// intercept and slope terms cancel and the recomputed residuals carry
    /// roundoff that swamps such small steps. The likelihood is a sum over
    /// cells, so each cell is differenced on its own. With the power
    /// exponential kink (`ζ > 0`) the step is also capped at 1% of the
    /// cell's residual: the stencil error grows like `(h/z)⁴` next to
    /// `z = 0`, and a stencil straddling it is meaningless.
    pub fn fd_gradient(&self, p: &ModelParams) -> Result<Vec<f64>, FitError> {
        self.check(p)?;
        let (tl, td) = self.split(p);
        let r = &self.y - (&self.offset + &self.location.x * &tl);
        let tau = &self.dispersion.x * &td;
        let mean_phi = tau.map(f64::exp).mean();
        let n = self.n();
        // Constants cancel in the stencil: the normalizing constant and the
        // base `τ/2` are left out so their rounding stays out of the
        // differences, which are tiny for cells near `z = 0`.
        let point = |k: usize, dmu: f64, dtau: f64| {
            let z = (r[k] - dmu) * (-0.5 * (tau[k] + dtau)).exp();
            self.generator.log_kernel(z * z) - 0.5 * dtau
        };
        let penalty = |a: &DVector<f64>, b: &DVector<f64>| {
            self.location.penalty_value(a, &p.location_lambdas)
                + self.dispersion.penalty_value(b, &p.dispersion_lambdas)
        };
        let kink_cap = match self.generator {
            Generator::Powerexp { zeta } if zeta > 0.0 => 0.01,
            _ => f64::INFINITY,
        };
        let mut out = Vec::with_capacity(tl.len() + td.len());
        for i in 0..tl.len() {
            let h = 1e-5 * mean_phi.sqrt() / self.location.col_scale[i];
            let col = self.location.x.column(i);
            let ll = kahan_sum((0..n).map(|k| {
                // Step in μ units; zero only when x_kj = 0 or the residual
                // sits exactly on the symmetry point, where the term's slope
                // is zero either way.
                let hk = (h * col[k].abs()).min(kink_cap * r[k].abs());
                if hk > 0.0 {
                    col[k] * five_point(|s| point(k, s * hk, 0.0), hk)
                } else {
                    0.0
                }
            }));
            let pen = five_point(
                |s| {
                    let mut t = tl.clone();
                    t[i] += s * h;
                    penalty(&t, &td)
                },
                h,
            );
            out.push(ll - 0.5 * pen);
        }
        for i in 0..td.len() {
            let h = 1e-3 / self.dispersion.col_scale[i];
            let col = self.dispersion.x.column(i);
            let ll = kahan_sum((0..n).map(|k| five_point(|s| point(k, 0.0, s * h * col[k]), h)));
            let pen = five_point(
                |s| {
                    let mut t = td.clone();
                    t[i] += s * h;
                    penalty(&tl, &t)
                },
                h,
            );
            out.push(ll - 0.5 * pen);
        }
        Ok(out)
    }
}

fn five_point<F: Fn(f64) -> f64>(at: F, h: f64) -> f64 {
    (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
}

fn stack_symmetric(aa: &DMatrix<f64>, cc: &DMatrix<f64>, dd: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (aa.nrows(), dd.nrows());
    let mut j = DMatrix::zeros(p + q, p + q);
    j.view_mut((0, 0), (p, p)).copy_from(aa);
    j.view_mut((p, p), (q, q)).copy_from(dd);
    j.view_mut((0, p), (p, q)).copy_from(cc);
    j.view_mut((p, 0), (q, p)).copy_from(&cc.transpose());
    j
}

/// Coefficient estimate with its standard error (absent when the
/// information matrix could not be inverted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermFit {
    pub label: String,
    pub covariate: Covariate,
    pub lambda: f64,
    pub edf: f64,
    pub coefficients: Vec<f64>,
    pub coef_norm: f64,
    pub basis: SplineBasis,
    /// Column sums of the uncentered training design.
    pub constraint: Vec<f64>,
    /// Term values at the training rows.
    pub fitted: Vec<f64>,
}

impl TermFit {
    pub fn block_evaluate(&self, x: &[f64]) -> Vec<f64> {
        let b = self.basis.design(x) * crate::basis::centering_transform(&self.constraint);
        (b * DVector::from_column_slice(&self.coefficients))
            .iter()
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelFit {
    pub coefficients: Vec<CoefEstimate>,
    pub terms: Vec<TermFit>,
}

/// Fitted log-symmetric model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSymFit {
    pub label: String,
    pub spec: ModelSpec,
    pub location: SubmodelFit,
    pub dispersion: SubmodelFit,
    pub mu_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    /// Unpenalized log-likelihood of `y = log t`.
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub aic: f64,
    pub jacobian_adjusted: bool,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Penalized log-likelihood after initialization and each outer iteration.
    pub trace: Vec<f64>,
    pub n_obs: usize,
    pub table_digest: String,
}

impl LogSymFit {
    /// λ of every term, location terms first.
    pub fn lambdas(&self) -> Vec<f64> {
        self.location
            .terms
            .iter()
            .chain(&self.dispersion.terms)
            .map(|t| t.lambda)
            .collect()
    }

    pub fn params(&self) -> ModelParams {
        let stack = |s: &SubmodelFit| -> Vec<f64> {
            s.coefficients
                .iter()
                .map(|c| c.estimate)
                .chain(s.terms.iter().flat_map(|t| t.coefficients.iter().copied()))
                .collect()
        };
        ModelParams {
            location: stack(&self.location),
            dispersion: stack(&self.dispersion),
            location_lambdas: self.location.terms.iter().map(|t| t.lambda).collect(),
            dispersion_lambdas: self.dispersion.terms.iter().map(|t| t.lambda).collect(),
        }
    }

    /// The producing spec with every λ fixed at the fitted value.
    pub fn fixed_spec(&self) -> ModelSpec {
        self.spec.with_lambdas(&self.lambdas())
    }

    pub fn edf_total(&self) -> f64 {
        self.location
            .terms
            .iter()
            .chain(&self.dispersion.terms)
            .map(|t| t.edf)
            .sum()
    }

    pub fn term(&self, label: &str) -> Option<&TermFit> {
        self.location
            .terms
            .iter()
            .chain(&self.dispersion.terms)
            .find(|t| t.label == label)
    }
}

struct Engine<'a> {
    d: &'a ModelDesign,
    ll: Vec<f64>,
    ld: Vec<f64>,
    max_halvings: usize,
}

struct State {
    tl: DVector<f64>,
    td: DVector<f64>,
    pll: f64,
    loglik: f64,
}

impl Engine<'_> {
    fn rank_error(&self, col: usize, sub: &SubmodelDesign) -> FitError {
        FitError::RankDeficient(sub.column_owner(col))
    }

    fn initial(&self) -> Result<State, FitError> {
        let d = self.d;
        let n = d.n();
        let xp = d.location.x.columns(0, d.location.n_param).into_owned();
        let target = &d.y - &d.offset;
        let gram = xp.transpose() * &xp;
        let chol = ScaledCholesky::factor(&gram).map_err(|c| self.rank_error(c, &d.location))?;
        let beta = chol.solve(&(xp.transpose() * &target));
        let rss = (&target - &xp * &beta).norm_squared();
        let mut tl = DVector::zeros(d.location.ncols());
        tl.rows_mut(0, beta.len()).copy_from(&beta);
        let mut td = DVector::zeros(d.dispersion.ncols());
        let icpt = d
            .dispersion
            .param_names
            .iter()
            .position(|s| s == Covariate::Intercept.as_str())
            .expect("validated intercept");
        td[icpt] = (rss / n as f64).max(1e-10).ln();
        let (pll, loglik) = d
            .eval(&tl, &td, &self.ll, &self.ld)
            .ok_or_else(|| FitError::Evaluation("initial values not finite".into()))?;
        Ok(State {
            tl,
            td,
            pll,
            loglik,
        })
    }

    /// Moves towards the proposal with step halving. Only a strict gain is
    /// accepted: near the optimum the scoring solves are accurate only to
    /// roundoff and a tie would let them undo the Newton step.
    fn line_search(&self, st: &mut State, tl_new: &DVector<f64>, td_new: &DVector<f64>) -> bool {
        let dl = tl_new - &st.tl;
        let dd = td_new - &st.td;
        let mut alpha = 1.0;
        for _ in 0..=self.max_halvings {
            let tl = &st.tl + &dl * alpha;
            let td = &st.td + &dd * alpha;
            if let Some((pll, loglik)) = self.d.eval(&tl, &td, &self.ll, &self.ld) {
                if pll > st.pll {
                    *st = State { tl, td, pll, loglik };
                    return true;
                }
            }
            alpha *= 0.5;
        }
        false
    }

    fn location_step(&self, st: &mut State) -> Result<(), FitError> {
        let d = self.d;
        let pw = d.pointwise(&st.tl, &st.td);
        let w = DVector::from_fn(d.n(), |k, _| pw.v[k] * (-pw.tau[k]).exp());
        let a = weighted_gram(&d.location.x, &w) + d.location.penalty(&self.ll);
        let chol = ScaledCholesky::factor(&a).map_err(|c| self.rank_error(c, &d.location))?;
        let target = &d.y - &d.offset;
        let proposal = chol.solve(&weighted_cross(&d.location.x, &w, &target));
        let td = st.td.clone();
        self.line_search(st, &proposal, &td);
        Ok(())
    }

    fn dispersion_step(&self, st: &mut State) -> Result<(), FitError> {
        let d = self.d;
        let pw = d.pointwise(&st.tl, &st.td);
        let fw = d.dispersion_fisher_weight();
        let work = DVector::from_fn(d.n(), |k, _| {
            pw.tau[k] + 0.5 * (pw.v_score[k] * pw.z[k] * pw.z[k] - 1.0) / fw
        });
        let w = DVector::from_element(d.n(), fw);
        let a = weighted_gram(&d.dispersion.x, &w) + d.dispersion.penalty(&self.ld);
        let chol = ScaledCholesky::factor(&a).map_err(|c| self.rank_error(c, &d.dispersion))?;
        let proposal = chol.solve(&weighted_cross(&d.dispersion.x, &w, &work));
        let tl = st.tl.clone();
        self.line_search(st, &tl, &proposal);
        Ok(())
    }

    fn grad_max(&self, tl: &DVector<f64>, td: &DVector<f64>) -> f64 {
        let (gl, gd) = self.d.gradient_parts(tl, td, &self.ll, &self.ld);
        gl.amax().max(gd.amax())
    }

    /// Close to the optimum the objective is flat to roundoff and cannot
    /// rank points, so a full Newton step is taken if it costs no more than
    /// roundoff and shrinks the gradient.
    fn accept_flat(&self, st: &mut State, tl: &DVector<f64>, td: &DVector<f64>) -> bool {
        let slack = 1e-12 * self.d.n() as f64 * (1.0 + st.pll.abs());
        let Some((pll, loglik)) = self.d.eval(tl, td, &self.ll, &self.ld) else {
            return false;
        };
        let ok = pll >= st.pll - slack && self.grad_max(tl, td) < self.grad_max(&st.tl, &st.td);
        if ok {
            *st = State {
                tl: tl.clone(),
                td: td.clone(),
                pll,
                loglik,
            };
        }
        ok
    }

    fn newton_step(&self, st: &mut State) {
        let d = self.d;
        let (gl, gd) = d.gradient_parts(&st.tl, &st.td, &self.ll, &self.ld);
        let info = d.observed_information(&st.tl, &st.td, &self.ll, &self.ld);
        let Ok(chol) = ScaledCholesky::factor(&info) else {
            return;
        };
        let g = DVector::from_iterator(gl.len() + gd.len(), gl.iter().chain(gd.iter()).copied());
        let step = chol.solve(&g);
        let p = st.tl.len();
        let tl = &st.tl + step.rows(0, p);
        let td = &st.td + step.rows(p, step.len() - p);
        if !self.accept_flat(st, &tl, &td) {
            self.line_search(st, &tl, &td);
        }
    }

}

/// Fits with every λ fixed. `lambdas` lists location terms first.
pub fn fit_design(
    design: &ModelDesign,
    spec: &ModelSpec,
    lambdas: &[f64],
    table: &ObservationTable,
) -> Result<LogSymFit, FitError> {
    let nl = design.location.terms.len();
    if lambdas.len() != nl + design.dispersion.terms.len() {
        return Err(FitError::Dimension("one λ per spline term required".into()));
    }
    let conv = spec.convergence;
    let (work, to_raw) = centered_design(design);
    let eng = Engine {
        d: &work,
        ll: lambdas[..nl].to_vec(),
        ld: lambdas[nl..].to_vec(),
        max_halvings: conv.max_halvings,
    };
    let mut st = eng.initial()?;
    let mut trace = vec![st.pll];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=conv.max_outer {
        iterations = iter;
        let (prev_pll, prev_tl, prev_td) = (st.pll, st.tl.clone(), st.td.clone());
        eng.location_step(&mut st)?;
        eng.dispersion_step(&mut st)?;
        if iter >= 2 {
            eng.newton_step(&mut st);
        }
        trace.push(st.pll);
        let grad = raw_grad_max(design, &eng, &st, &to_raw);
        let dpar = (&st.tl - prev_tl).amax().max((&st.td - prev_td).amax());
        let dll = (st.pll - prev_pll).abs() / (st.pll.abs() + conv.tol_loglik);
        if grad <= conv.tol_grad
            || (dll <= conv.tol_loglik && dpar <= conv.tol_param && grad <= STATIONARITY_TOL)
        {
            converged = true;
            // Polish: Newton converges quadratically from here.
            for _ in 0..2 {
                eng.newton_step(&mut st);
            }
            break;
        }
    }
    to_raw(&mut st.tl, &mut st.td);
    let (pll, loglik) = design
        .eval(&st.tl, &st.td, &eng.ll, &eng.ld)
        .ok_or_else(|| FitError::Evaluation("final values not finite".into()))?;
    st.pll = pll;
    st.loglik = loglik;
    let eng = Engine { d: design, ..eng };
    summarize(design, spec, table, &eng, st, trace, converged, iterations)
}

type ToRaw = Box<dyn Fn(&mut DVector<f64>, &mut DVector<f64>)>;

/// Stationarity is judged in the raw coefficients: the slope gradient of a
/// raw year column picks up the intercept gradient times the mean year.
fn raw_grad_max(design: &ModelDesign, eng: &Engine<'_>, st: &State, to_raw: &ToRaw) -> f64 {
    let (mut tl, mut td) = (st.tl.clone(), st.td.clone());
    to_raw(&mut tl, &mut td);
    let (gl, gd) = design.gradient_parts(&tl, &td, &eng.ll, &eng.ld);
    gl.amax().max(gd.amax())
}

/// Working design with centered parametric columns and the map taking its
/// coefficients back to the raw columns.
fn centered_design(design: &ModelDesign) -> (ModelDesign, ToRaw) {
    let mut work = design.clone();
    let mut maps = [None, None];
    for (slot, sub) in maps.iter_mut().zip([&mut work.location, &mut work.dispersion]) {
        if let Some((c, icpt, means)) = sub.centered() {
            *sub = c;
            *slot = Some((icpt, means));
        }
    }
    let back = |theta: &mut DVector<f64>, map: &Option<(usize, Vec<f64>)>| {
        if let Some((icpt, means)) = map {
            let shift: f64 = means.iter().enumerate().map(|(j, m)| m * theta[j]).sum();
            theta[*icpt] -= shift;
        }
    };
    let [ml, md] = maps;
    (
        work,
        Box::new(move |tl, td| {
            back(tl, &ml);
            back(td, &md);
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    design: &ModelDesign,
    spec: &ModelSpec,
    table: &ObservationTable,
    eng: &Engine<'_>,
    st: State,
    trace: Vec<f64>,
    loop_converged: bool,
    iterations: usize,
) -> Result<LogSymFit, FitError> {
    let d = design;
    let params = ModelParams {
        location: st.tl.iter().copied().collect(),
        dispersion: st.td.iter().copied().collect(),
        location_lambdas: eng.ll.clone(),
        dispersion_lambdas: eng.ld.clone(),
    };
    let grad_norm = d
        .gradient(&params)?
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs()));

    let info = d.observed_information(&st.tl, &st.td, &eng.ll, &eng.ld);
    let cov = ScaledCholesky::factor(&info)
        .or_else(|_| ScaledCholesky::factor(&d.expected_information(&st.tl, &st.td, &eng.ll, &eng.ld)))
        .ok()
        .map(|c| c.inverse());
    let pl = d.location.ncols();
    let se = |i: usize| cov.as_ref().map(|c| c[(i, i)].max(0.0).sqrt());

    let pw = d.pointwise(&st.tl, &st.td);
    let w_loc = DVector::from_fn(d.n(), |k, _| pw.v[k] * (-pw.tau[k]).exp());
    let w_disp = DVector::from_element(d.n(), d.dispersion_fisher_weight());

    let submodel = |sub: &SubmodelDesign,
                    theta: &DVector<f64>,
                    lambdas: &[f64],
                    w: &DVector<f64>,
                    offset: usize|
     -> Result<SubmodelFit, FitError> {
        let coefficients = (0..sub.n_param)
            .map(|i| CoefEstimate {
                name: sub.param_names[i].clone(),
                estimate: theta[i],
                std_err: se(offset + i),
            })
            .collect();
        let mut terms = Vec::new();
        for (j, t) in sub.terms.iter().enumerate() {
            let a = sub.term_coefs(theta, j);
            let bwb = weighted_gram(&t.block.b, w);
            let edf = ScaledCholesky::factor(&(&bwb + &t.block.k * lambdas[j]))
                .map_err(|_| FitError::RankDeficient(format!("term {}", t.label)))?
                .solve_matrix(&bwb)
                .trace();
            terms.push(TermFit {
                label: t.label.clone(),
                covariate: t.spec.covariate,
                lambda: lambdas[j],
                edf,
                coef_norm: a.norm(),
                fitted: (&t.block.b * &a).iter().copied().collect(),
                coefficients: a.iter().copied().collect(),
                basis: t.block.basis.clone(),
                constraint: t.block.constraint.clone().unwrap_or_default(),
            });
        }
        Ok(SubmodelFit { coefficients, terms })
    };
    let location = submodel(&d.location, &st.tl, &eng.ll, &w_loc, 0)?;
    let dispersion = submodel(&d.dispersion, &st.td, &eng.ld, &w_disp, pl)?;

    let edf: f64 = location.terms.iter().chain(&dispersion.terms).map(|t| t.edf).sum();
    let k = (d.location.n_param + d.dispersion.n_param) as f64 + edf;
    let mut aic = -2.0 * st.loglik + 2.0 * k;
    if spec.jacobian_adjust {
        aic += 2.0 * kahan_sum(d.y.iter().copied());
    }
    let mu_hat = (&d.offset + &d.location.x * &st.tl).iter().copied().collect();
    let phi_hat = pw.tau.iter().map(|t| t.exp()).collect();
    Ok(LogSymFit {
        label: "semiparametric".into(),
        spec: spec.clone(),
        location,
        dispersion,
        mu_hat,
        phi_hat,
        loglik: st.loglik,
        penalized_loglik: st.pll,
        aic,
        jacobian_adjusted: spec.jacobian_adjust,
        converged: loop_converged && grad_norm <= STATIONARITY_TOL,
        iterations,
        grad_norm,
        trace,
        n_obs: d.n(),
        table_digest: table.key_digest(),
    })
}

/// Penalized log-likelihood of `params` under `spec` on `table`.
pub fn penalized_loglik(
    spec: &ModelSpec,
    table: &ObservationTable,
    params: &ModelParams,
) -> Result<f64, FitError> {
    ModelDesign::build(spec, table)?.penalized_loglik(params)
}

/// Fits `spec` to `table`, selecting any `λ` flagged for selection first.
pub fn fit(spec: &ModelSpec, table: &ObservationTable) -> Result<LogSymFit, FitError> {
    fit_with(spec, table, Execution::default())
}

pub fn fit_with(
    spec: &ModelSpec,
    table: &ObservationTable,
    exec: Execution,
) -> Result<LogSymFit, FitError> {
    let design = ModelDesign::build(spec, table)?;
    let mut lambdas = initial_lambdas(spec);
    for (j, fixed) in spec.fixed_lambdas().iter().enumerate() {
        if fixed.is_none() {
            lambdas[j] = select_on_design(&design, spec, table, &lambdas, j, exec)?;
        }
    }
    fit_design(&design, spec, &lambdas, table)
}

fn initial_lambdas(spec: &ModelSpec) -> Vec<f64> {
    let mid = spec.lambda_grid.midpoint();
    spec.fixed_lambdas()
        .iter()
        .map(|l| l.unwrap_or(mid))
        .collect()
}

/// Grid-selects `λ` for term `term` (location terms first) by AIC, holding
/// the other terms at their fixed values (grid midpoint for terms that are
/// themselves awaiting selection). Ties go to the larger `λ`.
pub fn select_lambda(
    spec: &ModelSpec,
    table: &ObservationTable,
    term: usize,
) -> Result<f64, FitError> {
    let design = ModelDesign::build(spec, table)?;
    if term >= spec.n_terms() {
        return Err(FitError::Dimension(format!("no term with index {term}")));
    }
    select_on_design(&design, spec, table, &initial_lambdas(spec), term, Execution::default())
}

fn select_on_design(
    design: &ModelDesign,
    spec: &ModelSpec,
    table: &ObservationTable,
    base: &[f64],
    term: usize,
    exec: Execution,
) -> Result<f64, FitError> {
    let grid = &spec.lambda_grid.0;
    let scores: Vec<Option<f64>> = map_indexed(exec, grid.len(), |i| {
        let mut lambdas = base.to_vec();
        lambdas[term] = grid[i];
        fit_design(design, spec, &lambdas, table)
            .ok()
            .filter(|f| f.converged && f.aic.is_finite())
            .map(|f| f.aic)
    });
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let mut best: Option<(f64, f64)> = None;
    for i in order {
        if let Some(aic) = scores[i] {
            if best.is_none_or(|(_, b)| aic < b - 1e-9) {
                best = Some((grid[i], aic));
            }
        }
    }
    best.map(|(l, _)| l).ok_or_else(|| {
        FitError::Selection(format!("every grid fit failed for term index {term}"))
    })
}

/// `μ̂ − log p`: fitted log-rate per cell.
pub fn fitted_log_rate(fit: &LogSymFit, table: &ObservationTable) -> Vec<f64> {
    fit.mu_hat
        .iter()
        .zip(&table.cells)
        .map(|(m, c)| m - c.log_pop)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Location,
    Dispersion,
}

const CDF_CLAMP: f64 = 1e-12;

/// Quantile residuals. `Location` maps `z` through the generator CDF;
/// `Dispersion` maps `z²` through the CDF of `ε²`.
pub fn residuals(fit: &LogSymFit, table: &ObservationTable, kind: ResidualKind) -> Vec<f64> {
    let g = fit.spec.generator;
    table
        .cells
        .iter()
        .zip(fit.mu_hat.iter().zip(&fit.phi_hat))
        .map(|(c, (mu, phi))| {
            let z = (c.log_t - mu) / phi.sqrt();
            match kind {
                ResidualKind::Location if g == Generator::Normal => z,
                ResidualKind::Location => {
                    norm_quantile(g.cdf(z).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP))
                }
                ResidualKind::Dispersion => {
                    let a = z.abs();
                    let p = g.cdf(a) - g.cdf(-a);
                    norm_quantile(p.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP))
                }
            }
        })
        .collect()
}

/// Looks up a term's smoothing choice in a spec (used by reporting).
pub fn term_smoothing(spec: &ModelSpec, label: &str) -> Option<Smoothing> {
    let find = |sub: &SubmodelSpec, which: &str| {
        sub.smooth
            .iter()
            .find(|t| format!("{which}:{}", t.label()) == label)
            .map(|t| t.lambda)
    };
    find(&spec.location, "location").or_else(|| find(&spec.dispersion, "dispersion"))
}
