//! Symmetric density generators for the log-scale error `ε`.
//!
//! Every family has density `c_g · g(z²)`. The dispersion `φ` of the
//! regression model multiplies `ε` by `√φ`; no family is re-standardized to
//! unit variance, so `φ` is the scale under each family's own convention and
//! not necessarily `Var(log T)`. The literature sometimes calls `φ` the
//! "skewness" parameter because it governs the skewness of `T` itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::PI;
use thiserror::Error;

use crate::stats::{integrate, norm_cdf};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Smallest `|z|` used when computing fitting weights. Only the power
/// exponential family with `ζ > 0` is singular at zero.
pub const WEIGHT_Z_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("invalid shape for {family}: {reason}")]
    InvalidShape { family: &'static str, reason: String },
}

/// Error generator with its (fixed) shape hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Generator {
    Normal,
    /// Student-t with `nu > 0` degrees of freedom.
    Student { nu: f64 },
    /// Power exponential, `g(u) = exp(-u^{1/(1+ζ)} / 2)` with `ζ ∈ (-1, 1]`.
    Powerexp { zeta: f64 },
    /// `weight · N(0, 1/precision) + (1 - weight) · N(0, 1)`.
    Contnormal { weight: f64, precision: f64 },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Normal => "normal",
            Generator::Student { .. } => "student",
            Generator::Powerexp { .. } => "powerexp",
            Generator::Contnormal { .. } => "contnormal",
        }
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        let bad = |reason: String| {
            Err(FamilyError::InvalidShape {
                family: self.name(),
                reason,
            })
        };
        match *self {
            Generator::Normal => Ok(()),
            Generator::Student { nu } if !(nu > 0.0 && nu.is_finite()) => {
                bad(format!("nu must be positive and finite, got {nu}"))
            }
            Generator::Powerexp { zeta } if !(zeta > -1.0 && zeta <= 1.0) => {
                bad(format!("zeta must lie in (-1, 1], got {zeta}"))
            }
            Generator::Contnormal { weight, precision }
                if !(0.0..=1.0).contains(&weight) || !(precision > 0.0 && precision.is_finite()) =>
            {
                bad(format!(
                    "weight must lie in [0, 1] and precision be positive, got ({weight}, {precision})"
                ))
            }
            _ => Ok(()),
        }
    }

    /// `log c_g`, the log normalizing constant of the density `c_g g(z²)`.
    /// Not used by the contaminated normal, whose mixture carries its own.
    fn log_norm_const(&self) -> f64 {
        match *self {
            Generator::Normal | Generator::Contnormal { .. } => -HALF_LN_2PI,
            Generator::Student { nu } => {
                ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
            }
            Generator::Powerexp { zeta } => {
                let p = 2.0 / (1.0 + zeta);
                p.ln() - (1.0 + 1.0 / p) * std::f64::consts::LN_2 - ln_gamma(1.0 / p)
            }
        }
    }

    /// `log g(u)` for `u = z² ≥ 0`, without the normalizing constant.
    pub fn log_kernel(&self, u: f64) -> f64 {
        match *self {
            Generator::Normal => -0.5 * u,
            Generator::Student { nu } => -0.5 * (nu + 1.0) * (u / nu).ln_1p(),
            Generator::Powerexp { zeta } => -0.5 * u.powf(1.0 / (1.0 + zeta)),
            Generator::Contnormal { weight, precision } => {
                let a = weight.ln() + 0.5 * precision.ln() - 0.5 * precision * u;
                let b = (1.0 - weight).ln() - 0.5 * u;
                log_add_exp(a, b)
            }
        }
    }

    pub fn logpdf(&self, z: f64) -> f64 {
        self.log_norm_const() + self.log_kernel(z * z)
    }

    /// Scoring weight `v(z) = -2 d log g(u)/du` at `u = z²`.
    pub fn weight_v(&self, z: f64) -> f64 {
        let u = z * z;
        match *self {
            Generator::Normal => 1.0,
            Generator::Student { nu } => (nu + 1.0) / (nu + u),
            Generator::Powerexp { zeta } => {
                let a = 1.0 / (1.0 + zeta);
                a * u.powf(-zeta * a)
            }
            Generator::Contnormal { .. } => {
                let (a, n, _) = self.contnormal_moments(u);
                n / a
            }
        }
    }

    /// `dv/du` at `u = z²`; enters the observed information.
    pub fn weight_v_du(&self, z: f64) -> f64 {
        let u = z * z;
        match *self {
            Generator::Normal => 0.0,
            Generator::Student { nu } => -(nu + 1.0) / ((nu + u) * (nu + u)),
            Generator::Powerexp { zeta } => {
                let a = 1.0 / (1.0 + zeta);
                -zeta * a * a * u.powf(-zeta * a - 1.0)
            }
            Generator::Contnormal { .. } => {
                let (a, n, m) = self.contnormal_moments(u);
                let v = n / a;
                -0.5 * m / a + 0.5 * v * v
            }
        }
    }

    /// Weight used inside the fitting engine, with `|z|` floored at
    /// [`WEIGHT_Z_FLOOR`].
    pub fn fitting_weight(&self, z: f64) -> f64 {
        self.weight_v(z.abs().max(WEIGHT_Z_FLOOR))
    }

    /// Derivative companion of [`Generator::fitting_weight`].
    pub fn fitting_weight_du(&self, z: f64) -> f64 {
        self.weight_v_du(z.abs().max(WEIGHT_Z_FLOOR))
    }

    /// Scaled mixture sums `(A, N, M)` with `A ∝ g`, `N ∝ -2g'`, `M ∝ 4g''`,
    /// sharing a common factor so the ratios are stable for large `u`.
    fn contnormal_moments(&self, u: f64) -> (f64, f64, f64) {
        let Generator::Contnormal { weight, precision } = *self else {
            unreachable!()
        };
        let la = weight.ln() + 0.5 * precision.ln() - 0.5 * precision * u;
        let lb = (1.0 - weight).ln() - 0.5 * u;
        let top = la.max(lb);
        let ea = (la - top).exp();
        let eb = (lb - top).exp();
        (
            ea + eb,
            ea * precision + eb,
            ea * precision * precision + eb,
        )
    }

    /// `P(ε ≤ z)`.
    pub fn cdf(&self, z: f64) -> f64 {
        match *self {
            Generator::Normal => norm_cdf(z),
            Generator::Student { nu } => StudentsT::new(0.0, 1.0, nu)
                .expect("validated shape")
                .cdf(z),
            Generator::Powerexp { zeta } => {
                if z == 0.0 {
                    return 0.5;
                }
                let p = 2.0 / (1.0 + zeta);
                let mass = gamma_lr(1.0 / p, 0.5 * z.abs().powf(p));
                0.5 + 0.5 * z.signum() * mass
            }
            Generator::Contnormal { weight, precision } => {
                weight * norm_cdf(z * precision.sqrt()) + (1.0 - weight) * norm_cdf(z)
            }
        }
    }

    /// One draw of `ε`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Generator::Normal => rng.sample(StandardNormal),
            Generator::Student { nu } => {
                let z: f64 = rng.sample(StandardNormal);
                let chi = ChiSquared::new(nu).expect("validated shape").sample(rng);
                z / (chi / nu).sqrt()
            }
            Generator::Powerexp { zeta } => {
                let p = 2.0 / (1.0 + zeta);
                let s = Gamma::new(1.0 / p, 1.0).expect("validated shape").sample(rng);
                let magnitude = (2.0 * s).powf(1.0 / p);
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            Generator::Contnormal { weight, precision } => {
                let z: f64 = rng.sample(StandardNormal);
                if rng.random::<f64>() < weight {
                    z / precision.sqrt()
                } else {
                    z
                }
            }
        }
    }

    /// `n` independent draws from a private ChaCha stream seeded by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    /// `d_g = E[v(ε)² ε²]`, the expected information factor of the location.
    pub fn info_location(&self) -> f64 {
        match *self {
            Generator::Normal => 1.0,
            Generator::Student { nu } => (nu + 1.0) / (nu + 3.0),
            Generator::Powerexp { zeta } => {
                let a = 1.0 / (1.0 + zeta);
                a * a
                    * (1.0 - zeta).exp2()
                    * (ln_gamma(0.5 * (3.0 - zeta)) - ln_gamma(0.5 * (1.0 + zeta))).exp()
            }
            Generator::Contnormal { .. } => self.expect_even(|z| {
                let v = self.weight_v(z);
                v * v * z * z
            }),
        }
    }

    /// `f_g = E[v(ε)² ε⁴]`; the expected information of `log φ` is `(f_g - 1)/4`.
    pub fn info_dispersion_factor(&self) -> f64 {
        match *self {
            Generator::Normal => 3.0,
            Generator::Student { nu } => 3.0 * (nu + 1.0) / (nu + 3.0),
            Generator::Powerexp { zeta } => (3.0 + zeta) / (1.0 + zeta),
            Generator::Contnormal { .. } => self.expect_even(|z| {
                let v = self.weight_v(z);
                v * v * z.powi(4)
            }),
        }
    }

    fn expect_even<F: Fn(f64) -> f64>(&self, h: F) -> f64 {
        let spread = match *self {
            Generator::Contnormal { precision, .. } => 1.0_f64.max(1.0 / precision.sqrt()),
            _ => 1.0,
        };
        2.0 * integrate(|z| h(z) * self.logpdf(z).exp(), 0.0, 40.0 * spread, 1e-12)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let top = a.max(b);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + ((a - top).exp() + (b - top).exp()).ln()
}
