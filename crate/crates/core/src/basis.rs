//! Natural cubic spline and cubic P-spline bases with roughness penalties.
//!
//! An ncs basis is parameterized by the function values at its knots, which
//! sit at every distinct covariate value; its penalty `K = Q R⁻¹ Qᵀ` gives
//! `aᵀKa = ∫ f''(x)² dx` for the natural interpolant through `(t, a)`.
//! A psp basis uses cubic B-splines on equally spaced knots with a
//! difference penalty `K = DᵀD`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{null_space_of_vector, ScaledCholesky};

const PSP_DEGREE: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("degenerate spline term: {0}")]
    Degenerate(String),
}

/// A built spline basis: everything needed to evaluate it at new points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplineBasis {
    Ncs {
        knots: Vec<f64>,
    },
    Psp {
        lower: f64,
        upper: f64,
        segments: usize,
        diff_order: usize,
    },
}

impl SplineBasis {
    pub fn ncs(x: &[f64]) -> Result<Self, BasisError> {
        let mut knots: Vec<f64> = x.to_vec();
        if knots.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::Degenerate("non-finite covariate value".into()));
        }
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        if knots.len() < 3 {
            return Err(BasisError::Degenerate(format!(
                "natural cubic spline needs at least 3 distinct values, got {}",
                knots.len()
            )));
        }
        Ok(SplineBasis::Ncs { knots })
    }

    pub fn psp(x: &[f64], basis_dim: usize, diff_order: usize) -> Result<Self, BasisError> {
        if diff_order == 0 || basis_dim < diff_order + 1 || basis_dim < PSP_DEGREE + 1 {
            return Err(BasisError::Degenerate(format!(
                "P-spline basis dimension {basis_dim} too small for difference order {diff_order}"
            )));
        }
        let lower = x.iter().copied().fold(f64::INFINITY, f64::min);
        let upper = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(BasisError::Degenerate(
                "P-spline covariate has no spread".into(),
            ));
        }
        Ok(SplineBasis::Psp {
            lower,
            upper,
            segments: basis_dim - PSP_DEGREE,
            diff_order,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            SplineBasis::Ncs { knots } => knots.len(),
            SplineBasis::Psp { segments, .. } => segments + PSP_DEGREE,
        }
    }

    /// Covariate range spanned by the basis.
    pub fn range(&self) -> (f64, f64) {
        match self {
            SplineBasis::Ncs { knots } => (knots[0], knots[knots.len() - 1]),
            SplineBasis::Psp { lower, upper, .. } => (*lower, *upper),
        }
    }

    /// Evaluates the basis at `x`, one row per value.
    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            SplineBasis::Ncs { knots } => ncs_design(knots, x),
            SplineBasis::Psp {
                lower,
                upper,
                segments,
                ..
            } => psp_design(*lower, *upper, *segments, x),
        }
    }

    pub fn penalty(&self) -> DMatrix<f64> {
        let l = self.penalty_root();
        l.transpose() * l
    }

    /// `L` with `K = LᵀL`. For ncs `L = C⁻¹Qᵀ` where `R = CCᵀ`; for psp the
    /// difference matrix itself.
    pub fn penalty_root(&self) -> DMatrix<f64> {
        match self {
            SplineBasis::Ncs { knots } => {
                let (q, r) = ncs_q_r(knots);
                let c = r.cholesky().expect("R is diagonally dominant").l();
                c.solve_lower_triangular(&q.transpose())
                    .expect("nonzero diagonal")
            }
            SplineBasis::Psp {
                segments,
                diff_order,
                ..
            } => difference_matrix(segments + PSP_DEGREE, *diff_order),
        }
    }
}

/// Green–Silverman band matrices `Q` (q × (q−2)) and `R` ((q−2) × (q−2)).
fn ncs_q_r(knots: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut qm = DMatrix::zeros(q, q - 2);
    let mut r = DMatrix::zeros(q - 2, q - 2);
    for j in 0..q - 2 {
        qm[(j, j)] = 1.0 / h[j];
        qm[(j + 1, j)] = -(1.0 / h[j] + 1.0 / h[j + 1]);
        qm[(j + 2, j)] = 1.0 / h[j + 1];
        r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
        if j + 1 < q - 2 {
            r[(j, j + 1)] = h[j + 1] / 6.0;
            r[(j + 1, j)] = h[j + 1] / 6.0;
        }
    }
    (qm, r)
}

/// Maps knot values `a` to the second derivatives at all knots
/// (zero at both boundaries): a `q × q` matrix.
fn ncs_second_derivatives(knots: &[f64]) -> DMatrix<f64> {
    let q = knots.len();
    let (qm, r) = ncs_q_r(knots);
    let chol = ScaledCholesky::factor(&r).expect("R is diagonally dominant");
    let inner = chol.solve_matrix(&qm.transpose());
    let mut gamma = DMatrix::zeros(q, q);
    gamma.view_mut((1, 0), (q - 2, q)).copy_from(&inner);
    gamma
}

fn ncs_design(knots: &[f64], x: &[f64]) -> DMatrix<f64> {
    let q = knots.len();
    let gamma = ncs_second_derivatives(knots);
    let (lo, hi) = (knots[0], knots[q - 1]);
    let mut b = DMatrix::zeros(x.len(), q);
    for (row, &xv) in x.iter().enumerate() {
        if xv < lo || xv > hi {
            // Linear continuation with the boundary slope:
            //   left:  (a_1 − a_0)/h − h/6·(2γ_0 + γ_1)
            //   right: (a_q − a_{q−1})/h + h/6·(γ_{q−1} + 2γ_q)
            let left = xv < lo;
            let j = if left { 0 } else { q - 2 };
            let h = knots[j + 1] - knots[j];
            let dx = xv - if left { lo } else { hi };
            b[(row, if left { j } else { j + 1 })] += 1.0;
            b[(row, j + 1)] += dx / h;
            b[(row, j)] -= dx / h;
            let (wj, wj1) = if left {
                (-2.0 * h / 6.0, -h / 6.0)
            } else {
                (h / 6.0, 2.0 * h / 6.0)
            };
            for c in 0..q {
                b[(row, c)] += dx * (wj * gamma[(j, c)] + wj1 * gamma[(j + 1, c)]);
            }
            continue;
        }
        let j = match knots.binary_search_by(|k| k.partial_cmp(&xv).unwrap()) {
            Ok(i) => {
                b[(row, i)] = 1.0;
                continue;
            }
            Err(i) => i - 1,
        };
        let h = knots[j + 1] - knots[j];
        let dl = xv - knots[j];
        let dr = knots[j + 1] - xv;
        b[(row, j)] += dr / h;
        b[(row, j + 1)] += dl / h;
        let cj = -dl * dr / 6.0 * (1.0 + dr / h);
        let cj1 = -dl * dr / 6.0 * (1.0 + dl / h);
        for c in 0..q {
            b[(row, c)] += cj * gamma[(j, c)] + cj1 * gamma[(j + 1, c)];
        }
    }
    b
}

fn psp_design(lower: f64, upper: f64, segments: usize, x: &[f64]) -> DMatrix<f64> {
    let p = PSP_DEGREE;
    let dx = (upper - lower) / segments as f64;
    let knots: Vec<f64> = (0..segments + 2 * p + 1)
        .map(|i| lower + (i as f64 - p as f64) * dx)
        .collect();
    let dim = segments + p;
    let slack = 1e-9 * (upper - lower);
    let mut b = DMatrix::zeros(x.len(), dim);
    let mut outside = 0usize;
    for (row, &xv) in x.iter().enumerate() {
        if xv < lower - slack || xv > upper + slack {
            outside += 1;
        }
        let cell = ((xv - lower) / dx).floor();
        let span = (cell.max(0.0) as usize).min(segments - 1) + p;
        let vals = bspline_nonzero(&knots, span, p, xv);
        for (k, v) in vals.iter().enumerate() {
            b[(row, span - p + k)] = *v;
        }
    }
    if outside > 0 {
        warn!(
            "{outside} P-spline evaluation point(s) outside [{lower}, {upper}]; \
             using boundary-polynomial extrapolation"
        );
    }
    b
}

/// The `p + 1` B-spline values that are nonzero on knot span `span`
/// (Cox–de Boor triangle). Points outside the span extrapolate the span's
/// polynomial pieces.
fn bspline_nonzero(knots: &[f64], span: usize, p: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// `order`-th difference operator, `(dim − order) × dim`.
pub fn difference_matrix(dim: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::identity(dim, dim);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, dim, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

/// Evaluated basis plus penalty for one spline term.
#[derive(Debug, Clone)]
pub struct BasisBlock {
    pub basis: SplineBasis,
    /// n × q design.
    pub b: DMatrix<f64>,
    /// q × q penalty.
    pub k: DMatrix<f64>,
    /// Square root of the penalty, `k = rootᵀ root`.
    pub root: DMatrix<f64>,
    pub centered: bool,
    /// Column sums of the uncentered design, kept so the centering
    /// transform can be rebuilt away from the training data.
    pub constraint: Option<Vec<f64>>,
}

impl BasisBlock {
    fn from_basis(basis: SplineBasis, x: &[f64]) -> Self {
        let b = basis.design(x);
        let root = basis.penalty_root();
        Self {
            basis,
            b,
            k: root.transpose() * &root,
            root,
            centered: false,
            constraint: None,
        }
    }

    pub fn ncols(&self) -> usize {
        self.b.ncols()
    }

    /// Basis rows at new covariate values, in the same (possibly centered)
    /// coordinates as [`BasisBlock::b`].
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let raw = self.basis.design(x);
        match &self.constraint {
            Some(c) => raw * centering_transform(c),
            None => raw,
        }
    }
}

/// Sum-to-zero reparameterization from stored column sums.
pub fn centering_transform(constraint: &[f64]) -> DMatrix<f64> {
    null_space_of_vector(&DVector::from_column_slice(constraint))
}

pub fn ncs_build(x: &[f64]) -> Result<BasisBlock, BasisError> {
    Ok(BasisBlock::from_basis(SplineBasis::ncs(x)?, x))
}

pub fn psp_build(x: &[f64], basis_dim: usize, diff_order: usize) -> Result<BasisBlock, BasisError> {
    Ok(BasisBlock::from_basis(
        SplineBasis::psp(x, basis_dim, diff_order)?,
        x,
    ))
}

/// Reparameterizes `block` so its fitted values sum to zero over the rows
/// of its design. A block that is already centered is returned unchanged.
pub fn center_block(block: &BasisBlock) -> BasisBlock {
    if block.centered {
        return block.clone();
    }
    let c: DVector<f64> = block.b.row_sum().transpose();
    let z = null_space_of_vector(&c);
    let root = &block.root * &z;
    BasisBlock {
        basis: block.basis.clone(),
        b: &block.b * &z,
        k: root.transpose() * &root,
        root,
        centered: true,
        constraint: Some(c.iter().copied().collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::quad_form;

    #[test]
    fn ncs_three_knot_example() {
        let block = ncs_build(&[0.0, 1.0, 2.0]).unwrap();
        let a = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!((quad_form(&block.k, &a) - 6.0).abs() < 1e-12);
        assert!((block.b.clone() - DMatrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn ncs_needs_three_distinct_values() {
        assert!(matches!(
            ncs_build(&[1.0, 1.0, 2.0, 2.0]),
            Err(BasisError::Degenerate(_))
        ));
    }

    #[test]
    fn ncs_linear_values_are_unpenalized() {
        let x = [15.0, 22.0, 27.0, 40.0, 41.5, 60.0];
        let block = ncs_build(&x).unwrap();
        let a = DVector::from_vec(x.iter().map(|v| 3.0 - 0.2 * v).collect());
        assert!(quad_form(&block.k, &a).abs() < 1e-12);
    }

    #[test]
    fn ncs_extrapolation_is_linear() {
        let knots = [0.0, 1.0, 2.5, 4.0];
        let basis = SplineBasis::ncs(&knots).unwrap();
        let a = DVector::from_vec(vec![0.0, 2.0, -1.0, 3.0]);
        let xs = [-3.0, -2.0, -1.0, 0.0, 4.0, 5.0, 6.0, 7.0];
        let f = basis.design(&xs) * &a;
        let d1 = f[1] - f[0];
        assert!(((f[2] - f[1]) - d1).abs() < 1e-12 && ((f[3] - f[2]) - d1).abs() < 1e-12);
        let d2 = f[5] - f[4];
        assert!(((f[6] - f[5]) - d2).abs() < 1e-12 && ((f[7] - f[6]) - d2).abs() < 1e-12);
        // Slope continuity at the boundary knots.
        let eps = 1e-6;
        let g = basis.design(&[eps, 2.0 * eps]) * &a;
        assert!(((g[1] - g[0]) / eps - d1).abs() < 1e-4);
    }

    #[test]
    fn psp_partition_of_unity_and_null_space() {
        let x: Vec<f64> = (0..50).map(|i| 10.0 + i as f64 * 0.37).collect();
        let block = psp_build(&x, 23, 2).unwrap();
        for r in 0..x.len() {
            assert!((block.b.row(r).sum() - 1.0).abs() < 1e-12);
        }
        let constant = DVector::from_element(23, 4.2);
        let linear = DVector::from_fn(23, |j, _| j as f64);
        assert!(quad_form(&block.k, &constant).abs() < 1e-10);
        assert!(quad_form(&block.k, &linear).abs() < 1e-10);
    }

    #[test]
    fn psp_rejects_small_dimension() {
        assert!(psp_build(&[0.0, 1.0, 2.0], 2, 2).is_err());
        assert!(psp_build(&[1.0, 1.0], 10, 2).is_err());
    }

    #[test]
    fn difference_matrix_second_order_rows() {
        let d = difference_matrix(5, 2);
        assert_eq!(d.nrows(), 3);
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn centering_is_idempotent_and_sums_to_zero() {
        let x: Vec<f64> = (0..40).map(|i| (i % 8) as f64 * 5.0 + 17.0).collect();
        let block = ncs_build(&x).unwrap();
        let c1 = center_block(&block);
        assert_eq!(c1.ncols(), block.ncols() - 1);
        let a = DVector::from_fn(c1.ncols(), |j, _| (j as f64).sin());
        assert!((&c1.b * &a).sum().abs() < 1e-10);
        let c2 = center_block(&c1);
        assert_eq!(c2.ncols(), c1.ncols());
        assert!((c2.b.clone() - c1.b.clone()).amax() == 0.0);
        // Re-evaluation at the training points reproduces the design.
        assert!((c1.evaluate(&x) - c1.b.clone()).amax() < 1e-12);
    }
}
