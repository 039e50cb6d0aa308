//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Normal-equation systems in this crate mix an intercept column with raw
//! calendar years, so every factorization is done on the Jacobi-scaled
//! matrix `D A D` with `D = diag(1/sqrt(a_ii))`.

use nalgebra::{DMatrix, DVector};

/// Relative pivot below which a column is treated as linearly dependent on
/// the preceding ones.
pub const PIVOT_TOL: f64 = 1e-11;

/// Cholesky factorization of a Jacobi-scaled symmetric positive definite
/// matrix.
#[derive(Debug, Clone)]
pub struct ScaledCholesky {
    l: DMatrix<f64>,
    scale: DVector<f64>,
}

impl ScaledCholesky {
    /// Factors `a`. On failure returns the index of the first column whose
    /// pivot collapsed.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self, usize> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            let d = a[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(i);
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)] * scale[j] * scale[j];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > PIVOT_TOL) {
                return Err(j);
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)] * scale[i] * scale[j];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l, scale })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.component_mul(&self.scale);
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y.component_mul(&self.scale)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_matrix(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// `Xᵀ diag(w) X`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for mut col in xw.column_iter_mut() {
        col.component_mul_assign(w);
    }
    x.transpose() * xw
}

/// `Xᵀ diag(w) z`.
pub fn weighted_cross(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    x.transpose() * w.component_mul(z)
}

/// Places `blocks` on the diagonal of a `dim × dim` zero matrix, starting at
/// the given offsets.
pub fn block_diagonal(dim: usize, blocks: &[(usize, DMatrix<f64>)]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for (start, block) in blocks {
        out.view_mut((*start, *start), (block.nrows(), block.ncols()))
            .copy_from(block);
    }
    out
}

/// `aᵀ K a`.
pub fn quad_form(k: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.dot(&(k * a))
}

/// Householder basis for the null space of `cᵀ`: a `q × (q-1)` matrix with
/// orthonormal columns, each orthogonal to `c`.
pub fn null_space_of_vector(c: &DVector<f64>) -> DMatrix<f64> {
    let q = c.len();
    let norm = c.norm();
    if norm == 0.0 {
        return DMatrix::identity(q, q).columns(1, q - 1).into_owned();
    }
    let mut v = c.clone();
    let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let h = DMatrix::identity(q, q) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, q - 1).into_owned()
}

/// Compensated summation.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}
