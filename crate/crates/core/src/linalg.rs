//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SVD};

/// Relative singular-value cutoff used for every pseudoinverse in the crate.
pub const PINV_RTOL: f64 = 1e-10;

/// Thin SVD truncated to numerical rank.
///
/// Holds `U` (rows × rank), the retained singular values and `V` (cols × rank),
/// which is everything needed to apply `A†`, `(A†)ᵀ` and the orthogonal
/// projector `I − A A†` without forming any square N × N matrix.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
    pub sigma_max: f64,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>, rtol: f64) -> Self {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Self {
                u: DMatrix::zeros(rows, 0),
                sigma: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
                sigma_max: 0.0,
            };
        }
        let svd = SVD::new(a.clone(), true, true);
        let sv = svd.singular_values;
        let u_full = svd.u.expect("U requested");
        let vt_full = svd.v_t.expect("V requested");
        let sigma_max = sv.max();
        let cutoff = rtol * sigma_max;
        let rank = if sigma_max > 0.0 {
            sv.iter().take_while(|&&s| s > cutoff).count()
        } else {
            0
        };
        Self {
            u: u_full.columns(0, rank).into_owned(),
            sigma: sv.rows(0, rank).into_owned(),
            v: vt_full.rows(0, rank).transpose(),
            sigma_max,
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `A† b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut c = self.u.tr_mul(b);
        c.component_div_assign(&self.sigma);
        &self.v * c
    }

    /// `(A†)ᵀ z` for a column-space vector `z`.
    pub fn pinv_transpose_apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = self.v.tr_mul(z);
        for (mut row, s) in c.row_iter_mut().zip(self.sigma.iter()) {
            row /= *s;
        }
        &self.u * c
    }

    /// `(I − A A†) Z` applied column-wise.
    pub fn project_out(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        z - &self.u * self.u.tr_mul(z)
    }
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    SVD::new(a.clone(), false, false).singular_values
}

/// Minimum-norm least-squares solution of `A x ≈ b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    ThinSvd::new(a, PINV_RTOL).solve(b)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
