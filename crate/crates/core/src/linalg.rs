//! Dense symmetric positive-definite helpers: Cholesky factorization,
//! log-determinant and inverse.

use ndarray::{Array2, ArrayView2};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as zero.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Lower-triangular Cholesky factor `C` with `A = C Cᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Array2<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix; `None` if it is not numerically positive
    /// definite. Only the lower triangle of `a` is read.
    pub fn new(a: ArrayView2<'_, f64>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
        let floor = PIVOT_TOLERANCE * scale.max(f64::MIN_POSITIVE);
        let mut c = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= c[[j, k]] * c[[j, k]];
            }
            if !(d > floor) {
                return None;
            }
            let pivot = d.sqrt();
            c[[j, j]] = pivot;
            for i in j + 1..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= c[[i, k]] * c[[j, k]];
                }
                c[[i, j]] = s / pivot;
            }
        }
        Some(Cholesky { factor: c })
    }

    pub fn factor(&self) -> &Array2<f64> {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `A⁻¹` via forward and back substitution on each unit vector.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.factor.nrows();
        let c = &self.factor;
        // W = C⁻¹ (lower triangular), A⁻¹ = Wᵀ W.
        let mut w = Array2::<f64>::zeros((n, n));
        for col in 0..n {
            for i in col..n {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for k in col..i {
                    s -= c[[i, k]] * w[[k, col]];
                }
                w[[i, col]] = s / c[[i, i]];
            }
        }
        let mut inv = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += w[[k, i]] * w[[k, j]];
                }
                inv[[i, j]] = s;
                inv[[j, i]] = s;
            }
        }
        inv
    }
}

/// Determinant by Gaussian elimination with partial pivoting. Used for
/// general (possibly singular) matrices where Cholesky does not apply.
pub fn det_lu(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[[x, col]].abs().total_cmp(&m[[y, col]].abs()))
            .unwrap();
        if m[[piv, col]] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for j in 0..n {
                m.swap([piv, j], [col, j]);
            }
            det = -det;
        }
        let p = m[[col, col]];
        det *= p;
        for r in col + 1..n {
            let f = m[[r, col]] / p;
            if f != 0.0 {
                for j in col..n {
                    m[[r, j]] -= f * m[[col, j]];
                }
            }
        }
    }
    det
}
