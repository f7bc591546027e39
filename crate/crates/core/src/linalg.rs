//! Minimum-norm weighted least squares via column equilibration, QR and an
//! SVD of the triangular factor.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Singular values below `RCOND · σ_max` (on the equilibrated design) are treated as zero.
pub const RCOND: f64 = 1e-11;

/// Factorization of `diag(√w)·X` reused for least-squares solves and Gram systems.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q: DMatrix<f64>,
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    inv_sigma: DVector<f64>,
    col_scale: DVector<f64>,
    sqrt_w: Option<DVector<f64>>,
    rank: usize,
}

impl LeastSquares {
    pub fn new(x: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<Self> {
        let (n, p) = x.shape();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        let sqrt_w = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(Error::Dimension(format!("{} weights for {n} rows", w.len())));
                }
                if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
                }
                Some(DVector::from_iterator(n, w.iter().map(|v| v.sqrt())))
            }
            None => None,
        };
        let mut xs = x.clone();
        if let Some(sw) = &sqrt_w {
            for mut col in xs.column_iter_mut() {
                col.component_mul_assign(sw);
            }
        }
        let mut col_scale = DVector::zeros(p);
        for (j, mut col) in xs.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
                col_scale[j] = 1.0 / norm;
            }
        }
        if n == 0 || p == 0 {
            return Ok(Self {
                q: DMatrix::zeros(n, 0),
                u: DMatrix::zeros(0, 0),
                v_t: DMatrix::zeros(0, p),
                inv_sigma: DVector::zeros(0),
                col_scale,
                sqrt_w,
                rank: 0,
            });
        }
        let qr = xs.qr();
        let q = qr.q();
        let r = qr.r();
        let svd = SVD::new(r, true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let smax = svd.singular_values.max();
        let cutoff = smax * RCOND;
        let mut rank = 0;
        let inv_sigma = svd.singular_values.map(|s| {
            if s > cutoff && s > 0.0 {
                rank += 1;
                1.0 / s
            } else {
                0.0
            }
        });
        Ok(Self { q, u, v_t, inv_sigma, col_scale, sqrt_w, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.col_scale.len()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.ncols()
    }

    /// Minimum-norm minimizer of `Σ wᵢ (yᵢ − xᵢᵀβ)²`.
    pub fn solve(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.q.nrows() {
            return Err(Error::Dimension(format!("{} responses for {} rows", y.len(), self.q.nrows())));
        }
        let ys = match &self.sqrt_w {
            Some(sw) => y.component_mul(sw),
            None => y.clone(),
        };
        let qty = self.q.tr_mul(&ys);
        let uty = self.u.tr_mul(&qty).component_mul(&self.inv_sigma);
        let beta = self.v_t.tr_mul(&uty);
        Ok(beta.component_mul(&self.col_scale))
    }

    /// Minimum-norm solution of `(Xᵀ W X) c = b`.
    pub fn solve_gram(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.ncols() {
            return Err(Error::Dimension(format!("{} right-hand sides for {} columns", b.len(), self.ncols())));
        }
        let bs = b.component_mul(&self.col_scale);
        let inv_sq = self.inv_sigma.map(|s| s * s);
        let c = self.v_t.tr_mul(&(&self.v_t * bs).component_mul(&inv_sq));
        Ok(c.component_mul(&self.col_scale))
    }
}

/// Minimum-norm solution of the symmetric positive semidefinite system `G c = b`
/// using an eigendecomposition; returns the solution and whether `G` was singular.
pub fn solve_psd(gram: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let p = gram.nrows();
    if gram.ncols() != p || b.len() != p {
        return Err(Error::Dimension("Gram system shape".into()));
    }
    if gram.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gram system".into()));
    }
    // Jacobi-style equilibration before the eigensolve.
    let d = DVector::from_iterator(
        p,
        (0..p).map(|j| {
            let g = gram[(j, j)];
            if g > 0.0 {
                1.0 / g.sqrt()
            } else {
                0.0
            }
        }),
    );
    let scaled = DMatrix::from_fn(p, p, |i, j| gram[(i, j)] * d[i] * d[j]);
    let eig = scaled.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cutoff = lmax * RCOND * RCOND.sqrt();
    let mut singular = false;
    let bs = b.component_mul(&d);
    let proj = eig.eigenvectors.tr_mul(&bs);
    let mut coef = DVector::zeros(p);
    for k in 0..p {
        let l = eig.eigenvalues[k];
        if l > cutoff {
            coef[k] = proj[k] / l;
        } else {
            singular = true;
        }
    }
    let c = &eig.eigenvectors * coef;
    Ok((c.component_mul(&d), singular))
}
