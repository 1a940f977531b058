//! Dense linear-algebra kernels: compact SVD, Gram eigenvalues,
//! least-squares factor updates, and row-orthonormal augmentation.

use nalgebra::{DVector, QR};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Default coefficient of the numerical-rank cutoff: singular values below
/// `coeff · max(rows, cols) · s_max` are treated as zero.
pub const DEFAULT_RANK_COEFF: f64 = 1e-12;

const ITER_LIMIT: usize = 10_000;

const JACOBI_SWEEP_LIMIT: usize = 60;

/// Relative singular-value tolerance for a matrix of the given shape.
pub fn numerical_rank_tol(rows: usize, cols: usize, coeff: f64) -> f64 {
    coeff * rows.max(cols) as f64
}

/// Thin SVD truncated to the numerical rank: `a ≈ u · diag(s) · vt` with
/// strictly positive, nonincreasing `s`.
#[derive(Debug, Clone)]
pub struct CompactSVD {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl CompactSVD {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        if self.s.is_empty() {
            return Matrix::zeros(self.u.nrows(), self.vt.ncols());
        }
        &self.u * Matrix::from_diagonal(&DVector::from_row_slice(&self.s)) * &self.vt
    }
}

/// Eigenvalues of a symmetric positive semidefinite matrix, sorted
/// nonincreasing.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    pub values: Vec<f64>,
}

/// Computes the compact SVD of `a`, discarding singular values below
/// `tol · max(s)`.
pub fn compact_svd(a: &Matrix, tol: f64) -> Result<CompactSVD> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("singular value decomposition input"));
    }
    // The QR-iteration path can mispair singular vectors with their values on
    // heavily rank-deficient inputs, so its output is verified against the
    // input and one-sided Jacobi serves as the slow, unconditionally sound
    // fallback.
    if let Some(svd) = qr_iteration_svd(a, tol) {
        if svd_is_consistent(a, &svd, tol) {
            return Ok(svd);
        }
    }
    let svd = jacobi_svd(a, tol);
    if !svd_is_consistent(a, &svd, tol) {
        return Err(Error::SvdFailed);
    }
    Ok(svd)
}

fn qr_iteration_svd(a: &Matrix, tol: f64) -> Option<CompactSVD> {
    let svd = nalgebra::linalg::SVD::try_new(a.clone(), true, true, f64::EPSILON, ITER_LIMIT)?;
    let u_full = svd.u.expect("u requested");
    let vt_full = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let smax = if sv.is_empty() { 0.0 } else { sv[order[0]] };
    let cutoff = tol * smax;
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > 0.0 && sv[i] >= cutoff)
        .collect();

    let k = kept.len();
    let mut u = Matrix::zeros(a.nrows(), k);
    let mut vt = Matrix::zeros(k, a.ncols());
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in kept.iter().enumerate() {
        u.set_column(dst, &u_full.column(src));
        vt.set_row(dst, &vt_full.row(src));
        s.push(sv[src]);
    }
    Some(CompactSVD { u, s, vt })
}

/// Backward-error check: the reconstruction may deviate by the discarded
/// tail plus a stability allowance, nothing more.
fn svd_is_consistent(a: &Matrix, svd: &CompactSVD, tol: f64) -> bool {
    let err = (a - svd.reconstruct()).norm();
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let min_dim = a.nrows().min(a.ncols()).max(1) as f64;
    let max_dim = a.nrows().max(a.ncols()) as f64;
    let budget = smax * (tol * min_dim.sqrt() + 1e-11 * max_dim);
    err <= budget.max(1e-300 * min_dim)
}

/// One-sided Jacobi SVD: rotates column pairs of (the taller orientation of)
/// `a` until they are mutually orthogonal. Quadratically convergent and
/// immune to the deflation hazards of bidiagonal QR iteration.
fn jacobi_svd(a: &Matrix, tol: f64) -> CompactSVD {
    if a.nrows() < a.ncols() {
        let t = jacobi_svd(&a.transpose(), tol);
        return CompactSVD {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        };
    }
    let (m, n) = (a.nrows(), a.ncols());
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);
    for _ in 0..JACOBI_SWEEP_LIMIT {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut cols: Vec<(f64, usize)> = (0..n).map(|j| (w.column(j).norm(), j)).collect();
    cols.sort_by(|x, y| y.0.total_cmp(&x.0));
    let smax = cols.first().map(|c| c.0).unwrap_or(0.0);
    let cutoff = tol * smax;
    let kept: Vec<(f64, usize)> = cols
        .into_iter()
        .filter(|&(s, _)| s > 0.0 && s >= cutoff)
        .collect();

    let k = kept.len();
    let mut u = Matrix::zeros(m, k);
    let mut vt = Matrix::zeros(k, n);
    let mut s_out = Vec::with_capacity(k);
    for (dst, &(sigma, src)) in kept.iter().enumerate() {
        u.set_column(dst, &(w.column(src) / sigma));
        vt.set_row(dst, &v.column(src).transpose());
        s_out.push(sigma);
    }
    CompactSVD { u, s: s_out, vt }
}

/// Eigenvalues of the Gram matrix `xᵀx`, sorted nonincreasing. These equal
/// the squared singular values of `x`.
pub fn gram_eigenvalues(x: &Matrix) -> Result<EigenSpectrum> {
    let gram = x.tr_mul(x);
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigenvalue decomposition input"));
    }
    let eig = nalgebra::linalg::SymmetricEigen::try_new(gram, f64::EPSILON, ITER_LIMIT)
        .ok_or(Error::EigFailed)?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(EigenSpectrum { values })
}

/// The factor update `X = Z_(n) · Yᵀ` (plain product, no pseudo-inverse).
pub fn solve_xstep(z_unfold: &Matrix, y: &Matrix) -> Result<Matrix> {
    if z_unfold.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "x-step: Z has {} columns, Y has {}",
            z_unfold.ncols(),
            y.ncols()
        )));
    }
    Ok(z_unfold * y.transpose())
}

/// The minimal-norm least-squares solution of `min_Y ‖XY − Z_(n)‖_F`,
/// computed through the compact SVD of `X`.
pub fn solve_ystep(x: &Matrix, z_unfold: &Matrix) -> Result<Matrix> {
    solve_ystep_tol(x, z_unfold, DEFAULT_RANK_COEFF)
}

/// [`solve_ystep`] with an explicit rank-cutoff coefficient.
pub fn solve_ystep_tol(x: &Matrix, z_unfold: &Matrix, coeff: f64) -> Result<Matrix> {
    if x.nrows() != z_unfold.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "y-step: X has {} rows, Z has {}",
            x.nrows(),
            z_unfold.nrows()
        )));
    }
    let svd = compact_svd(x, numerical_rank_tol(x.nrows(), x.ncols(), coeff))?;
    let mut ut_z = svd.u.tr_mul(z_unfold);
    for (i, &s) in svd.s.iter().enumerate() {
        let mut row = ut_z.row_mut(i);
        row /= s;
    }
    Ok(svd.vt.tr_mul(&ut_z))
}

/// Moore-Penrose pseudo-inverse via the compact SVD.
pub fn pseudo_inverse(a: &Matrix, tol: f64) -> Result<Matrix> {
    let svd = compact_svd(a, tol)?;
    let mut ut = svd.u.transpose();
    for (i, &s) in svd.s.iter().enumerate() {
        let mut row = ut.row_mut(i);
        row /= s;
    }
    Ok(svd.vt.tr_mul(&ut))
}

/// Orthonormalizes the rows of `y` (economy QR of `yᵀ`) and appends `extra`
/// fresh orthonormal rows drawn from standard-normal directions. The row
/// space of `y` is contained in the row space of the result.
pub fn orthonormalize_rows_augmented<R: Rng>(
    y: &Matrix,
    extra: usize,
    rng: &mut R,
) -> Result<Matrix> {
    let (r, cols) = (y.nrows(), y.ncols());
    if cols < r + extra {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {} orthonormal rows in {cols} columns",
            r + extra
        )));
    }
    let q = QR::new(y.transpose()).q();
    if extra == 0 {
        return Ok(q.transpose());
    }
    let mut aug = Matrix::zeros(cols, r + extra);
    aug.view_mut((0, 0), (cols, r)).copy_from(&q);
    for j in r..r + extra {
        for i in 0..cols {
            aug[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let q2 = QR::new(aug).q();
    Ok(q2.transpose())
}
