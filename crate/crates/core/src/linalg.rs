//! Small dense linear algebra helpers.
//!
//! All covariance-style matrices in this crate are `S x S` with `S` tiny, so
//! the guarded solves below use a symmetric eigendecomposition for the
//! conditioning check and LU with partial pivoting for the solve itself.
//! Singular values of the exponentially wide belief/outcome matrices are
//! always obtained from their `S x S` Gram matrices, never from the wide
//! matrix directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tol::COND_LIMIT;

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eigs: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    eigs
}

/// Smallest/largest eigenvalue pair of a symmetric matrix.
pub fn eig_extrema(m: &DMatrix<f64>) -> (f64, f64) {
    let eigs = symmetric_eigenvalues(m);
    (eigs[0], eigs[eigs.len() - 1])
}

/// Eigenvector of the smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvector(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let decomp = m.clone().symmetric_eigen();
    let mut best = 0;
    for i in 1..decomp.eigenvalues.len() {
        if decomp.eigenvalues[i] < decomp.eigenvalues[best] {
            best = i;
        }
    }
    (decomp.eigenvalues[best], decomp.eigenvectors.column(best).into_owned())
}

/// Numerical rank of a PSD Gram matrix: eigenvalues above `tol * max(eig, 1)`.
pub fn gram_rank(gram: &DMatrix<f64>, tol: f64) -> usize {
    let eigs = symmetric_eigenvalues(gram);
    let scale = eigs.last().copied().unwrap_or(0.0).max(1.0);
    eigs.iter().filter(|&&e| e > tol * scale).count()
}

/// Solve `m x = rhs` for symmetric positive-definite `m`, guarding the
/// condition number. `name`/`step` only label the error.
pub fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>, name: &str, step: usize) -> Result<DVector<f64>> {
    let (min_eig, max_eig) = eig_extrema(m);
    if min_eig <= 0.0 || max_eig / min_eig > COND_LIMIT {
        return Err(Error::IllConditioned {
            matrix: name.to_string(),
            step,
            sigma_min: min_eig,
        });
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::IllConditioned {
            matrix: name.to_string(),
            step,
            sigma_min: min_eig,
        })
}

/// `rhs^T m^{-1} rhs` for symmetric positive-definite `m`.
pub fn quadratic_form_inv(m: &DMatrix<f64>, rhs: &DVector<f64>, name: &str, step: usize) -> Result<f64> {
    let x = solve_spd(m, rhs, name, step)?;
    Ok(rhs.dot(&x))
}

/// Relative eigenvalue cutoff separating the numerical range of a PSD matrix
/// from its null space.
pub const RANGE_CUTOFF: f64 = 1e-12;

/// Minimum-norm solution of `m x = rhs` for symmetric PSD `m` that may be
/// rank-deficient (belief covariances are, at early steps, whenever several
/// latent states share one belief). Eigendirections below the relative cutoff
/// are treated as null; `rhs` must lie in the numerical range, otherwise the
/// system is genuinely unsolvable and a conditioning error is returned.
pub fn pseudo_solve_psd(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    name: &str,
    step: usize,
) -> Result<DVector<f64>> {
    let decomp = m.clone().symmetric_eigen();
    let max_eig = decomp.eigenvalues.iter().copied().fold(0.0, f64::max);
    let cutoff = RANGE_CUTOFF * max_eig.max(f64::MIN_POSITIVE);
    let mut x = DVector::zeros(rhs.len());
    let mut kept_min = f64::INFINITY;
    for (i, &eig) in decomp.eigenvalues.iter().enumerate() {
        if eig <= cutoff {
            continue;
        }
        kept_min = kept_min.min(eig);
        let v = decomp.eigenvectors.column(i);
        x += v * (v.dot(rhs) / eig);
    }
    let residual = (m * &x - rhs).amax();
    let scale = rhs.amax().max(1.0);
    if residual > 1e-8 * scale {
        return Err(Error::IllConditioned {
            matrix: name.to_string(),
            step,
            sigma_min: if kept_min.is_finite() { kept_min } else { 0.0 },
        });
    }
    Ok(x)
}

/// `rhs^T m^+ rhs` via the range-restricted solve above.
pub fn pseudo_quadratic_form(m: &DMatrix<f64>, rhs: &DVector<f64>, name: &str, step: usize) -> Result<f64> {
    let x = pseudo_solve_psd(m, rhs, name, step)?;
    Ok(rhs.dot(&x))
}

/// True when the full matrix is numerically invertible (no eigendirection
/// below the relative cutoff).
pub fn numerically_invertible(m: &DMatrix<f64>) -> bool {
    let (min_eig, max_eig) = eig_extrema(m);
    min_eig > RANGE_CUTOFF * max_eig.max(f64::MIN_POSITIVE) && max_eig / min_eig <= COND_LIMIT
}
