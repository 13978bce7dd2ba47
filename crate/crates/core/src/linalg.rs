//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::poly::C64;

/// Orthonormal basis (as columns) of `{v : v^T m = 0}`.
///
/// Singular values at or below `rel_tol * sigma_max` count as zero.
pub fn left_null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    if rows == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.ncols() == 0 {
        return DMatrix::identity(rows, rows);
    }
    // Pad to at least square so the thin SVD returns a full U.
    let padded = if m.ncols() < rows {
        let mut p = DMatrix::zeros(rows, rows);
        p.view_mut((0, 0), m.shape()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(true, false);
    let u = svd.u.expect("U requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = rel_tol * smax;
    let keep: Vec<usize> = (0..rows).filter(|&i| smax == 0.0 || sv[i] <= tol).collect();
    u.select_columns(&keep)
}

/// Numerical rank of a complex matrix with threshold `rel_tol * sigma_max`.
pub fn complex_rank(m: &DMatrix<C64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

/// `v^T m v` for symmetric `m`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// Eigen-split of a PSD matrix: columns spanning the numerically nonzero
/// eigenspace scaled by `sqrt(lambda)`, and an orthonormal basis of the rest.
pub struct PsdSplit {
    /// `factor * factor^T` reproduces the matrix on its range.
    pub factor: DMatrix<f64>,
    pub null_basis: DMatrix<f64>,
    pub lambda_max: f64,
}

pub fn psd_split(m: &DMatrix<f64>, rel_tol: f64, abs_floor: f64) -> PsdSplit {
    let n = m.nrows();
    if n == 0 {
        return PsdSplit {
            factor: DMatrix::zeros(0, 0),
            null_basis: DMatrix::zeros(0, 0),
            lambda_max: 0.0,
        };
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = (rel_tol * lambda_max).max(abs_floor);
    let mut range = Vec::new();
    let mut null = Vec::new();
    for i in 0..n {
        if eig.eigenvalues[i] > tol && lambda_max > 0.0 {
            range.push(i);
        } else {
            null.push(i);
        }
    }
    let mut factor = eig.eigenvectors.select_columns(&range);
    for (c, &i) in range.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        factor.column_mut(c).scale_mut(s);
    }
    PsdSplit {
        factor,
        null_basis: eig.eigenvectors.select_columns(&null),
        lambda_max,
    }
}
