//! Dense linear-algebra helpers. Every inverse goes through a decomposition
//! with an explicit conditioning check.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for pseudoinverses.
pub const PINV_RCOND: f64 = 1e-12;

/// Relative eigenvalue cutoff below which a symmetric matrix is treated as
/// rank deficient.
pub const EIG_RCOND: f64 = 1e-12;

/// Minimum-norm least-squares solution of `m * x = v`.
///
/// Returns the solution and whether any singular value was cut.
pub fn pinv_solve(m: &DMatrix<f64>, v: &DVector<f64>) -> (DVector<f64>, bool) {
    let k = m.ncols();
    if k == 0 {
        return (DVector::zeros(0), false);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_RCOND * smax;
    let mut deficient = svd.singular_values.len() < k;
    let mut x = DVector::zeros(k);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            deficient = true;
            continue;
        }
        let coef = u.column(j).dot(v) / s;
        x.axpy(coef, &vt.row(j).transpose(), 1.0);
    }
    (x, deficient)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

/// Inverse of a symmetric positive-definite matrix via its eigendecomposition.
pub fn spd_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let largest = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let smallest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(largest > 0.0) || !(smallest > EIG_RCOND * largest) || !smallest.is_finite() {
        return Err(Error::RankDeficient {
            context: context.to_string(),
            eigenvalue: smallest,
            largest,
        });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&inv_diag) * v.transpose())))
}

/// Inverse of a covariance matrix, retrying once with a ridge
/// `1e-10 * trace / m` on the diagonal. The flag reports whether the ridge
/// was applied.
pub fn covariance_inverse(omega: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    match spd_inverse(omega, "covariance") {
        Ok(inv) => Ok((inv, false)),
        Err(_) => {
            let m = omega.nrows();
            let eps = ridge_epsilon(omega.trace(), m);
            let ridged = omega + DMatrix::identity(m, m) * eps;
            spd_inverse(&ridged, "covariance after ridge")
                .map(|inv| (inv, true))
                .map_err(|e| Error::Singular(e.to_string()))
        }
    }
}

pub fn ridge_epsilon(trace: f64, m: usize) -> f64 {
    1e-10 * trace / m.max(1) as f64
}

/// Factor `L` with `L L' = a`, clipping negative eigenvalues at zero.
pub fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Small dense SPD kernels on row-major slices, used in the inner loops of
/// the weak-identification optimizers where `m` is tiny.
pub mod small {
    /// Largest moment dimension handled on the stack.
    pub const MAX_DIM: usize = 16;

    /// In-place Cholesky of the row-major `m x m` matrix; lower triangle
    /// receives `L`. Fails when a pivot falls below `rel * max diag`.
    pub fn cholesky(a: &mut [f64], m: usize, rel: f64) -> bool {
        let mut scale = 0.0f64;
        for i in 0..m {
            scale = scale.max(a[i * m + i].abs());
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return false;
        }
        for j in 0..m {
            let mut d = a[j * m + j];
            for k in 0..j {
                d -= a[j * m + k] * a[j * m + k];
            }
            if !(d > rel * scale) {
                return false;
            }
            let d = d.sqrt();
            a[j * m + j] = d;
            for i in (j + 1)..m {
                let mut s = a[i * m + j];
                for k in 0..j {
                    s -= a[i * m + k] * a[j * m + k];
                }
                a[i * m + j] = s / d;
            }
        }
        true
    }

    /// `g' L^{-T} L^{-1} g` given the Cholesky factor in the lower triangle.
    pub fn chol_quad_form(l: &[f64], m: usize, g: &[f64]) -> f64 {
        let mut y = [0.0f64; MAX_DIM];
        let mut acc = 0.0;
        for i in 0..m {
            let mut s = g[i];
            for k in 0..i {
                s -= l[i * m + k] * y[k];
            }
            y[i] = s / l[i * m + i];
            acc += y[i] * y[i];
        }
        acc
    }

    /// `g' a^{-1} g` with the ridge fallback. Returns the value and whether
    /// the ridge was needed, or `None` when the matrix stays singular.
    pub fn quad_form_inv(a: &[f64], m: usize, g: &[f64]) -> Option<(f64, bool)> {
        debug_assert!(m <= MAX_DIM);
        let mut work = [0.0f64; MAX_DIM * MAX_DIM];
        work[..m * m].copy_from_slice(&a[..m * m]);
        if cholesky(&mut work[..m * m], m, super::EIG_RCOND) {
            return Some((chol_quad_form(&work[..m * m], m, g), false));
        }
        let trace: f64 = (0..m).map(|i| a[i * m + i]).sum();
        let eps = super::ridge_epsilon(trace, m);
        work[..m * m].copy_from_slice(&a[..m * m]);
        for i in 0..m {
            work[i * m + i] += eps;
        }
        if cholesky(&mut work[..m * m], m, 1e-14) {
            Some((chol_quad_form(&work[..m * m], m, g), true))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_minimum_norm_on_duplicate_columns() {
        // Two identical columns: minimum-norm solution splits the weight.
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let v = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let (x, deficient) = pinv_solve(&m, &v);
        assert!(deficient);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse(&a, "t"),
            Err(Error::RankDeficient { .. })
        ));
        let (inv, ridged) = covariance_inverse(&a).unwrap();
        assert!(ridged);
        assert!(inv.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn small_quad_form_matches_dense() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let g = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let dense = (g.transpose() * spd_inverse(&a, "t").unwrap() * &g)[0];
        let flat: Vec<f64> = (0..9).map(|k| a[(k / 3, k % 3)]).collect();
        let (fast, ridged) = small::quad_form_inv(&flat, 3, g.as_slice()).unwrap();
        assert!(!ridged);
        assert!((dense - fast).abs() < 1e-12);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let l = psd_factor(&a);
        assert!((&l * l.transpose() - a).amax() < 1e-12);
    }
}
