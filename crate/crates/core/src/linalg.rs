//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};


use crate::error::{Error, Result};

/// Exact symmetry plus a successful Cholesky factorisation.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && m.iter().all(|v| v.is_finite())
        && *m == m.transpose()
        && m.clone().cholesky().is_some()
}

pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = a * out;
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    *sym_eigenvalues(m).last().unwrap()
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eigenvalues(m)[0]
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Pivoted Cholesky factor `F` (n×n, trailing columns zero when rank
/// deficient) with `F Fᵀ = S` for symmetric positive semidefinite `S`.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let mut work = symmetrize(s);
    let scale = (0..n).map(|i| work[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::zeros(n, n);
    for k in 0..n {
        let (piv, &dmax) = (k..n)
            .map(|i| (i, &work[(perm[i], perm[i])]))
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if dmax <= tol {
            let min_diag = (k..n).map(|i| work[(perm[i], perm[i])]).fold(f64::INFINITY, f64::min);
            if min_diag < -1e-8 * scale.max(1.0) {
                return Err(Error::NotPsd {
                    min_eigenvalue: min_diag,
                    trace: s.trace(),
                });
            }
            break;
        }
        perm.swap(k, piv);
        let p = perm[k];
        let root = dmax.sqrt();
        l[(p, k)] = root;
        for &q in &perm[k + 1..] {
            l[(q, k)] = work[(q, p)] / root;
        }
        for i in k + 1..n {
            let qi = perm[i];
            for j in k + 1..n {
                let qj = perm[j];
                work[(qi, qj)] -= l[(qi, k)] * l[(qj, k)];
            }
        }
    }
    Ok(l)
}

/// Solves `Fᵀ P F - P = -I` for Schur-stable `F`.
pub fn discrete_lyapunov(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rho = spectral_radius(f);
    if rho >= 1.0 {
        return Err(Error::NotSchurStable {
            spectral_radius: rho,
        });
    }
    let n = f.nrows();
    let ft = f.transpose();
    // vec(Fᵀ P F) = (Fᵀ ⊗ Fᵀ) vec(P)
    let k = ft.kronecker(&ft);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - k;
    let rhs = nalgebra::DVector::from_iterator(
        n * n,
        DMatrix::<f64>::identity(n, n).iter().copied(),
    );
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotSchurStable {
            spectral_radius: rho,
        })?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Sum of absolute values of all entries.
pub fn entrywise_l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn lyapunov_residual_vanishes() {
        let f = dmatrix![0.5, 0.3; -0.2, 0.7];
        let p = discrete_lyapunov(&f).unwrap();
        let res = f.transpose() * &p * &f - &p + DMatrix::identity(2, 2);
        assert!(res.norm() < 1e-12);
        assert!(lambda_min(&p) >= 1.0 - 1e-12);
    }

    #[test]
    fn lyapunov_scalar_closed_form() {
        let p = discrete_lyapunov(&dmatrix![0.5]).unwrap();
        assert!((p[(0, 0)] - 1.0 / 0.75).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let err = discrete_lyapunov(&dmatrix![1.0, 1.0; 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotSchurStable { .. }));
    }

    #[test]
    fn psd_factor_reproduces_rank_deficient() {
        let v = dmatrix![1.0; 2.0; -1.0];
        let s = &v * v.transpose();
        let f = psd_factor(&s).unwrap();
        assert!((&f * f.transpose() - &s).norm() < 1e-12);
        assert!(psd_factor(&dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
    }

    #[test]
    fn spd_check_is_strict_about_symmetry() {
        assert!(is_spd(&dmatrix![2.0, 1.0; 1.0, 2.0]));
        assert!(!is_spd(&dmatrix![2.0, 1.0; 1.0 + 1e-15, 2.0]));
        assert!(!is_spd(&dmatrix![0.0]));
    }
}
