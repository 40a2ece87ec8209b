//! Small dense symmetric linear-algebra layer.
//!
//! Everything here operates on `nalgebra::DMatrix<f64>` and is restricted to
//! what the control and certificate layers actually need: Kronecker products,
//! definiteness tests backed by symmetric eigensolves, the symmetric matrix
//! square root, and the block negative-definiteness equivalences used when
//! folding a quadratic feasibility condition into block form.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Absolute floor of the symmetry check; scaled by the largest entry magnitude.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default positive-definiteness tolerance, relative to the largest diagonal entry.
pub const DEFAULT_PD_TOL_SCALE: f64 = 1e-10;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Largest entry magnitude, zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetry within `tol` on every entry pair.
pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

fn require_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let tol = SYMMETRY_TOL * max_abs(m).max(1.0);
    if !is_symmetric(m, tol) {
        return Err(Error::NotSymmetric(format!(
            "{what} has |a_ij - a_ji| above {tol:.3e}"
        )));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues_sorted(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    require_square_symmetric(m, "eigenvalue input")?;
    let mut eigs: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite eigenvalue"));
    Ok(eigs)
}

/// Default tolerance for [`is_positive_definite`], scaled to the diagonal.
pub fn default_pd_tol(m: &DMatrix<f64>) -> f64 {
    let max_diag = m.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    DEFAULT_PD_TOL_SCALE * max_diag.max(1.0)
}

/// True iff the smallest eigenvalue of the symmetric matrix `s` exceeds `tol`.
pub fn is_positive_definite(s: &DMatrix<f64>, tol: f64) -> Result<bool> {
    require_square_symmetric(s, "definiteness input")?;
    let eigs = symmetric_eigenvalues_sorted(s)?;
    Ok(eigs.first().map(|&l| l > tol).unwrap_or(false))
}

/// [`is_positive_definite`] with the diagonal-scaled default tolerance.
pub fn is_positive_definite_default(s: &DMatrix<f64>) -> Result<bool> {
    is_positive_definite(s, default_pd_tol(s))
}

/// Symmetric square root `R` of a symmetric positive definite `s`,
/// with `R R = s` and `R = Rᵀ`.
pub fn sym_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square_symmetric(s, "square-root input")?;
    let eig = SymmetricEigen::new(s.clone());
    let tol = default_pd_tol(s);
    if let Some((idx, &l)) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("non-finite eigenvalue"))
    {
        if l <= tol {
            return Err(Error::NotPositiveDefinite(format!(
                "square-root input has eigenvalue {l:.6e} at index {idx} (tol {tol:.3e})"
            )));
        }
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.sqrt());
    let q = &eig.eigenvectors;
    let mut r = q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose();
    // enforce exact symmetry against roundoff in the triple product
    for i in 0..r.nrows() {
        for j in (i + 1)..r.ncols() {
            let avg = 0.5 * (r[(i, j)] + r[(j, i)]);
            r[(i, j)] = avg;
            r[(j, i)] = avg;
        }
    }
    Ok(r)
}

/// Truth values of the three equivalent block statements for
/// `K = [[k11, k12], [k12ᵀ, k22]] < 0`.
///
/// `tol > 0` tests the strict inequality with margin `tol`; `tol = 0` tests
/// the non-strict form. When a diagonal block is singular the corresponding
/// complement statement evaluates false and the flag records why.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchurEquivalence {
    /// (i) the assembled matrix is negative definite
    pub whole: bool,
    /// (ii) `k11 < 0` and `k22 − k12ᵀ k11⁻¹ k12 < 0`
    pub via_k11: bool,
    /// (iii) `k22 < 0` and `k11 − k12 k22⁻¹ k12ᵀ < 0`
    pub via_k22: bool,
    pub k11_invertible: bool,
    pub k22_invertible: bool,
}

impl SchurEquivalence {
    pub fn consistent(&self) -> bool {
        self.whole == self.via_k11 && self.whole == self.via_k22
    }
}

fn is_negative_definite(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let eigs = symmetric_eigenvalues_sorted(m)?;
    Ok(eigs.last().map(|&l| l <= -tol && l < 0.0).unwrap_or(false))
}

/// Evaluate the three block statements independently. See [`SchurEquivalence`].
pub fn schur_negdef_equivalent(
    k11: &DMatrix<f64>,
    k12: &DMatrix<f64>,
    k22: &DMatrix<f64>,
    tol: f64,
) -> Result<SchurEquivalence> {
    require_square_symmetric(k11, "k11")?;
    require_square_symmetric(k22, "k22")?;
    if k12.nrows() != k11.nrows() || k12.ncols() != k22.ncols() {
        return Err(Error::Dimension(format!(
            "k12 must be {}x{}, got {}x{}",
            k11.nrows(),
            k22.ncols(),
            k12.nrows(),
            k12.ncols()
        )));
    }

    let p = k11.nrows();
    let q = k22.nrows();
    let mut whole_mat = DMatrix::<f64>::zeros(p + q, p + q);
    whole_mat.view_mut((0, 0), (p, p)).copy_from(k11);
    whole_mat.view_mut((0, p), (p, q)).copy_from(k12);
    whole_mat
        .view_mut((p, 0), (q, p))
        .copy_from(&k12.transpose());
    whole_mat.view_mut((p, p), (q, q)).copy_from(k22);

    let whole = is_negative_definite(&whole_mat, tol)?;

    let k11_inv = k11.clone().lu().try_inverse();
    let via_k11 = match &k11_inv {
        Some(inv) => {
            let complement = k22 - k12.transpose() * inv * k12;
            is_negative_definite(k11, tol)? && is_negative_definite(&symmetrize(complement), tol)?
        }
        None => false,
    };

    let k22_inv = k22.clone().lu().try_inverse();
    let via_k22 = match &k22_inv {
        Some(inv) => {
            let complement = k11 - k12 * inv * k12.transpose();
            is_negative_definite(k22, tol)? && is_negative_definite(&symmetrize(complement), tol)?
        }
        None => false,
    };

    Ok(SchurEquivalence {
        whole,
        via_k11,
        via_k22,
        k11_invertible: k11_inv.is_some(),
        k22_invertible: k22_inv.is_some(),
    })
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Frobenius norm of `a b − b a`, used to check that square roots commute
/// with their argument.
pub fn commutator_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a * b - b * a).norm()
}
