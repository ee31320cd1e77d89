//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Every solve goes through a thin QR factorization with an explicit rank
//! check; nothing here forms an explicit inverse of a Gram matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Eigenvalues down to this (negative) value are clamped to zero by [`repair_psd`].
pub const PSD_TOL: f64 = 1e-8;

/// Thin QR factorization of a tall matrix with full column rank.
#[derive(Debug, Clone)]
pub struct FullRankQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl FullRankQr {
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        let (n, p) = a.shape();
        if n < p {
            return Err(Error::RankDeficient(format!(
                "{what}: {n} rows cannot support {p} columns"
            )));
        }
        let qr = a.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let sv = r.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min <= RANK_TOL * max {
            return Err(Error::RankDeficient(format!(
                "{what}: smallest singular value {min:e} vs largest {max:e}"
            )));
        }
        Ok(Self { q, r })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn ncols(&self) -> usize {
        self.r.ncols()
    }

    /// Least-squares solution of `A x ≈ b` for each column of `b`.
    pub fn least_squares(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let qtb = self.q.tr_mul(b);
        self.r
            .solve_upper_triangular(&qtb)
            .expect("R has a nonzero diagonal after the rank check")
    }

    pub fn least_squares_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let qtb = self.q.tr_mul(b);
        self.r
            .solve_upper_triangular(&qtb)
            .expect("R has a nonzero diagonal after the rank check")
    }

    /// Solves `(AᵀA) x = rhs` as `R⁻¹ R⁻ᵀ rhs`.
    pub fn gram_solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .r
            .tr_solve_upper_triangular(rhs)
            .expect("R has a nonzero diagonal after the rank check");
        self.r
            .solve_upper_triangular(&y)
            .expect("R has a nonzero diagonal after the rank check")
    }

    /// `(AᵀA)⁻¹Aᵀ`, computed as `R⁻¹Qᵀ`.
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        self.r
            .solve_upper_triangular(&self.q.transpose())
            .expect("R has a nonzero diagonal after the rank check")
    }

    /// Diagonal of the hat matrix `A(AᵀA)⁻¹Aᵀ`.
    pub fn leverages(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.q.nrows(),
            self.q.row_iter().map(|row| row.norm_squared()),
        )
    }

    /// `(I - A(AᵀA)⁻¹Aᵀ) b`.
    pub fn residualize(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        b - &self.q * self.q.tr_mul(b)
    }
}

/// Solves the square system `a x = b` through QR with the same rank tolerance.
pub fn solve_square(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{what}: matrix is not square")));
    }
    Ok(FullRankQr::new(a, what)?.least_squares(b))
}

pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.is_empty() {
        return DVector::zeros(0);
    }
    a.clone().singular_values()
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    if sv.is_empty() {
        0.0
    } else {
        sv.max()
    }
}

/// Numerical rank with threshold `RANK_TOL · σ_max`.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let sv = singular_values(a);
    if sv.is_empty() {
        return 0;
    }
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetrizes `a` and clamps eigenvalues in `(-PSD_TOL, 0)` to zero.
///
/// The matrix is only reassembled from its eigendecomposition when a clamp
/// actually happens, so already-PSD inputs pass through bit-for-bit (after
/// symmetrization).
pub fn repair_psd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(a);
    if sym.is_empty() {
        return Ok(sym);
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -PSD_TOL {
        return Err(Error::NotPsd(format!("{what}: eigenvalue {min:e}")));
    }
    Ok(clamped_reconstruction(eig))
}

/// Symmetrizes and projects onto the PSD cone, whatever the eigenvalues.
pub fn project_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(a);
    if sym.is_empty() {
        return sym;
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return sym;
    }
    clamped_reconstruction(eig)
}

fn clamped_reconstruction(eig: SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&vals) * v.transpose()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
