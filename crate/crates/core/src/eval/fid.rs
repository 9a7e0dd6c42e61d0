//! Fréchet distance between Gaussian fits of two embedded sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{HisdError, Result};

/// Eigenvalues below `−EIGEN_TOLERANCE · max(1, λ_max)` mean the matrix is
/// not positive semidefinite; anything between that and zero is clipped.
pub const EIGEN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FidStats {
    pub mean: DVector<f64>,
    /// Unbiased (n − 1) covariance.
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FidStats {
    /// Rows are samples. Requires at least `max(2, dim / 4)` rows and
    /// warns below `dim` rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(HisdError::Eval("no samples to fit".into()));
        }
        let minimum = (d / 4).max(2);
        if n < minimum {
            return Err(HisdError::Eval(format!("{n} samples is below the minimum of {minimum} for {d}-dimensional embeddings")));
        }
        if n < d {
            log::warn!("only {n} samples for {d}-dimensional embeddings; the covariance is rank deficient");
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(HisdError::Shape("embedding rows have different lengths".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] as f64);
        let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok(Self { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn clipped_eigenvalues(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let scale = eig.eigenvalues.iter().fold(1f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < -EIGEN_TOLERANCE * scale {
            return Err(HisdError::Eval(format!("matrix square root failed: eigenvalue {v:e} is negative beyond tolerance")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// Square root of a symmetric positive semidefinite matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clipped_eigenvalues(m)?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// `tr((Σ_a Σ_b)^{1/2})`, computed as `tr((A^{1/2} Σ_b A^{1/2})^{1/2})`
/// with `A = Σ_a` so that only symmetric eigenproblems are solved.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = sqrtm_psd(a)?;
    let inner = &ra * b * &ra;
    Ok(clipped_eigenvalues(&inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum())
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
pub fn fid(a: &FidStats, b: &FidStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(HisdError::Shape(format!("embedding dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let v = dm + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt_product(&a.cov, &b.cov)?;
    Ok(v.max(0.0))
}
