//! Multivariate normal helpers that tolerate singular (PSD) covariances.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::functions::Rows;

pub(crate) const PSD_TOL: f64 = 1e-10;

pub fn to_matrix(rows: &Rows) -> DMatrix<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nr, nc, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Checks symmetry and positive semi-definiteness.
pub fn check_psd(cov: &DMatrix<f64>, name: &str) -> Result<()> {
    if !cov.is_square() || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPsdCovariance(name.to_string()));
    }
    let asym = (cov - cov.transpose()).abs().max();
    if asym > 1e-12 * cov.abs().max().max(1.0) {
        return Err(Error::NonPsdCovariance(name.to_string()));
    }
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.min() < -PSD_TOL * cov.abs().max().max(1.0) {
        return Err(Error::NonPsdCovariance(name.to_string()));
    }
    Ok(())
}

/// Symmetric square root `L` with `L L^T = cov`, eigenvalues clipped at 0.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// A (possibly degenerate) Gaussian with cached factors.
#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    sqrt: Vec<f64>,
    precision: Option<DMatrix<f64>>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Self {
        let d = mean.len();
        let s = psd_sqrt(&cov);
        let sqrt = (0..d * d).map(|k| s[(k / d, k % d)]).collect();
        let chol = nalgebra::Cholesky::new(cov.clone());
        let (precision, log_norm) = match chol {
            Some(c) => {
                let logdet: f64 = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let lp = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet);
                (Some(c.inverse()), lp)
            }
            None => (None, f64::NAN),
        };
        Self { mean, cov, sqrt, precision, log_norm }
    }

    pub fn scalar(mean: f64, var: f64) -> Self {
        Self::new(vec![mean], DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn has_density(&self) -> bool {
        self.precision.is_some()
    }

    /// Log density; `None` for singular covariances.
    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        let p = self.precision.as_ref()?;
        let d = self.dim();
        if d == 1 {
            let r = x[0] - self.mean[0];
            return Some(self.log_norm - 0.5 * r * r * p[(0, 0)]);
        }
        let r = DVector::from_iterator(d, x.iter().zip(&self.mean).map(|(a, b)| a - b));
        Some(self.log_norm - 0.5 * (r.transpose() * p * &r)[(0, 0)])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        if d == 1 {
            let z: f64 = rng.sample(StandardNormal);
            out[0] = self.mean[0] + self.sqrt[0] * z;
            return;
        }
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            out[i] = self.mean[i] + (0..d).map(|j| self.sqrt[i * d + j] * z[j]).sum::<f64>();
        }
    }

    /// Sample with an externally supplied mean (conditional Gaussians share
    /// the covariance factor).
    pub fn sample_shifted<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        if d == 1 {
            let z: f64 = rng.sample(StandardNormal);
            out[0] = mean[0] + self.sqrt[0] * z;
            return;
        }
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            out[i] = mean[i] + (0..d).map(|j| self.sqrt[i * d + j] * z[j]).sum::<f64>();
        }
    }

    /// Tensor Gauss–Hermite nodes `(point, weight)` of this law.
    pub fn quadrature(&self, gh: &crate::quadrature::GaussHermite) -> Vec<(Vec<f64>, f64)> {
        self.quadrature_at(&self.mean, gh)
    }

    pub fn quadrature_at(
        &self,
        mean: &[f64],
        gh: &crate::quadrature::GaussHermite,
    ) -> Vec<(Vec<f64>, f64)> {
        let d = self.dim();
        let q = gh.order();
        let total = q.pow(d as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let z: Vec<f64> = idx.iter().map(|&k| gh.nodes[k]).collect();
            let w: f64 = idx.iter().map(|&k| gh.weights[k]).product();
            let p = (0..d)
                .map(|i| mean[i] + (0..d).map(|j| self.sqrt[i * d + j] * z[j]).sum::<f64>())
                .collect();
            out.push((p, w));
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < q {
                    break;
                }
                *slot = 0;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_density_matches_formula() {
        let g = Gaussian::scalar(0.5, 0.04);
        let x = 0.7;
        let want = -0.5 * (2.0 * std::f64::consts::PI * 0.04).ln() - 0.5 * 0.04 / 0.04;
        assert!((g.log_density(&[x]).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn singular_covariance_has_no_density_but_samples() {
        let g = Gaussian::scalar(1.0, 0.0);
        assert!(g.log_density(&[1.0]).is_none());
        let mut out = [0.0];
        let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        g.sample(&mut r, &mut out);
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn psd_check_rejects_negative_variance() {
        assert!(check_psd(&DMatrix::from_element(1, 1, -0.01), "R").is_err());
        assert!(check_psd(&DMatrix::from_element(1, 1, 0.0), "Q").is_ok());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(check_psd(&asym, "C").is_err());
    }

    #[test]
    fn bivariate_density_and_sqrt() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let s = psd_sqrt(&cov);
        assert!((&s * s.transpose() - &cov).abs().max() < 1e-14);
        let g = Gaussian::new(vec![0.0, 0.0], cov);
        let ld = g.log_density(&[0.0, 0.0]).unwrap();
        let want = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 0.75f64.ln();
        assert!((ld - want).abs() < 1e-14);
    }
}
