//! Fréchet distance between two fitted Gaussians:
//! ||mu_x - mu_g||^2 + Tr(S_x + S_g - 2 (S_x S_g)^(1/2)).
//!
//! The cross term is evaluated as sqrt(S_x^(1/2) S_g S_x^(1/2)), equal in
//! trace to (S_x S_g)^(1/2) but symmetric, which keeps the eigensolver on
//! well-conditioned input and makes the distance symmetric in its
//! arguments.

use gamma_core::linalg;

use super::gaussian::GaussianStats;
use super::sqrtm::matrix_sqrt;
use crate::GammaError;

pub fn fid(x: &GaussianStats, g: &GaussianStats) -> Result<f64, GammaError> {
    let d = x.dim();
    if g.dim() != d {
        return Err(GammaError::Contract(format!(
            "fid: dimension mismatch {d} vs {}",
            g.dim()
        )));
    }
    let mean_term: f64 = x.mean.iter().zip(&g.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let sx_root = matrix_sqrt(&x.cov, d)?;
    let inner = linalg::matmul(&sx_root, &g.cov, d, d, d);
    let prod = linalg::matmul(&inner, &sx_root, d, d, d);
    let cross = matrix_sqrt(&prod, d)?;
    let mut trace = 0.0;
    for i in 0..d {
        trace += x.cov[i * d + i] + g.cov[i * d + i] - 2.0 * cross[i * d + i];
    }
    Ok((mean_term + trace).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fit_gaussian;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        let count = 2;
        GaussianStats { mean, cov, count }
    }

    #[test]
    fn self_distance_is_zero() {
        let s = stats(vec![0.3, -1.0], vec![1.5, 0.2, 0.2, 0.7]);
        assert!(fid(&s, &s).unwrap() < 1e-8);
    }

    #[test]
    fn unit_mean_shift_equal_covariance() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let b = stats(vec![1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn commuting_diagonal_case() {
        // equal means, S_x = 4I, S_g = I: Tr(4I + I - 2*2I) = Tr(I) = 2
        let a = stats(vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 4.0]);
        let b = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!((fid(&a, &b).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = gamma_core::Seed(8).rng();
        let fa: Vec<Vec<f64>> =
            (0..30).map(|_| (0..5).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        let fb: Vec<Vec<f64>> =
            (0..30).map(|_| (0..5).map(|_| rng.normal(0.5, 1.5)).collect()).collect();
        let a = fit_gaussian(&fa).unwrap();
        let b = fit_gaussian(&fb).unwrap();
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab > 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(fid(&a, &b).is_err());
    }
}
