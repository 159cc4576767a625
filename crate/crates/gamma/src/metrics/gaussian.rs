//! Gaussian statistics of an embedded image set.

use crate::GammaError;

/// Mean vector and covariance matrix of a set of embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// d x d row-major, exactly symmetric.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and 1/(n-1)-normalized covariance. The upper triangle is
/// computed once and mirrored, so the result is symmetric by construction.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats, GammaError> {
    if features.len() < 2 {
        return Err(GammaError::Contract(format!(
            "fit_gaussian needs at least 2 vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(GammaError::Contract(format!(
            "fit_gaussian: mixed dimensions {d} vs {}",
            bad.len()
        )));
    }
    let n = features.len();
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, &x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for f in features {
        for i in 0..d {
            let di = f[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (f[j] - mean[j]);
            }
        }
    }
    let norm = 1.0 / (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] *= norm;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    Ok(GaussianStats { mean, cov, count: n })
}
