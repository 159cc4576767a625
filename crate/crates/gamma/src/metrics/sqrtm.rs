//! Symmetric eigendecomposition (cyclic Jacobi) and the PSD matrix square
//! root built on it.

use crate::GammaError;

/// Eigendecomposition of a symmetric matrix (row-major, n x n).
/// Returns (eigenvalues, eigenvectors) with eigenvector j stored in
/// column j of the returned matrix.
pub fn sym_eigen(m: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(m.len(), n * n);
    let mut a = m.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[p * n + q] * a[p * n + q];
            }
        }
        s
    };
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    for _sweep in 0..64 {
        if off(&a) <= 1e-28 * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // rotate rows/cols p and q of a
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    (eigenvalues, v)
}

fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// PSD square root: S with S*S ~= m. Input is symmetrized; eigenvalues
/// below -1e-6 * spectral scale are a numeric-domain error, tiny negative
/// ones are clamped to zero.
pub fn matrix_sqrt(m: &[f64], n: usize) -> Result<Vec<f64>, GammaError> {
    if m.len() != n * n {
        return Err(GammaError::Contract(format!(
            "matrix_sqrt: {} elements for n = {n}",
            m.len()
        )));
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
        }
    }
    let (eigs, vecs) = sym_eigen(&sym, n);
    let scale = eigs.iter().fold(0.0_f64, |acc, &e| acc.max(e.abs())).max(frobenius(&sym));
    if let Some(&bad) = eigs.iter().find(|&&e| e < -1e-6 * scale.max(1e-300)) {
        return Err(GammaError::Contract(format!(
            "matrix_sqrt: significantly non-PSD input (eigenvalue {bad:.3e}, scale {scale:.3e})"
        )));
    }
    // S = V diag(sqrt(max(eig, 0))) V^T
    let roots: Vec<f64> = eigs.iter().map(|&e| e.max(0.0).sqrt()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += vecs[i * n + k] * roots[k] * vecs[j * n + k];
            }
            out[i * n + j] = s;
        }
    }
    Ok(out)
}
