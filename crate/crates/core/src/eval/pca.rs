//! 2-D PCA export: mean-centered projection onto the top two principal
//! components, via a Jacobi eigensolver on the covariance matrix.

use crate::error::{HecoError, Result};
use crate::tensor::Matrix;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unordered.
fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eig = (0..n).map(|i| m.get(i, i)).collect();
    (eig, v)
}

/// Project onto the top-2 principal components (mean-centered). Rank-1 or 1-D
/// inputs get a zero second coordinate. Component signs are fixed so the
/// entry of largest magnitude is positive.
pub fn project_2d(embeddings: &Matrix) -> Result<Matrix> {
    let n = embeddings.rows();
    if n < 2 {
        return Err(HecoError::Contract("project_2d needs at least 2 rows".into()));
    }
    let d = embeddings.cols();
    let mut centered = embeddings.clone();
    for c in 0..d {
        let mean = (0..n).map(|r| embeddings.get(r, c)).sum::<f64>() / n as f64;
        for r in 0..n {
            centered.set(r, c, centered.get(r, c) - mean);
        }
    }
    if d == 1 {
        let mut out = Matrix::zeros(n, 2);
        for r in 0..n {
            out.set(r, 0, centered.get(r, 0));
        }
        return Ok(out);
    }
    let cov = centered.transpose().matmul(&centered)?.scale(1.0 / (n as f64 - 1.0));
    let (eig, vecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig[b].partial_cmp(&eig[a]).unwrap());
    let mut proj = Matrix::zeros(d, 2);
    for (col, &src) in order.iter().take(2).enumerate() {
        let mut comp: Vec<f64> = (0..d).map(|r| vecs.get(r, src)).collect();
        let dominant = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if comp[dominant] < 0.0 {
            for x in comp.iter_mut() {
                *x = -*x;
            }
        }
        for r in 0..d {
            proj.set(r, col, comp[r]);
        }
    }
    centered.matmul(&proj)
}
