//! Dense factorizations backed by `nalgebra`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(r, c, data).expect("shape from nalgebra matrix")
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).expect("gaussian shape")
}

/// `rows×cols` matrix with orthonormal columns (`rows ≥ cols`), from the QR
/// factorization of a Gaussian matrix with signs fixed so `diag(R) > 0`.
pub fn random_orthonormal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Tensor> {
    if rows < cols {
        return Err(Error::dim("random_orthonormal", &[rows], &[cols]));
    }
    let g = to_dmatrix(&gaussian_matrix(rows, cols, 1.0, rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            for i in 0..rows {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(from_dmatrix(&q))
}

pub struct Svd {
    pub u: Tensor,
    pub singular_values: Vec<f64>,
    pub v_t: Tensor,
}

pub fn svd(t: &Tensor) -> Result<Svd> {
    let m = to_dmatrix(t);
    let svd = m
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Contract("SVD failed to converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Contract("SVD missing U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Contract("SVD missing Vᵀ".into()))?;
    Ok(Svd {
        u: from_dmatrix(&u),
        singular_values: svd.singular_values.iter().copied().collect(),
        v_t: from_dmatrix(&v_t),
    })
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted descending.
/// Returns `(values, vectors)` with eigenvectors as columns.
pub fn symmetric_eigen(t: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    if t.rows() != t.cols() {
        return Err(Error::dim("symmetric_eigen", t.shape(), &[t.rows(), t.rows()]));
    }
    let m = to_dmatrix(t);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = t.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs.set(row, col, eig.eigenvectors[(row, src)]);
        }
    }
    Ok((values, vecs))
}

/// Moore–Penrose pseudo-inverse.
pub fn pseudo_inverse(t: &Tensor) -> Result<Tensor> {
    let m = to_dmatrix(t);
    let p = m
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Contract(format!("pseudo-inverse failed: {e}")))?;
    Ok(from_dmatrix(&p))
}

/// Column means and unbiased covariance (`n − 1` denominator) of an `n×k`
/// matrix, accumulated in fixed row order.
pub fn mean_and_covariance(x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::CovarianceUndefined { rows: n });
    }
    let k = x.cols();
    let mean = x.col_mean().into_data();
    let mut cov = Tensor::zeros(&[k, k]);
    for i in 0..n {
        let row = x.row(i);
        for a in 0..k {
            let da = row[a] - mean[a];
            for b in 0..k {
                let v = cov.get(a, b) + da * (row[b] - mean[b]);
                cov.set(a, b, v);
            }
        }
    }
    Ok((mean, cov.scale(1.0 / (n - 1) as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthonormal(12, 5, &mut rng).unwrap();
        let gram = q.transpose().matmul(&q).unwrap();
        assert!(gram.max_abs_diff(&Tensor::identity(5)) < 1e-12);
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_matrix(6, 4, 1.0, &mut rng);
        let s = svd(&a).unwrap();
        let mut us = s.u.clone();
        for i in 0..us.rows() {
            for j in 0..us.cols() {
                us.set(i, j, us.get(i, j) * s.singular_values[j]);
            }
        }
        let back = us.matmul(&s.v_t).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        assert!((vecs.get(1, 0).abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn covariance_needs_two_rows() {
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(
            mean_and_covariance(&x),
            Err(Error::CovarianceUndefined { rows: 1 })
        ));
    }
}
