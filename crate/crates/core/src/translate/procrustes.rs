use crate::error::{Error, Result};
use crate::numerics::linalg::svd;
use crate::numerics::Tensor;

/// Ratio of smallest to largest singular value of `XᵀY` below which the
/// optimal rotation is reported as non-unique.
const RANK_DEFICIENCY_RATIO: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ProcrustesFit {
    /// Orthogonal `k×k` map minimizing `‖XW − Y‖_F`.
    pub w: Tensor,
    /// `XᵀY` was rank-deficient, so `w` is one of several minimizers.
    pub rank_deficient: bool,
}

/// Closed-form orthogonal alignment: `W = UVᵀ` from the SVD `XᵀY = UΣVᵀ`.
pub fn procrustes_oracle(x: &Tensor, y: &Tensor) -> Result<ProcrustesFit> {
    if x.shape() != y.shape() || x.shape().len() != 2 {
        return Err(Error::dim("procrustes_oracle", x.shape(), y.shape()));
    }
    if x.rows() < x.cols() {
        return Err(Error::Contract(format!(
            "procrustes needs n >= k, got n={} k={}",
            x.rows(),
            x.cols()
        )));
    }
    let m = x.transpose().matmul(y)?;
    let s = svd(&m)?;
    let top = s.singular_values.iter().cloned().fold(0.0, f64::max);
    let low = s.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank_deficient = top == 0.0 || low < RANK_DEFICIENCY_RATIO * top;
    Ok(ProcrustesFit {
        w: s.u.matmul(&s.v_t)?,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::{gaussian_matrix, random_orthonormal};
    use crate::numerics::rng;

    #[test]
    fn identity_when_targets_equal_sources() {
        let x = gaussian_matrix(50, 5, 1.0, &mut rng(0));
        let fit = procrustes_oracle(&x, &x).unwrap();
        assert!(fit.w.max_abs_diff(&Tensor::identity(5)) < 1e-10);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn recovers_random_rotation() {
        let mut r = rng(1);
        let x = gaussian_matrix(200, 8, 1.0, &mut r);
        let rot = random_orthonormal(8, 8, &mut r).unwrap();
        let y = x.matmul(&rot).unwrap();
        let fit = procrustes_oracle(&x, &y).unwrap();
        let diff = fit.w.zip_map(&rot, |a, b| a - b).unwrap();
        assert!(diff.frobenius_sq().sqrt() < 1e-8);
        let gram = fit.w.transpose().matmul(&fit.w).unwrap();
        assert!(gram.max_abs_diff(&Tensor::identity(8)) < 1e-10);
    }

    #[test]
    fn negation_gives_minus_identity() {
        let x = gaussian_matrix(40, 4, 1.0, &mut rng(2));
        let fit = procrustes_oracle(&x, &x.scale(-1.0)).unwrap();
        assert!(fit.w.max_abs_diff(&Tensor::identity(4).scale(-1.0)) < 1e-10);
    }

    #[test]
    fn flags_rank_deficiency() {
        let x = Tensor::zeros(&[10, 3]);
        let fit = procrustes_oracle(&x, &x).unwrap();
        assert!(fit.rank_deficient);
    }
}
