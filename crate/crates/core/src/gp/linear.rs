use faer::Mat;
use serde::{Deserialize, Serialize};

use super::{CvResult, Input};
use crate::error::{Error, Result};

/// Ordinary least squares on `(1, x1, x2, x3, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: [f64; 5],
    /// The design matrix was rank deficient and the minimum-norm solution
    /// was returned.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn fit(inputs: &[Input], targets: &[f64]) -> Result<Self> {
        let n = inputs.len();
        if n < super::MIN_FIT_SAMPLES {
            return Err(Error::InvalidParameter(format!("linear fit needs at least 5 samples, got {n}")));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch(format!("{n} inputs but {} targets", targets.len())));
        }
        let x = Mat::<f64>::from_fn(n, 5, |i, j| if j == 0 { 1.0 } else { inputs[i][j - 1] });
        let svd = x.thin_svd().map_err(|e| Error::InvalidParameter(format!("least-squares SVD failed: {e:?}")))?;
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        let smax = (0..5).map(|i| s[i]).fold(0.0f64, f64::max);
        let tol = smax * n.max(5) as f64 * f64::EPSILON;
        let mut coefficients = [0.0; 5];
        let mut rank_deficient = false;
        for k in 0..5 {
            if s[k] <= tol {
                rank_deficient = true;
                continue;
            }
            let uty: f64 = (0..n).map(|i| u[(i, k)] * targets[i]).sum::<f64>() / s[k];
            for (j, c) in coefficients.iter_mut().enumerate() {
                *c += v[(j, k)] * uty;
            }
        }
        Ok(Self { coefficients, rank_deficient })
    }

    pub fn predict(&self, x: &Input) -> f64 {
        let c = &self.coefficients;
        c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[2] + c[4] * x[3]
    }
}

/// Fits the linear baseline on all samples and scores it with the same
/// folds as [`super::cross_validate`].
pub fn linear_baseline(inputs: &[Input], targets: &[f64], k: usize, seed: u64) -> Result<(LinearModel, CvResult)> {
    let model = LinearModel::fit(inputs, targets)?;
    let cv = CvResult::run(inputs, targets, k, seed, super::MIN_FIT_SAMPLES, |xt, yt, xh| {
        let m = LinearModel::fit(xt, yt)?;
        Ok(xh.iter().map(|x| m.predict(x)).collect())
    })?;
    Ok((model, cv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(n: usize) -> Vec<Input> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn affine_targets_are_recovered() {
        let x = inputs(60);
        let y: Vec<f64> = x.iter().map(|p| 0.3 - p[0] + 2.0 * p[1] + 0.5 * p[2] - 0.25 * p[3]).collect();
        let (m, cv) = linear_baseline(&x, &y, 5, 1).unwrap();
        assert!(!m.rank_deficient);
        for (got, want) in m.coefficients.iter().zip([0.3, -1.0, 2.0, 0.5, -0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(cv.pooled_rmse < 1e-10);
    }

    #[test]
    fn constant_targets_fit_the_intercept() {
        let x = inputs(30);
        let m = LinearModel::fit(&x, &[1.5; 30]).unwrap();
        assert!((m.coefficients[0] - 1.5).abs() < 1e-12);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn rank_deficient_design_gives_minimum_norm() {
        // x3 ≡ 0 and t ≡ x1: two directions unidentifiable
        let x: Vec<Input> = inputs(20).into_iter().map(|p| [p[0], p[1], 0.0, p[0]]).collect();
        let y: Vec<f64> = x.iter().map(|p| 2.0 * p[0]).collect();
        let m = LinearModel::fit(&x, &y).unwrap();
        assert!(m.rank_deficient);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-10 && (m.coefficients[4] - 1.0).abs() < 1e-10);
        assert!(m.coefficients[3].abs() < 1e-12);
        for (p, t) in x.iter().zip(&y) {
            assert!((m.predict(p) - t).abs() < 1e-10);
        }
    }
}
