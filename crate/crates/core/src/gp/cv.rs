use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit, FitOptions, GpModel, Input, KernelKind, MIN_FIT_SAMPLES};
use crate::error::{Error, Result};
use crate::rollout::rms;

/// Fold index for every sample: a seeded shuffle cut into `k` near-equal
/// contiguous blocks.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || n < k {
        return Err(Error::InvalidParameter(format!("{k}-fold cross-validation needs 2 ≤ k ≤ n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos * k / n;
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub folds: Vec<usize>,
    pub fold_rmse: Vec<f64>,
    pub pooled_rmse: f64,
    /// Held-out prediction for every sample.
    pub predictions: Vec<f64>,
}

impl CvResult {
    pub(crate) fn run(
        inputs: &[Input],
        targets: &[f64],
        k: usize,
        seed: u64,
        min_train: usize,
        mut fit_predict: impl FnMut(&[Input], &[f64], &[Input]) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        let n = inputs.len();
        if targets.len() != n {
            return Err(Error::DimensionMismatch(format!("{n} inputs but {} targets", targets.len())));
        }
        let folds = fold_assignment(n, k, seed)?;
        let mut predictions = vec![0.0; n];
        let mut fold_rmse = Vec::with_capacity(k);
        for f in 0..k {
            let (mut xt, mut yt, mut xh, mut idx) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..n {
                if folds[i] == f {
                    xh.push(inputs[i]);
                    idx.push(i);
                } else {
                    xt.push(inputs[i]);
                    yt.push(targets[i]);
                }
            }
            if xt.len() < min_train {
                return Err(Error::InvalidParameter(format!(
                    "fold {f} leaves {} training samples, fewer than {min_train}",
                    xt.len()
                )));
            }
            let p = fit_predict(&xt, &yt, &xh)?;
            fold_rmse.push(rms(idx.iter().zip(&p).map(|(&i, v)| v - targets[i])));
            for (&i, v) in idx.iter().zip(p) {
                predictions[i] = v;
            }
        }
        let pooled_rmse = rms(predictions.iter().zip(targets).map(|(p, y)| p - y));
        Ok(Self { folds, fold_rmse, pooled_rmse, predictions })
    }
}

/// A model fitted on all samples with its cross-validation score.
#[derive(Clone, Debug)]
pub struct GpCv {
    pub model: GpModel,
    pub cv: CvResult,
}

/// k-fold cross-validated RMSE of a GP of the given kind.
///
/// The full-data fit runs the configured restarts; each fold refits from the
/// full-data optimum only.
pub fn cross_validate(
    inputs: &[Input],
    targets: &[f64],
    k: usize,
    kind: KernelKind,
    seed: u64,
    options: &FitOptions,
) -> Result<GpCv> {
    fold_assignment(inputs.len(), k, seed)?;
    let model = fit(inputs, targets, kind, options)?;
    let fold_options = FitOptions {
        restarts: 0,
        warm_start: Some(*model.hyperparameters()),
        ..options.clone()
    };
    let cv = CvResult::run(inputs, targets, k, seed, MIN_FIT_SAMPLES, |xt, yt, xh| {
        let m = fit(xt, yt, kind, &fold_options)?;
        Ok(xh.iter().map(|x| m.predict_mean(x)).collect())
    })?;
    Ok(GpCv { model, cv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn folds_partition_the_samples() {
        for (n, k) in [(10, 2), (11, 3), (1000, 5), (7, 7)] {
            let f = fold_assignment(n, k, 4).unwrap();
            let mut counts = vec![0; k];
            f.iter().for_each(|&i| counts[i] += 1);
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
            assert_eq!(counts.iter().sum::<usize>(), n);
        }
        assert_eq!(fold_assignment(50, 5, 1).unwrap(), fold_assignment(50, 5, 1).unwrap());
        assert_ne!(fold_assignment(50, 5, 1).unwrap(), fold_assignment(50, 5, 2).unwrap());
        assert!(fold_assignment(3, 4, 0).is_err());
        assert!(fold_assignment(3, 1, 0).is_err());
    }

    #[test]
    fn leave_one_out_on_constant_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Input> = (0..10).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
        let y = vec![-0.2; 10];
        let r = cross_validate(&x, &y, 10, KernelKind::RationalQuadratic, 3, &FitOptions { restarts: 2, ..Default::default() }).unwrap();
        assert!(r.cv.pooled_rmse < 1e-6);
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Input> = (0..40).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0] * p[0] + 0.1 * p[3]).collect();
        let o = FitOptions { restarts: 2, ..Default::default() };
        let a = cross_validate(&x, &y, 5, KernelKind::Matern52, 8, &o).unwrap();
        let b = cross_validate(&x, &y, 5, KernelKind::Matern52, 8, &o).unwrap();
        assert_eq!(a.cv, b.cv);
    }

    #[test]
    fn folds_too_small_to_fit() {
        let x = vec![[0.0; 4]; 6];
        let y = vec![0.0; 6];
        assert!(cross_validate(&x, &y, 3, KernelKind::Exponential, 0, &FitOptions::default()).is_err());
    }
}
