//! Error-corrected value functions `V̂ = Ṽ − ε̂` and their closed-loop
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ProblemSpec, State};
use crate::gp::{GpModel, Input};
use crate::grid::ScalarField;
use crate::rollout::{sample_errors, Policy, RolloutConfig, SampleRegion};
use crate::solver::{value_at, SeriesLabel, ValueSeries};

/// Anything that predicts the error `ε̂(x, t)`.
pub trait ErrorModel {
    fn predict_mean(&self, x: &Input) -> f64;
    fn id(&self) -> String;
    /// Problem the model's training samples came from, if recorded.
    fn provenance(&self) -> Option<&ProblemSpec> {
        None
    }
}

impl ErrorModel for GpModel {
    fn predict_mean(&self, x: &Input) -> f64 {
        GpModel::predict_mean(self, x)
    }

    fn id(&self) -> String {
        GpModel::id(self)
    }

    fn provenance(&self) -> Option<&ProblemSpec> {
        GpModel::provenance(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub series: ValueSeries,
    /// Node/time pairs where `V̂ < h`.
    pub obstacle_violations: usize,
}

/// Subtracts the predicted error at every stored node and time. The grid,
/// times, and solver metadata carry over unchanged, and `V̂ ≥ h` is not
/// re-imposed.
pub fn correct_series(series: &ValueSeries, model: &impl ErrorModel) -> Result<Correction> {
    series.validate()?;
    if series.label != SeriesLabel::Computed {
        return Err(Error::Incompatible("only a computed series can be corrected".into()));
    }
    if let Some(spec) = model.provenance() {
        if *spec != series.spec {
            return Err(Error::Incompatible(format!(
                "model was trained on {spec:?} but the series solves {:?}",
                series.spec
            )));
        }
    }
    let grid = &series.grid;
    let nodes: Vec<[f64; 3]> = (0..grid.len())
        .map(|i| {
            let n = grid.node(i);
            [n[0], n[1], n[2]]
        })
        .collect();
    let mut violations = 0;
    let mut slices = Vec::with_capacity(series.slices.len());
    for (slice, &t) in series.slices.iter().zip(&series.times) {
        let values: Vec<f64> = slice
            .values()
            .iter()
            .zip(&nodes)
            .map(|(v, x)| {
                let c = v - model.predict_mean(&[x[0], x[1], x[2], t]);
                if c < series.spec.avoid_distance(&State::from(*x)) {
                    violations += 1;
                }
                c
            })
            .collect();
        slices.push(ScalarField::new(grid, values)?);
    }
    Ok(Correction {
        series: ValueSeries {
            slices,
            label: SeriesLabel::Corrected,
            model_id: Some(model.id()),
            ..series.clone()
        },
        obstacle_violations: violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub rmse_uncorrected: f64,
    pub rmse_corrected: f64,
    pub n_validation: usize,
    pub model_id: Option<String>,
    /// Validation states whose BRT verdict differs between `Ṽ` and `V̂`.
    pub flipped_membership_count: usize,
    pub resampled_uncorrected: usize,
    pub resampled_corrected: usize,
}

/// Compares `Ṽ` against rollouts under its own policies, and `V̂` against
/// rollouts under the policies re-derived from `V̂`, on `n` seeded draws.
///
/// The uncorrected column is exactly `sample_errors` on `series` with the
/// same seed.
pub fn evaluate_correction(
    series: &ValueSeries,
    corrected: &ValueSeries,
    n: usize,
    seed: u64,
    region: &SampleRegion,
    config: &RolloutConfig,
) -> Result<CorrectionReport> {
    if series.grid != corrected.grid || series.spec != corrected.spec || series.times != corrected.times {
        return Err(Error::Incompatible("series and corrected series differ in grid, spec or times".into()));
    }
    let spec = series.spec;
    let base = sample_errors(&Policy::new(series)?, &spec, n, seed, region, config)?;
    let fixed = sample_errors(&Policy::new(corrected)?, &spec, n, seed, region, config)?;
    let mut flipped = 0;
    for s in &base.samples {
        let v_hat = value_at(corrected, &s.state(), s.t)?;
        if (s.v_tilde <= 0.0) != (v_hat <= 0.0) {
            flipped += 1;
        }
    }
    Ok(CorrectionReport {
        rmse_uncorrected: base.rmse(),
        rmse_corrected: fixed.rmse(),
        n_validation: n,
        model_id: corrected.model_id.clone(),
        flipped_membership_count: flipped,
        resampled_uncorrected: base.resampled,
        resampled_corrected: fixed.resampled,
    })
}
