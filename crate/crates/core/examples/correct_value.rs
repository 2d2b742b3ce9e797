//! Build the corrected value function `V̂ = Ṽ − ε̂` and evaluate both value
//! functions against their own closed-loop rollouts.
//!
//! ```bash
//! cargo run --release --example correct_value
//! ```

use reachgp::corrector::{correct_series, evaluate_correction};
use reachgp::gp::{self, fit, FitOptions, KernelKind};
use reachgp::rollout::{sample_errors, Policy, RolloutConfig, SampleRegion};
use reachgp::solver::{solve_qvi, value_at};
use reachgp::{case_study_grid, ProblemSpec, SolverConfig, State};

fn main() -> reachgp::Result<()> {
    let spec = ProblemSpec::case_study();
    let series = solve_qvi(&spec, &case_study_grid(), &SolverConfig { monotone_tube: true, ..Default::default() })?;
    let region = SampleRegion::case_study();
    let rollout = RolloutConfig::default();

    let train = sample_errors(&Policy::new(&series)?, &spec, 200, 1, &region, &rollout)?;
    let model = fit(
        &gp::inputs_of(&train.samples),
        &gp::targets_of(&train.samples),
        KernelKind::RationalQuadratic,
        &FitOptions { restarts: 4, ..Default::default() },
    )?
    .with_provenance(spec);
    println!("model {} on {} samples", model.id(), model.len());

    let corrected = correct_series(&series, &model)?;
    println!("nodes pushed below the avoid obstacle: {}", corrected.obstacle_violations);
    let probe = State::new(0.078, -0.51, 0.20);
    println!(
        "probe: computed {:+.4}, corrected {:+.4}",
        value_at(&series, &probe, -0.42)?,
        value_at(&corrected.series, &probe, -0.42)?
    );

    let report = evaluate_correction(&series, &corrected.series, 200, 99, &region, &rollout)?;
    println!(
        "rmse uncorrected {:.5}, corrected {:.5}, {} BRT verdicts flipped",
        report.rmse_uncorrected, report.rmse_corrected, report.flipped_membership_count
    );
    Ok(())
}
