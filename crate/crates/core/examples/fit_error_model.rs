//! Fit GP error models to closed-loop samples and compare kernels by
//! cross-validation against a linear baseline.
//!
//! ```bash
//! cargo run --release --example fit_error_model -- 300
//! ```

use reachgp::gp::{self, cross_validate, linear_baseline, FitOptions, KernelKind};
use reachgp::rollout::{sample_errors, Policy, RolloutConfig, SampleRegion};
use reachgp::solver::solve_qvi;
use reachgp::{case_study_grid, ProblemSpec, SolverConfig, State};

fn main() -> reachgp::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let spec = ProblemSpec::case_study();
    let series = solve_qvi(&spec, &case_study_grid(), &SolverConfig { monotone_tube: true, ..Default::default() })?;
    let policy = Policy::new(&series)?;
    let set = sample_errors(&policy, &spec, n, 1, &SampleRegion::case_study(), &RolloutConfig::default())?;
    let (x, y) = (gp::inputs_of(&set.samples), gp::targets_of(&set.samples));
    println!("{n} samples, rms error {:.4}", set.rmse());

    let options = FitOptions { restarts: 4, seed: 7, ..Default::default() };
    let (_, linear) = linear_baseline(&x, &y, 5, 11)?;
    println!("{:<20} cv rmse {:.5}", "linear", linear.pooled_rmse);
    let mut best = None;
    for kind in KernelKind::ALL {
        let r = cross_validate(&x, &y, 5, kind, 11, &options)?;
        let k = r.model.kernel();
        println!(
            "{:<20} cv rmse {:.5}  l {:.3}  sf2 {:.2e}  sn2 {:.2e}",
            kind.name(),
            r.cv.pooled_rmse,
            k.length_scale,
            k.signal_variance,
            r.model.noise_variance()
        );
        if best.as_ref().is_none_or(|(v, _)| r.cv.pooled_rmse < *v) {
            best = Some((r.cv.pooled_rmse, r.model));
        }
    }

    let (_, model) = best.expect("at least one kernel");
    let p = gp::predict(&model, &State::new(0.078, -0.51, 0.20), -0.42);
    println!("predicted error at the probe: {:+.4} +/- {:.4}", p.mean, 1.96 * p.std);
    Ok(())
}
