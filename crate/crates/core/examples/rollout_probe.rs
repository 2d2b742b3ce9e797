//! Simulate one closed-loop trajectory under the extracted policies and
//! compare its realized payoff with the grid value, then draw a batch of
//! error samples.
//!
//! ```bash
//! cargo run --release --example rollout_probe
//! ```

use reachgp::rollout::{pathwise_value, sample_errors, simulate, Policy, RolloutConfig, SampleRegion};
use reachgp::solver::{solve_qvi, value_at};
use reachgp::{case_study_grid, ProblemSpec, SolverConfig, State};

fn main() -> reachgp::Result<()> {
    let spec = ProblemSpec::case_study();
    let series = solve_qvi(&spec, &case_study_grid(), &SolverConfig { monotone_tube: true, ..Default::default() })?;
    let policy = Policy::new(&series)?;
    let config = RolloutConfig::default();

    let (x0, t0) = (State::new(0.078, -0.51, 0.20), -0.42);
    let traj = simulate(&policy, &spec, x0, t0, &config)?;
    println!("grid value     {:+.4}", value_at(&series, &x0, t0)?);
    println!("rollout value  {:+.4}", pathwise_value(&traj, &spec));
    println!("steps {}  status {:?}", traj.times.len() - 1, traj.status);
    if let Some(end) = traj.states.last() {
        println!("final state    ({:+.3}, {:+.3}, {:.3})", end.x1, end.x2, end.x3);
    }

    let set = sample_errors(&policy, &spec, 200, 1, &SampleRegion::case_study(), &config)?;
    let worst = set.samples.iter().map(|s| s.eps_tilde.abs()).fold(0.0, f64::max);
    println!("200 samples: rms error {:.4}, max |error| {worst:.4}, {} redrawn", set.rmse(), set.resampled);
    Ok(())
}
