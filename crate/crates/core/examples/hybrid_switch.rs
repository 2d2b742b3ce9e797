//! Drive a switching controller: least-restrictive input while the
//! corrected value is safely negative, the reach-avoid input otherwise.
//!
//! ```bash
//! cargo run --release --example hybrid_switch
//! ```

use reachgp::gp::{self, fit, FitOptions, KernelKind};
use reachgp::hybrid::{select, Decision, SwitchConfig, SwitchLaw};
use reachgp::rollout::{sample_errors, Policy, RolloutConfig, SampleRegion};
use reachgp::solver::{solve_qvi, value_at};
use reachgp::{case_study_grid, ProblemSpec, SolverConfig, State};

fn main() -> reachgp::Result<()> {
    let spec = ProblemSpec::case_study();
    let series = solve_qvi(&spec, &case_study_grid(), &SolverConfig { monotone_tube: true, ..Default::default() })?;
    let policy = Policy::new(&series)?;
    let set = sample_errors(&policy, &spec, 150, 2, &SampleRegion::case_study(), &RolloutConfig::default())?;
    let model = fit(
        &gp::inputs_of(&set.samples),
        &gp::targets_of(&set.samples),
        KernelKind::Matern52,
        &FitOptions { restarts: 3, ..Default::default() },
    )?;

    let switch = SwitchConfig { law: SwitchLaw::ValueAndStd, ..SwitchConfig::default() };
    switch.validate()?;

    // Euler steps; the least-restrictive controller holds the turn rate at zero
    let (dt, mut t) = (0.01, -1.0);
    let mut x = State::new(-0.6, 0.5, 0.0);
    let mut safety_steps = 0;
    while t < -1e-9 {
        let p = gp::predict(&model, &x, t);
        let v_hat = value_at(&series, &x, t)? - p.mean;
        let (u, d) = match select(v_hat, p.std, &switch) {
            Decision::UseSafety => {
                safety_steps += 1;
                policy.feedback_inputs(&x, t)?
            }
            Decision::UseLeastRestrictive => (0.0, policy.feedback_inputs(&x, t)?.1),
        };
        let f = spec.flow(&x, u, d)?;
        x = State::new(x.x1 + dt * f[0], x.x2 + dt * f[1], x.x3 + dt * f[2]).wrapped();
        t += dt;
        if !series.grid.contains(&x.as_array()) {
            println!("left the grid at t = {t:.2}");
            break;
        }
    }
    println!("safety controller active on {safety_steps} steps");
    println!("final state ({:+.3}, {:+.3}, {:.3}), distance {:.3}, reach radius {}", x.x1, x.x2, x.x3, x.radius(), spec.r1);
    Ok(())
}
