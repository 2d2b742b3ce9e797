//! Keep the nominal value function, perturb the vehicle speeds used for
//! rollouts, and refit the error model for each pair.
//!
//! ```bash
//! cargo run --release --example dynamics_sweep
//! ```

use reachgp::experiments::{sweep_pair, RunConfig};
use reachgp::gp::KernelKind;
use reachgp::solver::solve_qvi;

fn main() -> reachgp::Result<()> {
    let mut cfg = RunConfig::case_study(1);
    cfg.sampling.n_train = 200;
    cfg.gp.restarts = 2;
    cfg.gp.model_kernel = KernelKind::Exponential;
    let series = solve_qvi(&cfg.problem, &cfg.grid.build()?, &cfg.solver)?;

    println!("{:>6} {:>6} {:>12} {:>12}", "v_e", "v_p", "gp cv rmse", "raw rmse");
    for v in [0.75, 1.0, 1.25, 1.5] {
        let row = sweep_pair(&cfg, &series, v, v);
        match (row.gpr_cv_rmse, row.uncorrected_rmse) {
            (Some(cv), Some(raw)) => println!("{v:>6} {v:>6} {cv:>12.5} {raw:>12.5}"),
            _ => println!("{v:>6} {v:>6} {}", row.status),
        }
    }
    Ok(())
}
