//! Solve the reach-avoid game on the case-study grid and print a cross
//! section of the backward reachable tube.
//!
//! ```bash
//! cargo run --release --example solve_brt
//! ```

use std::time::Instant;

use reachgp::solver::{brt_contains, solve_qvi, value_at};
use reachgp::{case_study_grid, ProblemSpec, SolverConfig, State};

fn main() -> reachgp::Result<()> {
    let spec = ProblemSpec::case_study();
    let config = SolverConfig { monotone_tube: true, ..SolverConfig::default() };
    let start = Instant::now();
    let series = solve_qvi(&spec, &case_study_grid(), &config)?;
    println!(
        "solved {} slices on {} nodes in {:.1?}",
        series.times.len(),
        series.grid.len(),
        start.elapsed()
    );

    // heading x3 = 0, full horizon; '#' marks states inside the tube
    let t = -spec.horizon;
    for i in 0..21 {
        let x2 = 1.0 - 0.1 * i as f64;
        let row: String = (0..21)
            .map(|j| {
                let x = State::new(-1.0 + 0.1 * j as f64, x2, 0.0);
                match brt_contains(&series, &x, t) {
                    Ok(true) => '#',
                    Ok(false) => '.',
                    Err(_) => '?',
                }
            })
            .collect();
        println!("{x2:+.1} {row}");
    }

    let probe = State::new(0.078, -0.51, 0.20);
    println!("V({probe:?}, -0.42) = {:.4}", value_at(&series, &probe, -0.42)?);
    Ok(())
}
