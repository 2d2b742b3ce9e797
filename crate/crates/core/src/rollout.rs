//! Closed-loop rollouts under value-function feedback, and the sampled
//! numerical error `ε̃ = Ṽ − V_{ũ,d̃}`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ProblemSpec, State};
use crate::grid::{gradient_field, Costate, ScalarField, Stencil};
use crate::solver::{value_at, ValueSeries};

/// Feedback policies derived from a value series: the costate is the
/// space-time interpolant of per-slice central-difference gradients.
pub struct Policy<'a> {
    series: &'a ValueSeries,
    gradients: Vec<Vec<ScalarField>>,
}

impl<'a> Policy<'a> {
    pub fn new(series: &'a ValueSeries) -> Result<Self> {
        series.validate()?;
        let gradients = series
            .slices
            .iter()
            .map(|s| gradient_field(&series.grid, s))
            .collect::<Result<_>>()?;
        Ok(Self { series, gradients })
    }

    pub fn series(&self) -> &'a ValueSeries {
        self.series
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.series.spec
    }

    pub fn costate(&self, state: &State, t: f64, clamp: bool) -> Result<Costate> {
        let (lo, w) = self.series.bracket(t)?;
        let st = Stencil::new(&self.series.grid, &state.as_array(), clamp)?;
        let at = |k: usize| -> [f64; 3] {
            let g = &self.gradients[k];
            [st.apply(g[0].values()), st.apply(g[1].values()), st.apply(g[2].values())]
        };
        let a = at(lo);
        if w == 0.0 {
            return Ok(a.into());
        }
        let b = at(lo + 1);
        Ok(std::array::from_fn(|i| (1.0 - w) * a[i] + w * b[i]).into())
    }

    /// Saddle-point inputs for the interpolated costate.
    pub fn feedback_inputs(&self, state: &State, t: f64) -> Result<(f64, f64)> {
        self.feedback_inputs_with(state, t, false)
    }

    pub fn feedback_inputs_with(&self, state: &State, t: f64, clamp: bool) -> Result<(f64, f64)> {
        let p = self.costate(state, t, clamp)?;
        Ok(self.spec().optimal_inputs(state, &p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub dt: f64,
    /// Look up feedback at the nearest boundary point instead of stopping
    /// when the trajectory leaves the grid.
    pub clamp: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { dt: 0.01, clamp: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    LeftDomain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start_time: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub controls: Vec<f64>,
    pub disturbances: Vec<f64>,
    pub status: TrajectoryStatus,
}

/// Integrates `dynamics` from `(x0, t0)` to `t = 0` with classical RK4,
/// holding the feedback inputs fixed over each step.
///
/// The final step is shortened to land on `t = 0` exactly. With
/// `config.clamp` off the rollout stops with
/// [`TrajectoryStatus::LeftDomain`] as soon as a state leaves the grid.
pub fn simulate(
    policy: &Policy<'_>,
    dynamics: &ProblemSpec,
    x0: State,
    t0: f64,
    config: &RolloutConfig,
) -> Result<Trajectory> {
    if !(config.dt > 0.0) {
        return Err(Error::InvalidParameter(format!("rollout dt = {} must be positive", config.dt)));
    }
    let grid = &policy.series().grid;
    if !x0.is_finite() {
        return Err(Error::NonFinite("rollout start state".into()));
    }
    // surfaces the offending coordinate as an OutOfDomain error
    Stencil::new(grid, &x0.as_array(), false)?;
    let periodic = grid.periodic()[2];
    let wrap = |s: State| if periodic { s.wrapped() } else { s };
    let steps = if t0 < 0.0 { (-t0 / config.dt - 1e-9).ceil().max(1.0) as usize } else { 0 };

    let mut traj = Trajectory {
        start_time: t0,
        dt: config.dt,
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps),
        disturbances: Vec::with_capacity(steps),
        status: TrajectoryStatus::Completed,
    };
    let mut x = wrap(x0);
    let mut t = t0;
    traj.times.push(t);
    traj.states.push(x);
    for k in 0..steps {
        let h = if k + 1 == steps { -t } else { config.dt };
        let (u, d) = policy.feedback_inputs_with(&x, t, config.clamp)?;
        x = wrap(rk4(dynamics, &x, u, d, h));
        t = if k + 1 == steps { 0.0 } else { t0 + (k + 1) as f64 * config.dt };
        traj.controls.push(u);
        traj.disturbances.push(d);
        traj.times.push(t);
        traj.states.push(x);
        if !config.clamp && !grid.contains(&x.as_array()) {
            traj.status = TrajectoryStatus::LeftDomain;
            break;
        }
    }
    Ok(traj)
}

fn rk4(spec: &ProblemSpec, x: &State, u: f64, d: f64, h: f64) -> State {
    let f = |s: &State| spec.flow_unchecked(s, u, d);
    let shift = |s: &State, k: [f64; 3], a: f64| State::new(s.x1 + a * k[0], s.x2 + a * k[1], s.x3 + a * k[2]);
    let k1 = f(x);
    let k2 = f(&shift(x, k1, 0.5 * h));
    let k3 = f(&shift(x, k2, 0.5 * h));
    let k4 = f(&shift(x, k3, h));
    State::new(
        x.x1 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x.x2 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x.x3 + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )
}

/// Reach-avoid outcome of a sampled path:
/// `min_k max(l(ζ_k), max_{j≤k} h(ζ_j))`.
///
/// Trajectories that left the domain have no defined outcome and map to
/// `+∞`.
pub fn pathwise_value(traj: &Trajectory, spec: &ProblemSpec) -> f64 {
    if traj.status == TrajectoryStatus::LeftDomain {
        return f64::INFINITY;
    }
    let mut worst_h = f64::NEG_INFINITY;
    let mut best = f64::INFINITY;
    for x in &traj.states {
        worst_h = worst_h.max(spec.avoid_distance(x));
        best = best.min(spec.reach_distance(x).max(worst_h));
    }
    best
}

/// One observation of the numerical error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub t: f64,
    pub v_tilde: f64,
    pub v_rollout: f64,
    pub eps_tilde: f64,
}

impl ErrorSample {
    pub fn new(state: State, t: f64, v_tilde: f64, v_rollout: f64) -> Self {
        Self {
            x1: state.x1,
            x2: state.x2,
            x3: state.x3,
            t,
            v_tilde,
            v_rollout,
            eps_tilde: v_tilde - v_rollout,
        }
    }

    pub fn state(&self) -> State {
        State::new(self.x1, self.x2, self.x3)
    }

    /// Regression input `(x1, x2, x3, t)`.
    pub fn input(&self) -> [f64; 4] {
        [self.x1, self.x2, self.x3, self.t]
    }
}

/// Axis-aligned box of start states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRegion {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub time_range: [f64; 2],
}

impl SampleRegion {
    /// `[−1, 1]² × [0, 1] × [−1, 0]`.
    pub fn case_study() -> Self {
        Self {
            lower: [-1.0, -1.0, 0.0],
            upper: [1.0, 1.0, 1.0],
            time_range: [-1.0, 0.0],
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> (State, f64) {
        let axis = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let x1 = axis(rng, self.lower[0], self.upper[0]);
        let x2 = axis(rng, self.lower[1], self.upper[1]);
        let x3 = axis(rng, self.lower[2], self.upper[2]);
        let t = axis(rng, self.time_range[0], self.time_range[1]);
        (State::new(x1, x2, x3), t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<ErrorSample>,
    /// Draws rejected because their rollout left the domain.
    pub resampled: usize,
}

impl SampleSet {
    pub fn rmse(&self) -> f64 {
        rms(self.samples.iter().map(|s| s.eps_tilde))
    }
}

pub fn rms(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Draws per sample before [`sample_errors`] gives up.
pub const RESAMPLE_BUDGET: usize = 1000;

/// Per-sample random stream: sample `i` always sees the same draws for a
/// given seed, however the samples are scheduled.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `n` uniform `(x, t)` from `region`, simulates each under `policy`
/// with `dynamics`, and records `Ṽ`, `V_{ũ,d̃}` and their difference.
///
/// Draws whose rollout leaves the domain are replaced and counted.
pub fn sample_errors(
    policy: &Policy<'_>,
    dynamics: &ProblemSpec,
    n: usize,
    seed: u64,
    region: &SampleRegion,
    config: &RolloutConfig,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut samples = Vec::with_capacity(n);
    let mut resampled = 0;
    for index in 0..n {
        let mut rng = sample_rng(seed, index);
        let mut attempts = 0;
        loop {
            if attempts == RESAMPLE_BUDGET {
                return Err(Error::ResampleBudget { index, attempts });
            }
            attempts += 1;
            let (x, t) = region.draw(&mut rng);
            let traj = simulate(policy, dynamics, x, t, config)?;
            if traj.status == TrajectoryStatus::LeftDomain {
                resampled += 1;
                continue;
            }
            let v_tilde = value_at(policy.series(), &x, t)?;
            samples.push(ErrorSample::new(x, t, v_tilde, pathwise_value(&traj, dynamics)));
            break;
        }
    }
    Ok(SampleSet { samples, resampled })
}

pub const SAMPLE_HEADER: [&str; 7] = ["x1", "x2", "x3", "t", "v_tilde", "v_rollout", "eps_tilde"];

/// Fixed-width scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_samples_csv(path: &Path, samples: &[ErrorSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SAMPLE_HEADER)?;
    for s in samples {
        w.write_record([s.x1, s.x2, s.x3, s.t, s.v_tilde, s.v_rollout, s.eps_tilde].map(fmt_f64))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<ErrorSample>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != SAMPLE_HEADER {
        return Err(Error::archive(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut vals = [0.0; 7];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = rec
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::archive(path, format!("row {}: bad column {}", row + 1, SAMPLE_HEADER[i])))?;
        }
        out.push(ErrorSample {
            x1: vals[0],
            x2: vals[1],
            x3: vals[2],
            t: vals[3],
            v_tilde: vals[4],
            v_rollout: vals[5],
            eps_tilde: vals[6],
        });
    }
    Ok(out)
}
