//! Backward-in-time level-set solution of the reach-avoid variational
//! inequality `max{h − V, V_t + H(x, ∇V)} = 0`, `V(x, 0) = max(l, h)`.
//!
//! Spatial derivatives are third-order ENO, the numerical Hamiltonian is
//! Lax-Friedrichs, and time integration is TVD-RK3 followed by the obstacle
//! projection `V ← max(V, h)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ProblemSpec, State};
use crate::grid::{interpolate, Costate, Grid, ScalarField};

/// A Hamiltonian that can be discretized with Lax-Friedrichs.
pub trait NumericalHamiltonian {
    fn hamiltonian(&self, x: &[f64], p: &[f64]) -> f64;

    /// Upper bounds on `|∂H/∂p_i|` over the grid.
    fn dissipation(&self, grid: &Grid) -> Vec<f64>;

    /// Upper bounds on `|∂H/∂p_i|` at the state `x`, over all costates.
    fn dissipation_at(&self, grid: &Grid, _x: &[f64]) -> Vec<f64> {
        self.dissipation(grid)
    }
}

impl NumericalHamiltonian for ProblemSpec {
    fn hamiltonian(&self, x: &[f64], p: &[f64]) -> f64 {
        ProblemSpec::hamiltonian(self, &State::new(x[0], x[1], x[2]), &Costate::new(p[0], p[1], p[2]))
    }

    fn dissipation(&self, grid: &Grid) -> Vec<f64> {
        self.dissipation_bounds(grid).to_vec()
    }

    fn dissipation_at(&self, _grid: &Grid, x: &[f64]) -> Vec<f64> {
        self.local_dissipation_bounds(&State::new(x[0], x[1], x[2])).to_vec()
    }
}

/// `−H`: integrating `V_t + H = 0` backward in `t` is integrating
/// `V_τ − H = 0` forward in `τ = −t`.
struct Reversed<'a, H>(&'a H);

impl<H: NumericalHamiltonian> NumericalHamiltonian for Reversed<'_, H> {
    fn hamiltonian(&self, x: &[f64], p: &[f64]) -> f64 {
        -self.0.hamiltonian(x, p)
    }

    fn dissipation(&self, grid: &Grid) -> Vec<f64> {
        self.0.dissipation(grid)
    }

    fn dissipation_at(&self, grid: &Grid, x: &[f64]) -> Vec<f64> {
        self.0.dissipation_at(grid, x)
    }
}

/// Where the Lax-Friedrichs coefficients are taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissipation {
    /// One bound per dimension over the whole grid.
    #[default]
    Global,
    /// Bounds at each node's state, maximized over costates.
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub cfl: f64,
    pub eno_order: u32,
    /// Pointwise minimum with the previously computed slice after each step.
    pub monotone_tube: bool,
    /// Keep every `store_every`-th slice (terminal and final always kept).
    pub store_every: usize,
    pub dissipation: Dissipation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            eno_order: 3,
            monotone_tube: false,
            store_every: 1,
            dissipation: Dissipation::Global,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidParameter(format!("cfl = {} must lie in (0, 1]", self.cfl)));
        }
        if self.eno_order != 3 {
            return Err(Error::InvalidParameter(format!(
                "eno_order = {}; only 3 is supported",
                self.eno_order
            )));
        }
        if self.store_every == 0 {
            return Err(Error::InvalidParameter("store_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesLabel {
    Computed,
    Corrected,
}

/// Value-function slices over a grid for times in `[−T, 0]`, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSeries {
    pub grid: Grid,
    pub spec: ProblemSpec,
    pub times: Vec<f64>,
    pub slices: Vec<ScalarField>,
    pub label: SeriesLabel,
    pub solver: SolverConfig,
    /// Identifier of the error model a corrected series was built from.
    pub model_id: Option<String>,
}

impl ValueSeries {
    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.slices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times for {} slices",
                self.times.len(),
                self.slices.len()
            )));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("slice times must be strictly increasing".into()));
        }
        if *self.times.last().unwrap() != 0.0 {
            return Err(Error::InvalidParameter("last slice time must be 0".into()));
        }
        for s in &self.slices {
            if s.len() != self.grid.len() {
                return Err(Error::DimensionMismatch("slice length".into()));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        -self.times[0]
    }

    /// Slice index and linear weight of the upper slice bracketing `t`.
    pub fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let first = self.times[0];
        let last = *self.times.last().unwrap();
        let tol = 1e-12;
        if !(t >= first - tol && t <= last + tol) {
            return Err(Error::OutOfTimeRange { time: t, start: first, end: last });
        }
        if self.times.len() == 1 {
            return Ok((0, 0.0));
        }
        let t = t.clamp(first, last);
        let hi = self.times.partition_point(|&s| s < t).clamp(1, self.times.len() - 1);
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        Ok((lo, w.clamp(0.0, 1.0)))
    }

    /// Index of the stored node along `dim` nearest to `coordinate`.
    pub fn nearest_node(&self, dim: usize, coordinate: f64) -> usize {
        let g = &self.grid;
        let s = (coordinate - g.lower()[dim]) / g.spacing()[dim];
        let i = s.round().max(0.0) as usize;
        if g.periodic()[dim] {
            i % g.counts()[dim]
        } else {
            i.min(g.counts()[dim] - 1)
        }
    }

    /// The `x1–x2` plane at heading node `k3` of slice `time_index`, rows over
    /// `x1` and columns over `x2`.
    pub fn plane(&self, time_index: usize, k3: usize) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let (n1, n2) = (g.counts()[0], g.counts()[1]);
        let v = self.slices[time_index].values();
        (0..n1)
            .map(|i| (0..n2).map(|j| v[g.flat_index(&[i, j, k3])]).collect())
            .collect()
    }
}

/// Third-order ENO one-sided derivatives `(D⁻, D⁺)` along `dim`.
///
/// Ghost nodes wrap on periodic dimensions and are linearly extrapolated
/// from the two outermost nodes otherwise.
pub fn eno3_derivatives(grid: &Grid, values: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch("slice/grid size".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ENO input".into()));
    }
    let mut minus = vec![0.0; values.len()];
    let mut plus = vec![0.0; values.len()];
    let mut line = EnoLine::new(grid.counts()[dim]);
    for_each_line(grid, dim, |start, stride| {
        line.load(values, start, stride, grid.periodic()[dim]);
        line.derivatives(grid.spacing()[dim]);
        for i in 0..line.n {
            minus[start + i * stride] = line.minus[i];
            plus[start + i * stride] = line.plus[i];
        }
    });
    Ok((minus, plus))
}

fn for_each_line(grid: &Grid, dim: usize, mut f: impl FnMut(usize, usize)) {
    let stride = grid.strides()[dim];
    let n = grid.counts()[dim];
    let block = stride * n;
    for outer in (0..grid.len()).step_by(block) {
        for inner in 0..stride {
            f(outer + inner, stride);
        }
    }
}

struct EnoLine {
    n: usize,
    buf: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    d3: Vec<f64>,
    minus: Vec<f64>,
    plus: Vec<f64>,
}

const GHOST: usize = 3;

impl EnoLine {
    fn new(n: usize) -> Self {
        Self {
            n,
            buf: vec![0.0; n + 2 * GHOST],
            d1: vec![0.0; n + 2 * GHOST - 1],
            d2: vec![0.0; n + 2 * GHOST - 2],
            d3: vec![0.0; n + 2 * GHOST - 3],
            minus: vec![0.0; n],
            plus: vec![0.0; n],
        }
    }

    fn load(&mut self, values: &[f64], start: usize, stride: usize, periodic: bool) {
        let n = self.n;
        for i in 0..n {
            self.buf[i + GHOST] = values[start + i * stride];
        }
        if periodic {
            for k in 1..=GHOST {
                self.buf[GHOST - k] = self.buf[GHOST + n - k];
                self.buf[GHOST + n - 1 + k] = self.buf[GHOST + k - 1];
            }
        } else {
            let (a, b) = (self.buf[GHOST], self.buf[GHOST + 1]);
            let (y, z) = (self.buf[GHOST + n - 2], self.buf[GHOST + n - 1]);
            for k in 1..=GHOST {
                self.buf[GHOST - k] = a - k as f64 * (b - a);
                self.buf[GHOST + n - 1 + k] = z + k as f64 * (z - y);
            }
        }
    }

    fn derivatives(&mut self, h: f64) {
        for j in 0..self.d1.len() {
            self.d1[j] = (self.buf[j + 1] - self.buf[j]) / h;
        }
        for j in 0..self.d2.len() {
            self.d2[j] = (self.d1[j + 1] - self.d1[j]) / (2.0 * h);
        }
        for j in 0..self.d3.len() {
            self.d3[j] = (self.d2[j + 1] - self.d2[j]) / (3.0 * h);
        }
        for i in 0..self.n {
            self.minus[i] = self.one_sided(i, true, h);
            self.plus[i] = self.one_sided(i, false, h);
        }
    }

    // Node `m` sits at buffer position `m + 3`. First differences at node
    // `m + ½` live in `d1[m + 3]`, second differences at node `m` in
    // `d2[m + 2]`, third differences at `m + ½` in `d3[m + 2]`.
    #[inline]
    fn one_sided(&self, i: usize, left: bool, h: f64) -> f64 {
        let at = |m: isize, offset: isize| (m + offset) as usize;
        let i = i as isize;
        let k = if left { i - 1 } else { i };
        let q1 = self.d1[at(k, 3)];
        let (dk, dk1) = (self.d2[at(k, 2)], self.d2[at(k + 1, 2)]);
        let (c, kstar) = if dk.abs() <= dk1.abs() { (dk, k - 1) } else { (dk1, k) };
        let q2 = c * (2 * (i - k) - 1) as f64 * h;
        let (e0, e1) = (self.d3[at(kstar, 2)], self.d3[at(kstar + 1, 2)]);
        let cs = if e0.abs() <= e1.abs() { e0 } else { e1 };
        let s = (i - kstar) as f64;
        let q3 = cs * (3.0 * s * s - 6.0 * s + 2.0) * h * h;
        q1 + q2 + q3
    }
}

/// Lax-Friedrichs numerical Hamiltonian
/// `H(x, (p⁻ + p⁺)/2) − Σ α_i (p⁺_i − p⁻_i)/2`.
pub fn lax_friedrichs<H: NumericalHamiltonian + ?Sized>(
    ham: &H,
    x: &[f64],
    p_minus: &[f64],
    p_plus: &[f64],
    alphas: &[f64],
) -> f64 {
    let mut mid = [0.0; 8];
    let dims = x.len();
    let mut diss = 0.0;
    for i in 0..dims {
        mid[i] = 0.5 * (p_minus[i] + p_plus[i]);
        diss += alphas[i] * 0.5 * (p_plus[i] - p_minus[i]);
    }
    ham.hamiltonian(x, &mid[..dims]) - diss
}

/// One backward step of the discretized variational inequality.
pub struct Stepper<'a, H> {
    grid: &'a Grid,
    ham: &'a H,
    alphas: Vec<f64>,
    /// Per-node coefficients, node-major, when dissipation is local.
    local_alphas: Option<Vec<f64>>,
    obstacle: Option<Vec<f64>>,
    config: SolverConfig,
    nodes: Vec<f64>,
}

impl<'a, H: NumericalHamiltonian> Stepper<'a, H> {
    /// `obstacle` is the node-wise lower bound `h`; `None` solves the bare
    /// Hamilton-Jacobi equation.
    pub fn new(grid: &'a Grid, ham: &'a H, obstacle: Option<Vec<f64>>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if let Some(o) = &obstacle {
            if o.len() != grid.len() {
                return Err(Error::DimensionMismatch("obstacle/grid size".into()));
            }
        }
        let nodes: Vec<f64> = (0..grid.len()).flat_map(|i| grid.node(i)).collect();
        let dims = grid.dims();
        let (alphas, local_alphas) = match config.dissipation {
            Dissipation::Global => (ham.dissipation(grid), None),
            Dissipation::Local => {
                let local: Vec<f64> = nodes
                    .chunks(dims)
                    .flat_map(|x| ham.dissipation_at(grid, x))
                    .collect();
                let mut worst = vec![0.0f64; dims];
                for a in local.chunks(dims) {
                    for (w, &v) in worst.iter_mut().zip(a) {
                        *w = w.max(v);
                    }
                }
                (worst, Some(local))
            }
        };
        Ok(Self {
            grid,
            ham,
            alphas,
            local_alphas,
            obstacle,
            config,
            nodes,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Largest admissible step, `cfl / max_x Σ α_i / Δx_i`.
    pub fn dt_limit(&self) -> f64 {
        let spacing = self.grid.spacing();
        let rate_of = |a: &[f64]| -> f64 { a.iter().zip(spacing).map(|(a, h)| a / h).sum() };
        let rate = match &self.local_alphas {
            None => rate_of(&self.alphas),
            Some(local) => local.chunks(self.grid.dims()).map(rate_of).fold(0.0, f64::max),
        };
        if rate > 0.0 {
            self.config.cfl / rate
        } else {
            f64::INFINITY
        }
    }

    /// Rate of change of `V` per unit of backward time: `−Ĥ` of the
    /// reversed Hamiltonian.
    fn rate(&self, values: &[f64]) -> Result<Vec<f64>> {
        let dims = self.grid.dims();
        let mut minus = Vec::with_capacity(dims);
        let mut plus = Vec::with_capacity(dims);
        for d in 0..dims {
            let (m, p) = eno3_derivatives(self.grid, values, d)?;
            minus.push(m);
            plus.push(p);
        }
        let reversed = Reversed(self.ham);
        let mut pm = [0.0; 8];
        let mut pp = [0.0; 8];
        let out = (0..self.grid.len())
            .map(|i| {
                for d in 0..dims {
                    pm[d] = minus[d][i];
                    pp[d] = plus[d][i];
                }
                let x = &self.nodes[i * dims..(i + 1) * dims];
                let alphas = match &self.local_alphas {
                    None => &self.alphas[..],
                    Some(local) => &local[i * dims..(i + 1) * dims],
                };
                -lax_friedrichs(&reversed, x, &pm[..dims], &pp[..dims], alphas)
            })
            .collect();
        Ok(out)
    }

    /// Advances `values` from `t` to `t − dt`.
    pub fn step(&self, values: &[f64], dt: f64) -> Result<Vec<f64>> {
        let limit = self.dt_limit();
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        let euler = |v: &[f64]| -> Result<Vec<f64>> {
            let r = self.rate(v)?;
            Ok(v.iter().zip(&r).map(|(a, b)| a + dt * b).collect())
        };
        let u1 = euler(values)?;
        let e1 = euler(&u1)?;
        // u2 = ¾ v + ¼ e1 and v_next = ⅓ v + ⅔ e2, in increment form so a
        // zero rate reproduces `values` exactly.
        let u2: Vec<f64> = values
            .iter()
            .zip(&e1)
            .map(|(v, e)| v + 0.25 * (e - v))
            .collect();
        let e2 = euler(&u2)?;
        let mut next: Vec<f64> = values
            .iter()
            .zip(&e2)
            .map(|(v, e)| v + 2.0 / 3.0 * (e - v))
            .collect();
        if let Some(h) = &self.obstacle {
            for (v, &o) in next.iter_mut().zip(h) {
                *v = v.max(o);
            }
        }
        if self.config.monotone_tube {
            for (v, &prev) in next.iter_mut().zip(values) {
                *v = v.min(prev);
            }
        }
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("solver update at node {i}")));
        }
        Ok(next)
    }
}

/// Node-wise `max(l, h)`.
pub fn terminal_slice(spec: &ProblemSpec, grid: &Grid) -> ScalarField {
    ScalarField::from_raw(
        (0..grid.len())
            .map(|i| spec.terminal_value(&State::from(node3(grid, i))))
            .collect(),
    )
}

/// Node-wise `h`.
pub fn avoid_slice(spec: &ProblemSpec, grid: &Grid) -> Vec<f64> {
    (0..grid.len())
        .map(|i| spec.avoid_distance(&State::from(node3(grid, i))))
        .collect()
}

fn node3(grid: &Grid, i: usize) -> [f64; 3] {
    let n = grid.node(i);
    [n[0], n[1], n[2]]
}

/// Solves from `t = 0` back to `t = −T` with uniform steps no larger than
/// the CFL limit.
pub fn solve_qvi(spec: &ProblemSpec, grid: &Grid, config: &SolverConfig) -> Result<ValueSeries> {
    spec.validate()?;
    config.validate()?;
    if grid.dims() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "the game is three-dimensional, grid has {} dimensions",
            grid.dims()
        )));
    }
    let terminal = terminal_slice(spec, grid);
    let stepper = Stepper::new(grid, spec, Some(avoid_slice(spec, grid)), *config)?;

    let horizon = spec.horizon;
    let mut times = vec![0.0];
    let mut slices = vec![terminal.clone()];
    if horizon > 0.0 {
        let limit = stepper.dt_limit();
        let steps = (horizon / limit).ceil().max(1.0);
        if !steps.is_finite() || steps > 1e7 {
            return Err(Error::StepUnderflow(0.0));
        }
        let steps = steps as usize;
        let dt = horizon / steps as f64;
        let mut current = terminal.into_values();
        for k in 1..=steps {
            current = stepper.step(&current, dt)?;
            if k % config.store_every == 0 || k == steps {
                let t = if k == steps { -horizon } else { -(k as f64) * dt };
                times.push(t);
                slices.push(ScalarField::from_raw(current.clone()));
            }
        }
    }
    times.reverse();
    slices.reverse();
    Ok(ValueSeries {
        grid: grid.clone(),
        spec: *spec,
        times,
        slices,
        label: SeriesLabel::Computed,
        solver: *config,
        model_id: None,
    })
}

/// Multilinear in space, linear in time between stored slices.
pub fn value_at(series: &ValueSeries, state: &State, t: f64) -> Result<f64> {
    let (lo, w) = series.bracket(t)?;
    let x = state.as_array();
    let a = interpolate(&series.grid, &series.slices[lo], &x)?;
    if w == 0.0 {
        return Ok(a);
    }
    let b = interpolate(&series.grid, &series.slices[lo + 1], &x)?;
    if w == 1.0 {
        return Ok(b);
    }
    Ok((1.0 - w) * a + w * b)
}

/// `V(x, t) ≤ 0`.
pub fn brt_contains(series: &ValueSeries, state: &State, t: f64) -> Result<bool> {
    Ok(value_at(series, state, t)? <= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    struct Advection(f64);

    impl NumericalHamiltonian for Advection {
        fn hamiltonian(&self, _x: &[f64], p: &[f64]) -> f64 {
            self.0 * p[0]
        }
        fn dissipation(&self, _grid: &Grid) -> Vec<f64> {
            vec![self.0.abs()]
        }
    }

    struct Still;

    impl NumericalHamiltonian for Still {
        fn hamiltonian(&self, _x: &[f64], _p: &[f64]) -> f64 {
            0.0
        }
        fn dissipation(&self, grid: &Grid) -> Vec<f64> {
            vec![0.0; grid.dims()]
        }
    }

    fn line(n: usize, periodic: bool) -> Grid {
        Grid::new(vec![0.0], vec![1.0], vec![n], vec![periodic]).unwrap()
    }

    fn case_study_grid() -> Grid {
        Grid::new(vec![-1.0, -1.0, 0.0], vec![1.0, 1.0, 1.0], vec![21; 3], vec![false, false, true]).unwrap()
    }

    #[test]
    fn eno_is_exact_on_linear_data() {
        for periodic in [false] {
            let g = line(21, periodic);
            let v: Vec<f64> = (0..21).map(|i| 2.5 * g.coordinate(0, i) - 1.0).collect();
            let (m, p) = eno3_derivatives(&g, &v, 0).unwrap();
            for i in 0..21 {
                assert_relative_eq!(m[i], 2.5, epsilon = 1e-12);
                assert_relative_eq!(p[i], 2.5, epsilon = 1e-12);
            }
        }
        // linear along each axis of a 3-D grid, including the ghost layers
        let g = case_study_grid();
        let v: Vec<f64> = (0..g.len()).map(|i| {
            let x = g.node(i);
            0.3 * x[0] - 1.2 * x[1]
        }).collect();
        for (d, slope) in [(0, 0.3), (1, -1.2)] {
            let (m, p) = eno3_derivatives(&g, &v, d).unwrap();
            assert!(m.iter().chain(&p).all(|&s| (s - slope).abs() < 1e-12));
        }
    }

    #[test]
    fn eno_is_exact_on_quadratics_away_from_the_boundary() {
        let g = line(21, false);
        let v: Vec<f64> = (0..21).map(|i| g.coordinate(0, i).powi(2)).collect();
        let (m, p) = eno3_derivatives(&g, &v, 0).unwrap();
        for i in 3..18 {
            let x = g.coordinate(0, i);
            assert_relative_eq!(m[i], 2.0 * x, epsilon = 1e-12);
            assert_relative_eq!(p[i], 2.0 * x, epsilon = 1e-12);
        }
    }

    #[test]
    fn eno_third_order_convergence() {
        let err = |n: usize| {
            let g = line(n, true);
            let v: Vec<f64> = (0..n).map(|i| (2.0 * PI * g.coordinate(0, i)).sin()).collect();
            let (m, _) = eno3_derivatives(&g, &v, 0).unwrap();
            (0..n)
                .map(|i| (m[i] - 2.0 * PI * (2.0 * PI * g.coordinate(0, i)).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(41) / err(81);
        assert!(ratio >= 6.0, "ratio = {ratio}");
    }

    #[test]
    fn lax_friedrichs_examples() {
        let spec = ProblemSpec::case_study();
        let alphas = [4.5, 3.75, 0.95493];
        let x = [0.3, -0.4, 0.6];
        let p = [0.7, -0.2, 1.1];
        assert_eq!(
            lax_friedrichs(&spec, &x, &p, &p, &alphas),
            NumericalHamiltonian::hamiltonian(&spec, &x, &p)
        );
        let v = lax_friedrichs(&spec, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &alphas);
        assert_relative_eq!(v, 2.25, epsilon = 1e-14);
    }

    #[test]
    fn lax_friedrichs_is_monotone_in_the_right_derivative() {
        use rand::{Rng, SeedableRng};
        let spec = ProblemSpec::case_study();
        let g = case_study_grid();
        let alphas = spec.dissipation_bounds(&g);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)];
            let pm: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let pp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let base = lax_friedrichs(&spec, &x, &pm, &pp, &alphas);
            let mut bumped = pp;
            bumped[0] += 1e-4;
            assert!(lax_friedrichs(&spec, &x, &pm, &bumped, &alphas) <= base + 1e-15);
        }
    }

    #[test]
    fn zero_dynamics_leaves_the_slice_unchanged() {
        let g = case_study_grid();
        let f: Vec<f64> = (0..g.len()).map(|i| g.node(i).iter().map(|c| c.sin()).sum()).collect();
        let cfg = SolverConfig::default();
        let s = Stepper::new(&g, &Still, None, cfg).unwrap();
        let next = s.step(&f, 0.01).unwrap();
        assert_eq!(next, f);
    }

    #[test]
    fn advection_matches_the_shifted_solution() {
        let n = 101;
        let g = line(n, true);
        let a = 1.0;
        let ham = Advection(a);
        let s = Stepper::new(&g, &ham, None, SolverConfig::default()).unwrap();
        let mut v: Vec<f64> = (0..n).map(|i| (2.0 * PI * g.coordinate(0, i)).sin()).collect();
        let horizon = 0.5;
        let steps = (horizon / s.dt_limit()).ceil() as usize;
        let dt = horizon / steps as f64;
        for _ in 0..steps {
            v = s.step(&v, dt).unwrap();
        }
        // V(x, −s) = V(x + a s, 0) for V_t + a V_x = 0
        let worst = (0..n)
            .map(|i| (v[i] - (2.0 * PI * (g.coordinate(0, i) + a * horizon)).sin()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.02, "worst = {worst}");
    }

    #[test]
    fn obstacle_dominates() {
        let g = case_study_grid();
        let spec = ProblemSpec::case_study();
        let s = Stepper::new(&g, &spec, Some(vec![0.3; g.len()]), SolverConfig::default()).unwrap();
        let mut v = terminal_slice(&spec, &g).into_values();
        let dt = s.dt_limit();
        for _ in 0..5 {
            v = s.step(&v, dt).unwrap();
            assert!(v.iter().all(|&x| x >= 0.3));
        }
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let g = case_study_grid();
        let spec = ProblemSpec::case_study();
        let s = Stepper::new(&g, &spec, None, SolverConfig::default()).unwrap();
        let v = terminal_slice(&spec, &g).into_values();
        assert!(matches!(s.step(&v, 2.0 * s.dt_limit()), Err(Error::CflViolation { .. })));
        assert!(matches!(s.step(&v, 0.0), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn zero_horizon_gives_the_terminal_slice() {
        let spec = ProblemSpec { horizon: 0.0, ..ProblemSpec::case_study() };
        let g = case_study_grid();
        let series = solve_qvi(&spec, &g, &SolverConfig::default()).unwrap();
        assert_eq!(series.times, vec![0.0]);
        assert_eq!(series.slices[0], terminal_slice(&spec, &g));
    }

    fn equilibrium_drift(dissipation: Dissipation, min_radius: f64) -> f64 {
        let spec = ProblemSpec {
            u_max: 0.0,
            d_max: 0.0,
            r1: 1.0 - 1e-6,
            ..ProblemSpec::case_study()
        };
        let g = case_study_grid();
        let cfg = SolverConfig { dissipation, ..SolverConfig::default() };
        let series = solve_qvi(&spec, &g, &cfg).unwrap();
        let idx: Vec<usize> = (0..g.len())
            .filter(|&i| {
                let x = g.node(i);
                x[2] == 0.0 && x[0].hypot(x[1]) >= min_radius
            })
            .collect();
        let first = &series.slices[0];
        let last = series.slices.last().unwrap();
        idx.iter().map(|&i| (first.values()[i] - last.values()[i]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn relative_equilibrium_is_time_invariant() {
        // zero relative flow on the x3 = 0 slice; local coefficients vanish there
        let worst = equilibrium_drift(Dissipation::Local, 0.0);
        assert!(worst <= 0.01, "worst = {worst}");
    }

    #[test]
    fn global_dissipation_drift_is_confined_to_the_apex() {
        // the global coefficients smooth the kink of |x| at the origin
        let apex = equilibrium_drift(Dissipation::Global, 0.0);
        assert!(apex > 0.01);
        let worst = equilibrium_drift(Dissipation::Global, 0.4);
        assert!(worst <= 0.01, "worst = {worst}");
    }

    #[test]
    fn local_coefficients_never_exceed_global() {
        let spec = ProblemSpec::case_study();
        let g = case_study_grid();
        let s = Stepper::new(&g, &spec, None, SolverConfig { dissipation: Dissipation::Local, ..SolverConfig::default() }).unwrap();
        let global = Stepper::new(&g, &spec, None, SolverConfig::default()).unwrap();
        assert!(s.dt_limit() >= global.dt_limit());
        for (a, b) in s.alphas().iter().zip(global.alphas()) {
            assert!(a <= &(b + 1e-12));
        }
    }

    #[test]
    fn decimated_storage_keeps_the_end_points() {
        let spec = ProblemSpec { horizon: 0.2, ..ProblemSpec::case_study() };
        let g = case_study_grid();
        let cfg = SolverConfig { store_every: 7, ..SolverConfig::default() };
        let series = solve_qvi(&spec, &g, &cfg).unwrap();
        series.validate().unwrap();
        assert_eq!(series.times[0], -0.2);
        assert_eq!(*series.times.last().unwrap(), 0.0);
        let full = solve_qvi(&spec, &g, &SolverConfig::default()).unwrap();
        assert_eq!(series.slices[0], full.slices[0]);
    }

    #[test]
    fn value_at_lookup() {
        let spec = ProblemSpec { horizon: 0.1, ..ProblemSpec::case_study() };
        let g = case_study_grid();
        let series = solve_qvi(&spec, &g, &SolverConfig::default()).unwrap();
        let node = 441 * 4 + 21 * 7 + 3;
        let x = State::from([g.node(node)[0], g.node(node)[1], g.node(node)[2]]);
        for (k, &t) in series.times.iter().enumerate() {
            assert_eq!(value_at(&series, &x, t).unwrap(), series.slices[k].values()[node]);
        }
        assert!(matches!(value_at(&series, &x, 0.01), Err(Error::OutOfTimeRange { .. })));
        assert!(matches!(value_at(&series, &x, -0.2), Err(Error::OutOfTimeRange { .. })));

        let mut flat = series.clone();
        for s in &mut flat.slices {
            *s = ScalarField::constant(&g, 0.42);
        }
        let mid = 0.5 * (series.times[0] + series.times[1]);
        assert_relative_eq!(value_at(&flat, &State::new(0.11, 0.2, 0.5), mid).unwrap(), 0.42, epsilon = 1e-15);
    }

    /// Fraction of node-steps where the value rises by more than `tol`
    /// going backward in time.
    fn horizon_growth(tube: bool, tol: f64) -> f64 {
        let cfg = SolverConfig { monotone_tube: tube, ..SolverConfig::default() };
        let s = solve_qvi(&ProblemSpec::case_study(), &case_study_grid(), &cfg).unwrap();
        let (mut bad, mut total) = (0usize, 0usize);
        for w in s.slices.windows(2) {
            for (earlier, later) in w[0].values().iter().zip(w[1].values()) {
                total += 1;
                bad += (earlier - later > tol) as usize;
            }
        }
        bad as f64 / total as f64
    }

    #[test]
    fn tube_makes_the_value_monotone_in_the_horizon() {
        assert_eq!(horizon_growth(true, 0.0), 0.0);
        let loose = horizon_growth(false, 5e-3);
        assert!(loose > 0.01, "{loose}");
    }
}
