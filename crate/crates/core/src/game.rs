//! The two-vehicle pursuit-evasion game in relative coordinates.
//!
//! `x1, x2` is the scaled relative position and `x3` the relative heading
//! divided by 2π. The control `u` maximizes the value and the disturbance `d`
//! minimizes it; both are angular rates bounded by `u_max` and `d_max`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Costate, Grid};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemSpec {
    pub v_e: f64,
    pub v_p: f64,
    pub u_max: f64,
    pub d_max: f64,
    pub r1: f64,
    pub r2: f64,
    pub horizon: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self::case_study()
    }
}

/// The relative state of the two vehicles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl State {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Self { x1, x2, x3 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    /// Wraps the heading into `[0, 1)`.
    pub fn wrapped(mut self) -> Self {
        self.x3 = self.x3.rem_euclid(1.0);
        if self.x3 >= 1.0 {
            self.x3 = 0.0;
        }
        self
    }

    pub fn radius(&self) -> f64 {
        self.x1.hypot(self.x2)
    }
}

impl From<[f64; 3]> for State {
    fn from(x: [f64; 3]) -> Self {
        Self::new(x[0], x[1], x[2])
    }
}

/// Which closed form of the Hamiltonian to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianForm {
    /// `sup_u inf_d p·f`, with the control term `u_max |p3| / 2π`.
    #[default]
    Exact,
    /// Control term `u_max p3 / 2π` without the absolute value.
    AsPrinted,
}

impl ProblemSpec {
    /// `v_e = v_p = 0.75`, `u_max = d_max = 3`, `r1 = 0.25`, `r2 = 1`, `T = 1`.
    pub fn case_study() -> Self {
        Self {
            v_e: 0.75,
            v_p: 0.75,
            u_max: 3.0,
            d_max: 3.0,
            r1: 0.25,
            r2: 1.0,
            horizon: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v_e", self.v_e),
            ("v_p", self.v_p),
            ("u_max", self.u_max),
            ("d_max", self.d_max),
            ("r1", self.r1),
            ("r2", self.r2),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if self.r1 <= 0.0 {
            return Err(Error::InvalidParameter(format!("r1 = {} must be positive", self.r1)));
        }
        if self.r1 >= self.r2 {
            return Err(Error::InvalidParameter(format!(
                "r1 = {} must be smaller than r2 = {}",
                self.r1, self.r2
            )));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon = {} must be finite and non-negative",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Relative dynamics; fails if an input exceeds its bound.
    pub fn flow(&self, x: &State, u: f64, d: f64) -> Result<[f64; 3]> {
        if u.abs() > self.u_max || !u.is_finite() {
            return Err(Error::InputBound { name: "u", value: u, bound: self.u_max });
        }
        if d.abs() > self.d_max || !d.is_finite() {
            return Err(Error::InputBound { name: "d", value: d, bound: self.d_max });
        }
        Ok(self.flow_unchecked(x, u, d))
    }

    #[inline]
    pub fn flow_unchecked(&self, x: &State, u: f64, d: f64) -> [f64; 3] {
        let (s, c) = (TWO_PI * x.x3).sin_cos();
        [
            -self.v_e + self.v_p * c + d * x.x2,
            self.v_p * s - d * x.x1,
            (u - d) / TWO_PI,
        ]
    }

    /// Signed distance `l` to the capture disc of radius `r1`.
    pub fn reach_distance(&self, x: &State) -> f64 {
        x.radius() - self.r1
    }

    /// Signed distance `h` to the escape region `|x| ≥ r2`; positive inside it.
    pub fn avoid_distance(&self, x: &State) -> f64 {
        x.radius() - self.r2
    }

    /// `max(l, h)`, the terminal value.
    pub fn terminal_value(&self, x: &State) -> f64 {
        self.reach_distance(x).max(self.avoid_distance(x))
    }

    pub fn hamiltonian(&self, x: &State, p: &Costate) -> f64 {
        self.hamiltonian_with(x, p, HamiltonianForm::Exact)
    }

    pub fn hamiltonian_with(&self, x: &State, p: &Costate, form: HamiltonianForm) -> f64 {
        let (s, c) = (TWO_PI * x.x3).sin_cos();
        let drift = p.p1 * (-self.v_e + self.v_p * c) + p.p2 * (self.v_p * s);
        let coupling = p.p1 * x.x2 - p.p2 * x.x1 - p.p3 / TWO_PI;
        let control = match form {
            HamiltonianForm::Exact => self.u_max * p.p3.abs() / TWO_PI,
            HamiltonianForm::AsPrinted => self.u_max * p.p3 / TWO_PI,
        };
        drift - self.d_max * coupling.abs() + control
    }

    /// Bang-bang saddle point of `p·f`: `u` maximizes, `d` minimizes.
    /// Zero switching functions resolve to the positive bound.
    pub fn optimal_inputs(&self, x: &State, p: &Costate) -> (f64, f64) {
        let coupling = p.p1 * x.x2 - p.p2 * x.x1 - p.p3 / TWO_PI;
        let u = self.u_max * sign(p.p3);
        let d = -self.d_max * sign(coupling);
        (u, d)
    }

    /// Lax-Friedrichs dissipation coefficients: bounds on `|∂H/∂p_i|` over
    /// the grid's coordinate ranges.
    pub fn dissipation_bounds(&self, grid: &Grid) -> [f64; 3] {
        let max_x1 = grid.max_abs_coordinate(0);
        let max_x2 = grid.max_abs_coordinate(1);
        [
            self.v_e + self.v_p + self.d_max * max_x2,
            self.v_p + self.d_max * max_x1,
            (self.u_max + self.d_max) / TWO_PI,
        ]
    }

    /// Bounds on `|∂H/∂p_i|` at one state, over all costates.
    pub fn local_dissipation_bounds(&self, x: &State) -> [f64; 3] {
        let (s, c) = (TWO_PI * x.x3).sin_cos();
        [
            (-self.v_e + self.v_p * c).abs() + self.d_max * x.x2.abs(),
            (self.v_p * s).abs() + self.d_max * x.x1.abs(),
            (self.u_max + self.d_max) / TWO_PI,
        ]
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(p: &Costate, f: [f64; 3]) -> f64 {
        p.p1 * f[0] + p.p2 * f[1] + p.p3 * f[2]
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> (State, Costate) {
        let x = State::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
        let p = Costate::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        (x, p)
    }

    #[test]
    fn flow_examples() {
        let spec = ProblemSpec::case_study();
        assert_eq!(spec.flow(&State::new(0.0, 0.0, 0.0), 0.0, 0.0).unwrap(), [0.0, 0.0, 0.0]);

        let f = spec.flow(&State::new(0.0, 0.0, 0.5), 3.0, 3.0).unwrap();
        assert_relative_eq!(f[0], -1.5, epsilon = 1e-15);
        assert!(f[1].abs() < 1e-15);
        assert_eq!(f[2], 0.0);

        let f = spec.flow(&State::new(0.5, -0.5, 0.25), 0.0, 2.0).unwrap();
        assert_relative_eq!(f[0], -1.75, epsilon = 1e-15);
        assert_relative_eq!(f[1], -0.25, epsilon = 1e-15);
        assert_relative_eq!(f[2], -1.0 / PI, epsilon = 1e-15);
    }

    #[test]
    fn flow_rejects_inputs_out_of_bounds() {
        let spec = ProblemSpec::case_study();
        let x = State::default();
        assert!(matches!(spec.flow(&x, 3.1, 0.0), Err(Error::InputBound { name: "u", .. })));
        assert!(matches!(spec.flow(&x, 0.0, -3.1), Err(Error::InputBound { name: "d", .. })));
    }

    #[test]
    fn signed_distances() {
        let spec = ProblemSpec::case_study();
        assert_eq!(spec.reach_distance(&State::new(0.25, 0.0, 0.3)), 0.0);
        assert_eq!(spec.reach_distance(&State::new(0.0, 0.0, 0.0)), -0.25);
        let probe = State::new(0.078, -0.51, 0.20);
        assert_relative_eq!(spec.reach_distance(&probe), 0.26593, epsilon = 1e-5);
        assert_eq!(spec.avoid_distance(&State::new(1.0, 0.0, 0.0)), 0.0);
        assert_eq!(spec.avoid_distance(&State::new(0.0, 0.0, 0.0)), -1.0);
        assert_relative_eq!(spec.avoid_distance(&probe), -0.48407, epsilon = 1e-5);
    }

    #[test]
    fn distances_differ_by_radius_gap() {
        let spec = ProblemSpec::case_study();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (x, _) = random_pair(&mut rng);
            assert_relative_eq!(spec.reach_distance(&x) - spec.avoid_distance(&x), 0.75, epsilon = 1e-14);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let spec = ProblemSpec::case_study();
        assert_eq!(spec.hamiltonian(&State::new(0.3, -0.2, 0.7), &Costate::default()), 0.0);
        let h = spec.hamiltonian(&State::new(0.5, 0.5, 0.25), &Costate::new(1.0, 0.0, 1.0));
        let expected = -0.75 - 3.0 * (0.5 - 1.0 / TWO_PI).abs() + 3.0 / TWO_PI;
        assert_relative_eq!(h, expected, epsilon = 1e-15);
        assert_relative_eq!(h, -1.29508, epsilon = 1e-5);
    }

    #[test]
    fn printed_form_differs_only_for_negative_p3() {
        let spec = ProblemSpec::case_study();
        let x = State::new(0.1, 0.2, 0.3);
        let p = Costate::new(0.4, -0.1, 1.0);
        assert_eq!(
            spec.hamiltonian(&x, &p),
            spec.hamiltonian_with(&x, &p, HamiltonianForm::AsPrinted)
        );
        let q = Costate::new(0.4, -0.1, -1.0);
        let gap = spec.hamiltonian(&x, &q) - spec.hamiltonian_with(&x, &q, HamiltonianForm::AsPrinted);
        assert_relative_eq!(gap, 6.0 / TWO_PI, epsilon = 1e-14);
    }

    #[test]
    fn hamiltonian_matches_corner_minimax() {
        let spec = ProblemSpec::case_study();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (x, p) = random_pair(&mut rng);
            let oracle = [-spec.u_max, spec.u_max]
                .iter()
                .map(|&u| {
                    [-spec.d_max, spec.d_max]
                        .iter()
                        .map(|&d| dot(&p, spec.flow(&x, u, d).unwrap()))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((spec.hamiltonian(&x, &p) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_input_examples() {
        let spec = ProblemSpec::case_study();
        let (u, d) = spec.optimal_inputs(&State::new(0.2, 0.4, 0.1), &Costate::new(0.0, 0.0, 1.0));
        assert_eq!((u, d), (3.0, 3.0));
        let (u, _) = spec.optimal_inputs(&State::new(0.2, 0.4, 0.1), &Costate::new(0.0, 0.0, -1.0));
        assert_eq!(u, -3.0);
        // tie set resolves to the positive bound
        let (u, d) = spec.optimal_inputs(&State::default(), &Costate::default());
        assert_eq!((u, d), (3.0, -3.0));
    }

    #[test]
    fn saddle_point_brute_force() {
        let spec = ProblemSpec::case_study();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let (x, p) = random_pair(&mut rng);
            let (us, ds) = spec.optimal_inputs(&x, &p);
            let star = dot(&p, spec.flow(&x, us, ds).unwrap());
            assert!((star - spec.hamiltonian(&x, &p)).abs() < 1e-12);
            for u in [-spec.u_max, 0.0, spec.u_max] {
                assert!(star >= dot(&p, spec.flow(&x, u, ds).unwrap()) - 1e-12);
            }
            for d in [-spec.d_max, 0.0, spec.d_max] {
                assert!(star <= dot(&p, spec.flow(&x, us, d).unwrap()) + 1e-12);
            }
        }
    }

    #[test]
    fn homogeneity_and_scale_invariance() {
        let spec = ProblemSpec::case_study();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let (x, p) = random_pair(&mut rng);
            let lambda = rng.gen_range(0.01..50.0);
            let a = spec.hamiltonian(&x, &p.scaled(lambda));
            let b = lambda * spec.hamiltonian(&x, &p);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            assert_eq!(spec.optimal_inputs(&x, &p), spec.optimal_inputs(&x, &p.scaled(lambda)));
        }
    }

    #[test]
    fn flow_is_affine_in_inputs() {
        let spec = ProblemSpec::case_study();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (x, _) = random_pair(&mut rng);
            let f0 = spec.flow(&x, 0.0, 0.0).unwrap();
            let fu = spec.flow(&x, 1.0, 0.0).unwrap();
            let fd = spec.flow(&x, 0.0, 1.0).unwrap();
            let (u, d) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let f = spec.flow(&x, u, d).unwrap();
            for i in 0..3 {
                let affine = f0[i] + u * (fu[i] - f0[i]) + d * (fd[i] - f0[i]);
                assert!((f[i] - affine).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dissipation_examples() {
        let spec = ProblemSpec::case_study();
        let g = Grid::new(vec![-1.0, -1.0, 0.0], vec![1.0, 1.0, 1.0], vec![21; 3], vec![false, false, true]).unwrap();
        let a = spec.dissipation_bounds(&g);
        assert_relative_eq!(a[0], 4.5, epsilon = 1e-15);
        assert_relative_eq!(a[1], 3.75, epsilon = 1e-15);
        assert_relative_eq!(a[2], 0.95493, epsilon = 1e-5);

        let still = ProblemSpec { u_max: 0.0, d_max: 0.0, ..spec };
        assert_eq!(still.dissipation_bounds(&g)[2], 0.0);

        let half = Grid::new(vec![-0.5, -0.5, 0.0], vec![0.5, 0.5, 1.0], vec![21; 3], vec![false, false, true]).unwrap();
        assert_relative_eq!(spec.dissipation_bounds(&half)[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn validation() {
        assert!(ProblemSpec::case_study().validate().is_ok());
        let bad = ProblemSpec { r1: 1.0, r2: 1.0, ..ProblemSpec::case_study() };
        assert!(bad.validate().is_err());
        let bad = ProblemSpec { v_e: -1.0, ..ProblemSpec::case_study() };
        assert!(bad.validate().is_err());
    }
}
