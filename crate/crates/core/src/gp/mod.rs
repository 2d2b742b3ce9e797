//! Exact Gaussian-process regression with a constant mean, for use as a
//! model of the value function's numerical error over `(x1, x2, x3, t)`.

mod cv;
mod kernel;
mod linear;
mod optim;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::game::{ProblemSpec, State};
use crate::rollout::{sample_rng, ErrorSample};

pub use cv::{cross_validate, fold_assignment, CvResult, GpCv};
pub use kernel::{distance, KernelKind, KernelSpec};
pub use linear::{linear_baseline, LinearModel};

/// Regression input `(x1, x2, x3, t)`.
pub type Input = [f64; 4];

/// Diagonal jitter tried in turn until the Gram matrix factors.
pub const JITTER_SCHEDULE: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Pivots below this fraction of the largest diagonal entry count as a
/// failed factorization.
const PIVOT_FLOOR: f64 = 1e-13;

/// Smallest training set accepted by [`fit`].
pub const MIN_FIT_SAMPLES: usize = 5;

pub fn inputs_of(samples: &[ErrorSample]) -> Vec<Input> {
    samples.iter().map(ErrorSample::input).collect()
}

pub fn targets_of(samples: &[ErrorSample]) -> Vec<f64> {
    samples.iter().map(|s| s.eps_tilde).collect()
}

/// Lower Cholesky factor of `K + (σ_n² + jitter)I`, stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.l[j * self.n + i]
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Solves `L v = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let col = &self.l[j * n..(j + 1) * n];
            b[j] /= col[j];
            let v = b[j];
            for i in j + 1..n {
                b[i] -= col[i] * v;
            }
        }
    }

    /// Solves `Lᵀ x = v` in place.
    pub fn backward(&self, v: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let col = &self.l[i * n..(i + 1) * n];
            let mut s = v[i];
            for j in i + 1..n {
                s -= col[j] * v[j];
            }
            v[i] = s / col[i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        x
    }

    /// `L Lᵀ`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.lower(i, k) * self.lower(j, k)).sum();
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

/// Pairwise Euclidean distances between inputs, row-major.
struct Distances {
    n: usize,
    r: Vec<f64>,
}

impl Distances {
    fn new(inputs: &[Input]) -> Self {
        let n = inputs.len();
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = kernel::distance(&inputs[i], &inputs[j]);
                r[i * n + j] = d;
                r[j * n + i] = d;
            }
        }
        Self { n, r }
    }

    fn gram(&self, kernel: &KernelSpec, noise_variance: f64) -> Mat<f64> {
        let n = self.n;
        let mut k = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = kernel.eval_unchecked(self.r[i * n + j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(j, j)] += noise_variance;
        }
        k
    }
}

/// Factors `k` with escalating diagonal jitter. Returns the factor and the
/// faer decomposition it came from.
fn factorize(mut k: Mat<f64>) -> Result<(Factor, faer::linalg::solvers::Llt<f64>)> {
    let n = k.nrows();
    let scale = (0..n).map(|i| k[(i, i)]).fold(0.0f64, f64::max);
    let mut applied = 0.0;
    for &jitter in &JITTER_SCHEDULE {
        for i in 0..n {
            k[(i, i)] += jitter - applied;
        }
        applied = jitter;
        let Ok(llt) = k.llt(Side::Lower) else { continue };
        let lref = llt.L();
        let ok = (0..n).all(|i| {
            let p = lref[(i, i)];
            p.is_finite() && p * p >= PIVOT_FLOOR * scale
        });
        if !ok {
            continue;
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                l[j * n + i] = lref[(i, j)];
            }
        }
        return Ok((Factor { n, l, jitter }, llt));
    }
    Err(Error::Factorization { jitter: applied })
}

fn check_inputs(inputs: &[Input], targets: Option<&[f64]>) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("at least one training input is required".into()));
    }
    if inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GP inputs".into()));
    }
    if let Some(y) = targets {
        if y.len() != inputs.len() {
            return Err(Error::DimensionMismatch(format!("{} inputs but {} targets", inputs.len(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GP targets".into()));
        }
    }
    Ok(())
}

/// Factored `K + σ_n²I` over `inputs`.
pub fn gram(inputs: &[Input], kernel: &KernelSpec, noise_variance: f64) -> Result<Factor> {
    check_inputs(inputs, None)?;
    kernel.validate()?;
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance {noise_variance} must be non-negative")));
    }
    Ok(factorize(Distances::new(inputs).gram(kernel, noise_variance))?.0)
}

/// Kernel plus observation noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
}

impl Hyperparameters {
    /// `[log ℓ, log σ_f, log σ_n, (log α)]`.
    pub fn to_log(&self) -> Vec<f64> {
        let k = self.kernel.log_params();
        let mut v = vec![k[0], k[1], 0.5 * self.noise_variance.ln()];
        v.extend_from_slice(&k[2..]);
        v
    }

    pub fn from_log(kind: KernelKind, theta: &[f64]) -> Self {
        let mut k = vec![theta[0], theta[1]];
        k.extend_from_slice(&theta[3..]);
        Self {
            kernel: KernelSpec::from_log_params(kind, &k),
            noise_variance: (2.0 * theta[2]).exp(),
        }
    }
}

/// Log marginal likelihood and its gradient over [`Hyperparameters::to_log`].
#[derive(Clone, Debug, PartialEq)]
pub struct Lml {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub beta: f64,
    pub jitter: f64,
}

/// LML with the constant mean at its generalized-least-squares estimate.
pub fn log_marginal_likelihood(inputs: &[Input], targets: &[f64], hyper: &Hyperparameters) -> Result<Lml> {
    log_marginal_likelihood_with_mean(inputs, targets, hyper, None)
}

/// LML with the constant mean fixed to `beta`, or at its GLS estimate when
/// `None`. The gradient needs no correction for the estimated mean, since
/// the LML is stationary in `β` there.
pub fn log_marginal_likelihood_with_mean(
    inputs: &[Input],
    targets: &[f64],
    hyper: &Hyperparameters,
    beta: Option<f64>,
) -> Result<Lml> {
    check_inputs(inputs, Some(targets))?;
    hyper.kernel.validate()?;
    lml(&Distances::new(inputs), targets, hyper, beta)
}

fn lml(dist: &Distances, y: &[f64], hyper: &Hyperparameters, beta: Option<f64>) -> Result<Lml> {
    let n = dist.n;
    let (factor, llt) = factorize(dist.gram(&hyper.kernel, hyper.noise_variance))?;
    let (beta, alpha) = conditioned_weights(&factor, y, beta);
    let fit: f64 = y.iter().zip(&alpha).map(|(yi, ai)| (yi - beta) * ai).sum();
    let value = -0.5 * fit - 0.5 * factor.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // ½ tr((ααᵀ − K⁻¹) ∂K) per log-parameter
    let kinv = llt.inverse();
    let kind = hyper.kernel.kind;
    let mut kg = [0.0; 3];
    let mut acc = [0.0; 4];
    for j in 0..n {
        let col = kinv.col(j);
        for i in j..n {
            let w = alpha[i] * alpha[j] - col[i];
            let w = if i == j { w } else { 2.0 * w };
            hyper.kernel.eval_with_grad(dist.r[i * n + j], &mut kg);
            acc[0] += w * kg[0];
            acc[1] += w * kg[1];
            if kind == KernelKind::RationalQuadratic {
                acc[3] += w * kg[2];
            }
            if i == j {
                acc[2] += w * 2.0 * hyper.noise_variance;
            }
        }
    }
    let mut gradient: Vec<f64> = acc[..3].iter().map(|v| 0.5 * v).collect();
    if kind == KernelKind::RationalQuadratic {
        gradient.push(0.5 * acc[3]);
    }
    Ok(Lml { value, gradient, beta, jitter: factor.jitter })
}

/// `β` (GLS unless fixed) and `(K + σ_n²I)⁻¹(y − β)`.
fn conditioned_weights(factor: &Factor, y: &[f64], beta: Option<f64>) -> (f64, Vec<f64>) {
    let beta = beta.unwrap_or_else(|| {
        let a = factor.solve(y);
        let b = factor.solve(&vec![1.0; y.len()]);
        a.iter().sum::<f64>() / b.iter().sum::<f64>()
    });
    let centered: Vec<f64> = y.iter().map(|v| v - beta).collect();
    (beta, factor.solve(&centered))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

/// Box constraints on the log-hyperparameters, given in natural units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperBounds {
    pub length_scale: [f64; 2],
    pub signal_std: [f64; 2],
    pub noise_std: [f64; 2],
    pub alpha: [f64; 2],
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            length_scale: [0.01, 10.0],
            signal_std: [1e-4, 10.0],
            noise_std: [1e-8, 1.0],
            alpha: [0.1, 1e3],
        }
    }
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [
            ("length_scale", self.length_scale),
            ("signal_std", self.signal_std),
            ("noise_std", self.noise_std),
            ("alpha", self.alpha),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!("bounds for {name} must satisfy 0 < lower < upper")));
            }
        }
        Ok(())
    }

    /// Log-space bounds in [`Hyperparameters::to_log`] order.
    fn log_box(&self, kind: KernelKind) -> Vec<[f64; 2]> {
        let ln = |[a, b]: [f64; 2]| [a.ln(), b.ln()];
        let mut v = vec![ln(self.length_scale), ln(self.signal_std), ln(self.noise_std)];
        if kind == KernelKind::RationalQuadratic {
            v.push(ln(self.alpha));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub bounds: HyperBounds,
    pub max_iter: usize,
    /// Extra starting point tried before the random restarts.
    #[serde(skip)]
    pub warm_start: Option<Hyperparameters>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            bounds: HyperBounds::default(),
            max_iter: 200,
            warm_start: None,
        }
    }
}

/// A GP conditioned on its training data.
#[derive(Clone, Debug, PartialEq)]
pub struct GpModel {
    hyper: Hyperparameters,
    beta: f64,
    seed: Option<u64>,
    train_inputs: Vec<Input>,
    train_targets: Vec<f64>,
    factor: Factor,
    weights: Vec<f64>,
    provenance: Option<ProblemSpec>,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on the data, with the
    /// constant mean at its GLS estimate.
    pub fn condition(inputs: &[Input], targets: &[f64], hyper: Hyperparameters) -> Result<Self> {
        Self::condition_inner(inputs, targets, hyper, None, None)
    }

    fn condition_inner(
        inputs: &[Input],
        targets: &[f64],
        hyper: Hyperparameters,
        beta: Option<f64>,
        seed: Option<u64>,
    ) -> Result<Self> {
        check_inputs(inputs, Some(targets))?;
        hyper.kernel.validate()?;
        let (factor, _) = factorize(Distances::new(inputs).gram(&hyper.kernel, hyper.noise_variance))?;
        let (beta, weights) = conditioned_weights(&factor, targets, beta);
        Ok(Self {
            hyper,
            beta,
            seed,
            train_inputs: inputs.to_vec(),
            train_targets: targets.to_vec(),
            factor,
            weights,
            provenance: None,
        })
    }

    /// Rebuilds a stored model. The factor is recomputed with the recorded
    /// jitter, and the stored weights must match it exactly.
    pub(crate) fn from_parts(
        hyper: Hyperparameters,
        beta: f64,
        jitter: f64,
        seed: Option<u64>,
        train_inputs: Vec<Input>,
        train_targets: Vec<f64>,
        weights: Vec<f64>,
        provenance: Option<ProblemSpec>,
    ) -> Result<Self> {
        check_inputs(&train_inputs, Some(&train_targets))?;
        hyper.kernel.validate()?;
        if weights.len() != train_inputs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} training inputs",
                weights.len(),
                train_inputs.len()
            )));
        }
        let mut k = Distances::new(&train_inputs).gram(&hyper.kernel, hyper.noise_variance);
        for i in 0..k.nrows() {
            k[(i, i)] += jitter;
        }
        let llt = k.llt(Side::Lower).map_err(|_| Error::Factorization { jitter })?;
        let n = train_inputs.len();
        let lref = llt.L();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                l[j * n + i] = lref[(i, j)];
            }
        }
        let factor = Factor { n, l, jitter };
        Ok(Self { hyper, beta, seed, train_inputs, train_targets, factor, weights, provenance })
    }

    /// Records the problem whose error samples the model was trained on.
    pub fn with_provenance(mut self, spec: ProblemSpec) -> Self {
        self.provenance = Some(spec);
        self
    }

    pub fn provenance(&self) -> Option<&ProblemSpec> {
        self.provenance.as_ref()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.hyper.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.hyper.noise_variance
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_inputs.is_empty()
    }

    pub fn train_inputs(&self) -> &[Input] {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.train_targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let fit: f64 = self.train_targets.iter().zip(&self.weights).map(|(y, w)| (y - self.beta) * w).sum();
        let n = self.len() as f64;
        -0.5 * fit - 0.5 * self.factor.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    fn cross_covariance(&self, x: &Input) -> Vec<f64> {
        self.train_inputs
            .iter()
            .map(|z| self.hyper.kernel.eval_unchecked(kernel::distance(x, z)))
            .collect()
    }

    /// Posterior mean only; `O(n)` per query.
    pub fn predict_mean(&self, x: &Input) -> f64 {
        let mut s = 0.0;
        for (z, w) in self.train_inputs.iter().zip(&self.weights) {
            s += self.hyper.kernel.eval_unchecked(kernel::distance(x, z)) * w;
        }
        self.beta + s
    }

    pub fn predict(&self, x: &Input) -> Prediction {
        let mut v = self.cross_covariance(x);
        let mean = self.beta + v.iter().zip(&self.weights).map(|(k, w)| k * w).sum::<f64>();
        self.factor.forward(&mut v);
        let var = self.hyper.kernel.signal_variance - v.iter().map(|a| a * a).sum::<f64>();
        Prediction { mean, std: var.max(0.0).sqrt() }
    }

    pub fn predict_batch(&self, xs: &[Input]) -> Vec<Prediction> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Content hash over hyperparameters and training data.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.hyper).expect("hyperparameters serialize"));
        h.update(self.beta.to_le_bytes());
        h.update(self.factor.jitter.to_le_bytes());
        if let Some(spec) = &self.provenance {
            h.update(serde_json::to_vec(spec).expect("problem spec serializes"));
        }
        for x in self.train_inputs.iter().flatten().chain(&self.train_targets).chain(&self.weights) {
            h.update(x.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

pub fn predict(model: &GpModel, state: &State, t: f64) -> Prediction {
    model.predict(&[state.x1, state.x2, state.x3, t])
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Maximizes the LML over the log-hyperparameters by BFGS from several
/// seeded starting points, and conditions on the best.
///
/// Bounds are enforced by a logistic reparameterization of each
/// log-hyperparameter.
pub fn fit(inputs: &[Input], targets: &[f64], kind: KernelKind, options: &FitOptions) -> Result<GpModel> {
    check_inputs(inputs, Some(targets))?;
    if inputs.len() < MIN_FIT_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "GP fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            inputs.len()
        )));
    }
    options.bounds.validate()?;
    let dist = Distances::new(inputs);
    let bx = options.bounds.log_box(kind);
    let to_theta = |z: &[f64]| -> Vec<f64> { z.iter().zip(&bx).map(|(z, [lo, hi])| lo + (hi - lo) * logistic(*z)).collect() };
    let to_z = |theta: &[f64]| -> Vec<f64> {
        theta
            .iter()
            .zip(&bx)
            .map(|(t, [lo, hi])| {
                let u = ((t - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
                (u / (1.0 - u)).ln()
            })
            .collect()
    };
    let objective = |z: &[f64]| -> Option<(f64, Vec<f64>)> {
        let theta = to_theta(z);
        let hyper = Hyperparameters::from_log(kind, &theta);
        let l = lml(&dist, targets, &hyper, None).ok()?;
        let grad = z
            .iter()
            .zip(&bx)
            .zip(&l.gradient)
            .map(|((z, [lo, hi]), g)| {
                let s = logistic(*z);
                -g * (hi - lo) * s * (1.0 - s)
            })
            .collect();
        Some((-l.value, grad))
    };

    let mut starts = Vec::new();
    if let Some(w) = &options.warm_start {
        if w.kernel.kind == kind {
            starts.push(to_z(&w.to_log()));
        }
    }
    for r in 0..options.restarts {
        let mut rng = sample_rng(options.seed, r);
        let theta: Vec<f64> = bx.iter().map(|[lo, hi]| rng.gen_range(*lo..*hi)).collect();
        starts.push(to_z(&theta));
    }
    if starts.is_empty() {
        return Err(Error::InvalidParameter("GP fit needs at least one starting point".into()));
    }

    let bfgs_opts = optim::BfgsOptions { max_iter: options.max_iter, ..Default::default() };
    let mut best: Option<optim::Minimum> = None;
    for z0 in &starts {
        if let Some(m) = optim::bfgs(objective, z0, &bfgs_opts) {
            if best.as_ref().is_none_or(|b| m.f < b.f) {
                best = Some(m);
            }
        }
    }
    let best = best.ok_or(Error::FitFailed(starts.len()))?;
    let hyper = Hyperparameters::from_log(kind, &to_theta(&best.x));
    GpModel::condition_inner(inputs, targets, hyper, None, Some(options.seed))
}
