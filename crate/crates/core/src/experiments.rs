//! File-based experiment stages and the run configuration that drives them.
//!
//! Every stage reads its inputs from disk, writes its outputs under an output
//! directory, and takes all randomness from seeds derived from
//! `sampling.seed`. Outputs are written under a `.partial` name and renamed
//! into place when complete.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{self, partial_path, write_file_atomic};
use crate::corrector::{correct_series, evaluate_correction, CorrectionReport};
use crate::error::{Error, Result};
use crate::game::ProblemSpec;
use crate::gp::{self, cross_validate, fit, linear_baseline, FitOptions, GpModel, HyperBounds, KernelKind};
use crate::grid::Grid;
use crate::hybrid::{select, Decision, SwitchConfig};
use crate::rollout::{self, fmt_f64, sample_errors, Policy, RolloutConfig, SampleRegion};
use crate::solver::{solve_qvi, SolverConfig, ValueSeries};

pub const VALUE_DIR: &str = "value";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const FIT_REPORT_CSV: &str = "fit_report.csv";
pub const MODEL_DIR: &str = "model";
pub const LOW_FIDELITY_MODEL_DIR: &str = "model_low";
pub const VALIDATE_CSV: &str = "validate.csv";
pub const CORRECTED_DIR: &str = "corrected";
pub const CORRECTION_REPORT: &str = "correction_report.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Training sets smaller than this are flagged in the fit report.
pub const SMALL_N: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lower: vec![-1.0, -1.0, 0.0],
            upper: vec![1.0, 1.0, 1.0],
            counts: vec![21, 21, 21],
            periodic: vec![false, false, true],
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.lower.clone(), self.upper.clone(), self.counts.clone(), self.periodic.clone())
    }
}

fn default_n_train() -> usize {
    1000
}
fn default_n_valid() -> usize {
    100
}
fn default_n_correct() -> usize {
    1000
}
fn default_time_range() -> [f64; 2] {
    [-1.0, 0.0]
}
fn default_dt() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    /// Fresh draws for the prediction-interval check.
    #[serde(default = "default_n_valid")]
    pub n_valid: usize,
    /// Fresh draws for the correction evaluation.
    #[serde(default = "default_n_correct")]
    pub n_correct: usize,
    pub seed: u64,
    #[serde(default = "default_time_range")]
    pub time_range: [f64; 2],
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub clamp: bool,
}

impl SamplingConfig {
    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig { dt: self.dt, clamp: self.clamp }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub kernels: Vec<KernelKind>,
    pub restarts: usize,
    pub folds: usize,
    pub bounds: HyperBounds,
    /// Kernel of the model saved for validation and correction.
    pub model_kernel: KernelKind,
    /// Size of the additional model fitted on the first samples only; 0
    /// disables it.
    pub n_low_fidelity: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            kernels: KernelKind::ALL.to_vec(),
            restarts: 8,
            folds: 5,
            bounds: HyperBounds::default(),
            model_kernel: KernelKind::RationalQuadratic,
            n_low_fidelity: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub v_e_values: Vec<f64>,
    pub v_p_values: Vec<f64>,
    pub retrain: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let axis = vec![0.5, 0.625, 0.75, 0.875, 1.0, 1.25, 1.5];
        Self { v_e_values: axis.clone(), v_p_values: axis, retrain: true }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("v_e_values", &self.v_e_values), ("v_p_values", &self.v_p_values)] {
            if list.is_empty() || list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config(format!("sweep.{name} must be a non-empty list of positive numbers")));
            }
        }
        if !self.retrain {
            return Err(Error::Config("sweep.retrain = false is not supported; every pair is refit".into()));
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.v_e_values
            .iter()
            .flat_map(|&e| self.v_p_values.iter().map(move |&p| (e, p)))
            .collect()
    }
}

fn default_solver() -> SolverConfig {
    SolverConfig { monotone_tube: true, ..SolverConfig::default() }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/case_study")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_solver")]
    pub solver: SolverConfig,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub hybrid: SwitchConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// The case-study configuration with the given seed.
    pub fn case_study(seed: u64) -> Self {
        Self {
            problem: ProblemSpec::case_study(),
            grid: GridConfig::default(),
            solver: default_solver(),
            sampling: SamplingConfig {
                n_train: default_n_train(),
                n_valid: default_n_valid(),
                n_correct: default_n_correct(),
                seed,
                time_range: default_time_range(),
                dt: default_dt(),
                clamp: false,
            },
            gp: GpConfig::default(),
            hybrid: SwitchConfig::default(),
            sweep: SweepSpec::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.problem.validate().map_err(cfg)?;
        let grid = self.grid.build().map_err(cfg)?;
        if grid.dims() != 3 {
            return Err(Error::Config("grid must be three-dimensional".into()));
        }
        self.solver.validate().map_err(cfg)?;
        let s = &self.sampling;
        for (name, n) in [("n_train", s.n_train), ("n_valid", s.n_valid), ("n_correct", s.n_correct)] {
            if n == 0 {
                return Err(Error::Config(format!("sampling.{name} must be at least 1")));
            }
        }
        let [t0, t1] = s.time_range;
        if !(t0 <= t1 && t0 >= -self.problem.horizon && t1 <= 0.0) {
            return Err(Error::Config(format!(
                "sampling.time_range {:?} must be an interval within [-{}, 0]",
                s.time_range, self.problem.horizon
            )));
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::Config("sampling.dt must be positive".into()));
        }
        if self.gp.kernels.is_empty() {
            return Err(Error::Config("gp.kernels must not be empty".into()));
        }
        if self.gp.folds < 2 {
            return Err(Error::Config("gp.folds must be at least 2".into()));
        }
        self.gp.bounds.validate().map_err(cfg)?;
        self.hybrid.validate().map_err(cfg)?;
        self.sweep.validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sampling.seed = seed;
        self
    }

    pub fn region(&self) -> SampleRegion {
        let g = &self.grid;
        SampleRegion {
            lower: [g.lower[0], g.lower[1], g.lower[2]],
            upper: [g.upper[0], g.upper[1], g.upper[2]],
            time_range: self.sampling.time_range,
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.sampling.seed)
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            restarts: self.gp.restarts,
            seed: self.seeds().fit,
            bounds: self.gp.bounds,
            ..FitOptions::default()
        }
    }
}

/// Per-stage seeds. Training draws use the base seed itself; every other
/// stage gets its own stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub base: u64,
    pub train: u64,
    pub validation: u64,
    pub correction: u64,
    pub fit: u64,
    pub folds: u64,
}

impl Seeds {
    pub fn derive(base: u64) -> Self {
        let d = |stage: &str| {
            let mut h = Sha256::new();
            h.update(b"reachgp/");
            h.update(stage.as_bytes());
            h.update(base.to_le_bytes());
            u64::from_le_bytes(h.finalize()[..8].try_into().expect("eight bytes"))
        };
        Self {
            base,
            train: base,
            validation: d("validation"),
            correction: d("correction"),
            fit: d("fit"),
            folds: d("folds"),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_csv_atomic(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let tmp = partial_path(path);
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Solves the configured game and writes the value archive.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let series = solve_qvi(&cfg.problem, &cfg.grid.build()?, &cfg.solver)?;
    let path = out.join(VALUE_DIR);
    archive::save_series(&path, &series)?;
    Ok(path)
}

fn check_archive(cfg: &RunConfig, series: &ValueSeries) -> Result<()> {
    if series.spec != cfg.problem || series.grid != cfg.grid.build()? {
        return Err(Error::Incompatible("value archive was solved for a different problem or grid".into()));
    }
    Ok(())
}

/// Draws `n_train` error samples under the archive's policies.
pub fn cmd_sample(cfg: &RunConfig, archive_path: &Path, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out)?;
    let series = archive::load_series(archive_path)?;
    check_archive(cfg, &series)?;
    let policy = Policy::new(&series)?;
    let set = sample_errors(&policy, &cfg.problem, cfg.sampling.n_train, cfg.seeds().train, &cfg.region(), &cfg.sampling.rollout())?;
    let path = out.join(SAMPLES_CSV);
    let tmp = partial_path(&path);
    rollout::write_samples_csv(&tmp, &set.samples)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub const FIT_HEADER: [&str; 12] = [
    "model",
    "n",
    "folds",
    "cv_rmse",
    "length_scale",
    "signal_variance",
    "noise_variance",
    "alpha",
    "beta",
    "seed",
    "small_n",
    "status",
];

#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub model: String,
    pub n: usize,
    pub cv_rmse: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub rows: Vec<FitRow>,
    pub report: PathBuf,
    pub model: Option<PathBuf>,
    pub low_fidelity_model: Option<PathBuf>,
}

fn gp_row(name: &str, n: usize, folds: usize, seed: u64, r: &Result<gp::GpCv>) -> (FitRow, Vec<String>) {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let small = (n < SMALL_N).to_string();
    match r {
        Ok(r) => {
            let k = r.model.kernel();
            let row = vec![
                name.to_owned(),
                n.to_string(),
                folds.to_string(),
                fmt_f64(r.cv.pooled_rmse),
                fmt_f64(k.length_scale),
                fmt_f64(k.signal_variance),
                fmt_f64(r.model.noise_variance()),
                opt(k.alpha),
                fmt_f64(r.model.beta()),
                seed.to_string(),
                small,
                "ok".into(),
            ];
            (FitRow { model: name.into(), n, cv_rmse: Some(r.cv.pooled_rmse), status: "ok".into() }, row)
        }
        Err(e) => {
            let status = format!("failed: {e}");
            let mut row = vec![name.to_owned(), n.to_string(), folds.to_string()];
            row.extend(std::iter::repeat_n(String::new(), 6));
            row.extend([seed.to_string(), small, status.clone()]);
            (FitRow { model: name.into(), n, cv_rmse: None, status }, row)
        }
    }
}

/// Cross-validates every configured kernel and the linear baseline, and
/// saves the full-data model of `gp.model_kernel` (plus the low-fidelity
/// model when configured).
pub fn cmd_fit(cfg: &RunConfig, samples_path: &Path, out: &Path) -> Result<FitSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    let samples = rollout::read_samples_csv(samples_path)?;
    let (x, y) = (gp::inputs_of(&samples), gp::targets_of(&samples));
    let n = x.len();
    let folds = cfg.gp.folds;
    let seeds = cfg.seeds();
    let options = cfg.fit_options();

    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut saved = None;
    for &kind in &cfg.gp.kernels {
        let r = cross_validate(&x, &y, folds, kind, seeds.folds, &options);
        let (row, rec) = gp_row(kind.name(), n, folds, options.seed, &r);
        rows.push(row);
        records.push(rec);
        if kind == cfg.gp.model_kernel {
            saved = r.ok().map(|r| r.model);
        }
    }
    if saved.is_none() && !cfg.gp.kernels.contains(&cfg.gp.model_kernel) {
        saved = fit(&x, &y, cfg.gp.model_kernel, &options).ok();
    }

    let mut low = None;
    let n_low = cfg.gp.n_low_fidelity;
    if n_low > 0 && n_low < n {
        let name = format!("{}_low_fidelity", cfg.gp.model_kernel.name());
        let r = cross_validate(&x[..n_low], &y[..n_low], folds, cfg.gp.model_kernel, seeds.folds, &options);
        let (row, rec) = gp_row(&name, n_low, folds, options.seed, &r);
        rows.push(row);
        records.push(rec);
        low = r.ok().map(|r| r.model);
    }

    let lin = linear_baseline(&x, &y, folds, seeds.folds);
    let small = (n < SMALL_N).to_string();
    match &lin {
        Ok((m, cv)) => {
            let status = if m.rank_deficient { "ok (rank deficient, minimum norm)" } else { "ok" };
            let mut rec = vec!["linear".into(), n.to_string(), folds.to_string(), fmt_f64(cv.pooled_rmse)];
            rec.extend(std::iter::repeat_n(String::new(), 5));
            rec.extend([String::new(), small, status.into()]);
            records.push(rec);
            rows.push(FitRow { model: "linear".into(), n, cv_rmse: Some(cv.pooled_rmse), status: status.into() });
        }
        Err(e) => {
            let status = format!("failed: {e}");
            let mut rec = vec!["linear".into(), n.to_string(), folds.to_string()];
            rec.extend(std::iter::repeat_n(String::new(), 7));
            rec.extend([small, status.clone()]);
            records.push(rec);
            rows.push(FitRow { model: "linear".into(), n, cv_rmse: None, status });
        }
    }
    if rows.iter().all(|r| r.cv_rmse.is_none()) {
        return Err(Error::FitFailed(rows.len()));
    }

    let report = out.join(FIT_REPORT_CSV);
    write_csv_atomic(&report, &FIT_HEADER, &records)?;
    let model = match saved {
        Some(m) => {
            let p = out.join(MODEL_DIR);
            archive::save_model(&p, &m.with_provenance(cfg.problem))?;
            Some(p)
        }
        None => None,
    };
    let low_fidelity_model = match low {
        Some(m) => {
            let p = out.join(LOW_FIDELITY_MODEL_DIR);
            archive::save_model(&p, &m.with_provenance(cfg.problem))?;
            Some(p)
        }
        None => None,
    };
    Ok(FitSummary { rows, report, model, low_fidelity_model })
}

pub const VALIDATE_HEADER: [&str; 13] = [
    "kind", "x1", "x2", "x3", "t", "v_tilde", "v_rollout", "v_hat", "std", "lower", "upper", "covered", "decision",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSummary {
    pub path: PathBuf,
    pub n: usize,
    pub covered: usize,
    pub coverage: f64,
}

/// Rollout values on fresh draws against `V̂ = Ṽ − ε̂` and its 95% interval
/// `V̂ ± 1.96 (σ² + σ_n²)^½`.
///
/// The last row has `kind = coverage` and the empirical coverage in the
/// `covered` column.
pub fn cmd_validate(cfg: &RunConfig, archive_path: &Path, model_path: &Path, out: &Path) -> Result<ValidationSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    let series = archive::load_series(archive_path)?;
    check_archive(cfg, &series)?;
    let model = archive::load_model(model_path)?;
    let policy = Policy::new(&series)?;
    let set = sample_errors(&policy, &cfg.problem, cfg.sampling.n_valid, cfg.seeds().validation, &cfg.region(), &cfg.sampling.rollout())?;
    let mut rows = Vec::with_capacity(set.samples.len() + 1);
    let mut covered = 0;
    for s in &set.samples {
        let p = model.predict(&s.input());
        let v_hat = s.v_tilde - p.mean;
        let half = 1.96 * (p.std * p.std + model.noise_variance()).sqrt();
        let (lo, hi) = (v_hat - half, v_hat + half);
        let inside = s.v_rollout >= lo && s.v_rollout <= hi;
        covered += inside as usize;
        let decision = match select(v_hat, p.std, &cfg.hybrid) {
            Decision::UseLeastRestrictive => "least_restrictive",
            Decision::UseSafety => "safety",
        };
        rows.push(vec![
            "sample".into(),
            fmt_f64(s.x1),
            fmt_f64(s.x2),
            fmt_f64(s.x3),
            fmt_f64(s.t),
            fmt_f64(s.v_tilde),
            fmt_f64(s.v_rollout),
            fmt_f64(v_hat),
            fmt_f64(p.std),
            fmt_f64(lo),
            fmt_f64(hi),
            (inside as u8).to_string(),
            decision.into(),
        ]);
    }
    let n = set.samples.len();
    let coverage = covered as f64 / n as f64;
    let mut summary = vec!["coverage".to_string()];
    summary.extend(std::iter::repeat_n(String::new(), 10));
    summary.extend([fmt_f64(coverage), String::new()]);
    rows.push(summary);
    let path = out.join(VALIDATE_CSV);
    write_csv_atomic(&path, &VALIDATE_HEADER, &rows)?;
    Ok(ValidationSummary { path, n, covered, coverage })
}

/// Writes the corrected archive under `out/<dir>` and the evaluation
/// report as `out/<report>`.
fn correct_into(cfg: &RunConfig, series: &ValueSeries, model: &GpModel, out: &Path, dir: &str, report: &str) -> Result<CorrectionReport> {
    let corrected = correct_series(series, model)?;
    archive::save_series(&out.join(dir), &corrected.series)?;
    let r = evaluate_correction(
        series,
        &corrected.series,
        cfg.sampling.n_correct,
        cfg.seeds().correction,
        &cfg.region(),
        &cfg.sampling.rollout(),
    )?;
    let mut text = serde_json::to_string_pretty(&CorrectionFile { report: r.clone(), obstacle_violations: corrected.obstacle_violations })?;
    text.push('\n');
    write_file_atomic(&out.join(report), text.as_bytes())?;
    Ok(r)
}

#[derive(Serialize)]
struct CorrectionFile {
    #[serde(flatten)]
    report: CorrectionReport,
    obstacle_violations: usize,
}

pub fn cmd_correct(cfg: &RunConfig, archive_path: &Path, model_path: &Path, out: &Path) -> Result<CorrectionReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let series = archive::load_series(archive_path)?;
    check_archive(cfg, &series)?;
    let model = archive::load_model(model_path)?;
    correct_into(cfg, &series, &model, out, CORRECTED_DIR, CORRECTION_REPORT)
}

pub const SWEEP_HEADER: [&str; 6] = ["v_e", "v_p", "gpr_cv_rmse", "uncorrected_rmse", "resampled", "status"];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub v_e: f64,
    pub v_p: f64,
    pub gpr_cv_rmse: Option<f64>,
    pub uncorrected_rmse: Option<f64>,
    pub resampled: usize,
    pub status: String,
}

/// One row of the dynamics-mismatch sweep: policies from the nominal
/// archive, rollouts under speeds `(v_e, v_p)`, and a fresh GP fit.
pub fn sweep_pair(cfg: &RunConfig, series: &ValueSeries, v_e: f64, v_p: f64) -> SweepRow {
    let run = || -> Result<(f64, f64, usize)> {
        let dynamics = ProblemSpec { v_e, v_p, ..cfg.problem };
        let policy = Policy::new(series)?;
        let set = sample_errors(&policy, &dynamics, cfg.sampling.n_train, cfg.seeds().train, &cfg.region(), &cfg.sampling.rollout())?;
        let (x, y) = (gp::inputs_of(&set.samples), gp::targets_of(&set.samples));
        let r = cross_validate(&x, &y, cfg.gp.folds, cfg.gp.model_kernel, cfg.seeds().folds, &cfg.fit_options())?;
        Ok((r.cv.pooled_rmse, set.rmse(), set.resampled))
    };
    match run() {
        Ok((cv, unc, resampled)) => SweepRow { v_e, v_p, gpr_cv_rmse: Some(cv), uncorrected_rmse: Some(unc), resampled, status: "ok".into() },
        Err(e) => SweepRow { v_e, v_p, gpr_cv_rmse: None, uncorrected_rmse: None, resampled: 0, status: format!("failed: {e}") },
    }
}

pub fn cmd_sweep(cfg: &RunConfig, archive_path: &Path, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let series = archive::load_series(archive_path)?;
    check_archive(cfg, &series)?;
    let pairs = cfg.sweep.pairs();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(pairs.len());
    let mut rows: Vec<Option<SweepRow>> = vec![None; pairs.len()];
    std::thread::scope(|scope| {
        for (w, chunk) in rows.chunks_mut(pairs.len().div_ceil(workers)).enumerate() {
            let (series, pairs) = (&series, &pairs);
            let start = w * pairs.len().div_ceil(workers);
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let (e, p) = pairs[start + k];
                    *slot = Some(sweep_pair(cfg, series, e, p));
                }
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every pair ran")).collect();
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            vec![fmt_f64(r.v_e), fmt_f64(r.v_p), opt(r.gpr_cv_rmse), opt(r.uncorrected_rmse), r.resampled.to_string(), r.status.clone()]
        })
        .collect();
    write_csv_atomic(&out.join(SWEEP_CSV), &SWEEP_HEADER, &records)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub stages: Vec<String>,
    pub files: Vec<FileHash>,
}

/// A pipeline failure and the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Sorted relative paths and SHA-256 digests of every completed file under
/// `root`, excluding the run manifest itself.
pub fn hash_tree(root: &Path) -> Result<Vec<FileHash>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileHash>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            let name = e.file_name().to_string_lossy().into_owned();
            if name.ends_with(".partial") || (dir == root && name == RUN_MANIFEST) {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let rel = path.strip_prefix(root).expect("walk stays under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push(FileHash { path: rel, sha256: hex::encode(Sha256::digest(&bytes)) });
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// solve → sample → fit → validate → correct, then a manifest of seeds and
/// output hashes.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> std::result::Result<RunManifest, StageError> {
    let at = |stage: &'static str| move |error: Error| StageError { stage, error };
    cfg.validate().map_err(at("config"))?;
    ensure_dir(out).map_err(at("config"))?;
    let mut stages = Vec::new();

    let value = cmd_solve(cfg, out).map_err(at("solve"))?;
    stages.push("solve".to_string());
    let samples = cmd_sample(cfg, &value, out).map_err(at("sample"))?;
    stages.push("sample".to_string());
    let fitted = cmd_fit(cfg, &samples, out).map_err(at("fit"))?;
    stages.push("fit".to_string());
    let model = fitted.model.ok_or_else(|| StageError {
        stage: "fit",
        error: Error::FitFailed(cfg.gp.restarts.max(1)),
    })?;
    cmd_validate(cfg, &value, &model, out).map_err(at("validate"))?;
    stages.push("validate".to_string());

    let series = archive::load_series(&value).map_err(at("correct"))?;
    let m = archive::load_model(&model).map_err(at("correct"))?;
    correct_into(cfg, &series, &m, out, CORRECTED_DIR, CORRECTION_REPORT).map_err(at("correct"))?;
    if let Some(low) = &fitted.low_fidelity_model {
        let m = archive::load_model(low).map_err(at("correct"))?;
        correct_into(cfg, &series, &m, out, "corrected_low", "correction_report_low.json").map_err(at("correct"))?;
    }
    stages.push("correct".to_string());

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: RunConfig { output_dir: PathBuf::from("."), ..cfg.clone() },
        seeds: cfg.seeds(),
        stages,
        files: hash_tree(out).map_err(at("manifest"))?,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| StageError { stage: "manifest", error: e.into() })?;
    text.push('\n');
    write_file_atomic(&out.join(RUN_MANIFEST), text.as_bytes()).map_err(at("manifest"))?;
    Ok(manifest)
}

/// Reads the coverage summary row of a validation CSV.
pub fn read_coverage(path: &Path) -> Result<f64> {
    let mut r = csv::Reader::from_path(path)?;
    let mut coverage = None;
    for rec in r.records() {
        let rec = rec?;
        if rec.get(0) == Some("coverage") {
            coverage = rec.get(11).and_then(|s| s.parse().ok());
        }
    }
    coverage.ok_or_else(|| Error::archive(path, "no coverage row"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[sampling]\nseed = 7\n";

    #[test]
    fn minimal_config_is_the_case_study() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c, RunConfig::case_study(7));
        assert!(c.solver.monotone_tube);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::case_study(3);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_errors() {
        for text in [
            "[sampling]\nseed = 1\nn_trian = 5\n",
            "[sampling]\nseed = 1\n[problem]\nve = 1.0\n",
            "[sampling]\nseed = 1\n[solver]\ncfl = 0.5\ntube = true\n",
            "colour = 1\n[sampling]\nseed = 1\n",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(RunConfig::from_toml("[sampling]\nn_train = 5\n"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("").is_err());
    }

    #[test]
    fn invalid_blocks_are_config_errors() {
        for text in [
            "[sampling]\nseed = 1\nn_train = 0\n",
            "[sampling]\nseed = 1\n[problem]\nr1 = 1.0\nr2 = 0.5\n",
            "[sampling]\nseed = 1\ntime_range = [-2.0, 0.0]\n",
            "[sampling]\nseed = 1\n[gp]\nkernels = []\n",
            "[sampling]\nseed = 1\n[hybrid]\ndelta = 0.0\nsigma0 = 0.1\n",
            "[sampling]\nseed = 1\n[sweep]\nv_e_values = []\n",
        ] {
            let e = RunConfig::from_toml(text).unwrap_err();
            assert!(e.is_validation(), "{text}: {e}");
        }
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let s = Seeds::derive(1);
        assert_eq!(s, Seeds::derive(1));
        assert_eq!(s.train, 1);
        let all = [s.train, s.validation, s.correction, s.fit, s.folds];
        for i in 0..all.len() {
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_ne!(Seeds::derive(2).validation, s.validation);
    }

    #[test]
    fn sweep_pairs_cover_the_product() {
        let s = SweepSpec { v_e_values: vec![1.0, 2.0], v_p_values: vec![3.0, 4.0, 5.0], retrain: true };
        assert_eq!(s.pairs().len(), 6);
        assert_eq!(s.pairs()[0], (1.0, 3.0));
        assert_eq!(SweepSpec::default().pairs().len(), 49);
    }
}
