use std::fs;
use std::path::Path;

use reachgp::archive;
use reachgp::experiments::{self as ex, RunConfig};
use reachgp::gp::KernelKind;
use reachgp::rollout::{read_samples_csv, write_samples_csv, ErrorSample, SAMPLE_HEADER};
use reachgp::{Error, State};

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

fn small(seed: u64) -> RunConfig {
    let mut c = RunConfig::case_study(seed);
    c.problem.horizon = 0.3;
    c.grid.counts = vec![11, 11, 11];
    c.sampling.n_train = 40;
    c.sampling.n_valid = 15;
    c.sampling.n_correct = 20;
    c.sampling.time_range = [-0.3, 0.0];
    c.gp.kernels = vec![KernelKind::Exponential, KernelKind::RationalQuadratic];
    c.gp.restarts = 1;
    c.gp.n_low_fidelity = 0;
    c.sweep.v_e_values = vec![0.75, 1.5];
    c.sweep.v_p_values = vec![0.75];
    c
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn shipped_configs_parse() {
    let case_study = RunConfig::load(&Path::new(ROOT).join("configs/case_study.toml")).unwrap();
    assert_eq!(case_study, RunConfig::case_study(1).with_seed(case_study.sampling.seed));
    RunConfig::load(&Path::new(ROOT).join("configs/quick.toml")).unwrap();
}

#[test]
fn golden_headers() {
    let cfg = small(2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let value = ex::cmd_solve(&cfg, out).unwrap();
    let samples = ex::cmd_sample(&cfg, &value, out).unwrap();
    assert_eq!(header(&samples), SAMPLE_HEADER);
    assert_eq!(SAMPLE_HEADER, ["x1", "x2", "x3", "t", "v_tilde", "v_rollout", "eps_tilde"]);

    let fit = ex::cmd_fit(&cfg, &samples, out).unwrap();
    assert_eq!(header(&fit.report), ex::FIT_HEADER);
    assert_eq!(
        ex::FIT_HEADER,
        ["model", "n", "folds", "cv_rmse", "length_scale", "signal_variance", "noise_variance", "alpha", "beta", "seed", "small_n", "status"]
    );
    let names: Vec<&str> = fit.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["exponential", "rational_quadratic", "linear"]);

    let model = fit.model.unwrap();
    let v = ex::cmd_validate(&cfg, &value, &model, out).unwrap();
    assert_eq!(header(&v.path), ex::VALIDATE_HEADER);
    assert_eq!(ex::read_coverage(&v.path).unwrap(), v.coverage);

    ex::cmd_correct(&cfg, &value, &model, out).unwrap();
    assert!(out.join(ex::CORRECTED_DIR).join(archive::MANIFEST).is_file());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join(ex::CORRECTION_REPORT)).unwrap()).unwrap();
    for key in ["rmse_uncorrected", "rmse_corrected", "n_validation", "model_id", "flipped_membership_count", "obstacle_violations"] {
        assert!(report.get(key).is_some(), "{key}");
    }

    let rows = ex::cmd_sweep(&cfg, &value, out).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(header(&out.join(ex::SWEEP_CSV)), ex::SWEEP_HEADER);
    assert!(rows.iter().all(|r| r.status == "ok"));

    let leftovers: Vec<_> = fs::read_dir(out).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".partial")).collect();
    assert!(leftovers.is_empty());
}

#[test]
fn sampling_is_bit_identical_across_runs() {
    let cfg = small(3);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let bytes: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let v = ex::cmd_solve(&cfg, d.path()).unwrap();
            fs::read(ex::cmd_sample(&cfg, &v, d.path()).unwrap()).unwrap()
        })
        .collect();
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[0].iter().filter(|&&b| b == b'\n').count(), cfg.sampling.n_train + 1);
}

#[test]
fn zero_horizon_gives_a_single_slice() {
    let mut cfg = small(1);
    cfg.problem.horizon = 0.0;
    cfg.sampling.time_range = [0.0, 0.0];
    let dir = tempfile::tempdir().unwrap();
    let s = archive::load_series(&ex::cmd_solve(&cfg, dir.path()).unwrap()).unwrap();
    assert_eq!(s.times, [0.0]);
}

#[test]
fn zero_samples_is_a_config_error() {
    let mut cfg = small(1);
    cfg.sampling.n_train = 0;
    let e = ex::cmd_sample(&cfg, Path::new("missing"), Path::new("unused")).unwrap_err();
    assert!(matches!(e, Error::Config(_)));
}

#[test]
fn tiny_training_sets_are_flagged() {
    let cfg = small(1);
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<ErrorSample> = (0..10)
        .map(|i| {
            let a = i as f64 / 10.0;
            ErrorSample::new(State::new(a - 0.5, 0.3 - a, a), -a / 4.0, 0.1 * a, 0.05 * a * a)
        })
        .collect();
    let path = dir.path().join("s.csv");
    write_samples_csv(&path, &samples).unwrap();
    let fit = ex::cmd_fit(&cfg, &path, dir.path()).unwrap();
    assert!(fit.rows.iter().all(|r| r.cv_rmse.is_some()), "{:?}", fit.rows);
    let mut r = csv::Reader::from_path(&fit.report).unwrap();
    for rec in r.records() {
        assert_eq!(&rec.unwrap()[10], "true");
    }
}

#[test]
fn constant_targets_give_near_zero_cv_error() {
    let mut cfg = small(1);
    cfg.gp.kernels = KernelKind::ALL.to_vec();
    let dir = tempfile::tempdir().unwrap();
    let samples: Vec<ErrorSample> = (0..30)
        .map(|i| {
            let r = |g: f64| (0.5 + i as f64 * g).fract();
            ErrorSample::new(State::new(2.0 * r(0.7549) - 1.0, 2.0 * r(0.5698) - 1.0, r(0.8192)), -r(0.6180), 0.2, 0.2 - 0.013)
        })
        .collect();
    let path = dir.path().join("s.csv");
    write_samples_csv(&path, &samples).unwrap();
    assert_eq!(read_samples_csv(&path).unwrap(), samples);
    let fit = ex::cmd_fit(&cfg, &path, dir.path()).unwrap();
    for r in &fit.rows {
        assert!(r.cv_rmse.unwrap() < 1e-6, "{r:?}");
    }
}

#[test]
fn archive_from_another_problem_is_rejected() {
    let cfg = small(1);
    let dir = tempfile::tempdir().unwrap();
    let value = ex::cmd_solve(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.problem.v_p = 1.0;
    assert!(matches!(ex::cmd_sample(&other, &value, dir.path()), Err(Error::Incompatible(_))));
}

#[test]
fn pipeline_reports_the_failing_stage() {
    let mut cfg = small(1);
    cfg.gp.kernels = vec![KernelKind::Exponential];
    cfg.gp.model_kernel = KernelKind::Exponential;
    let dir = tempfile::tempdir().unwrap();
    // a file where the output directory should be
    let blocker = dir.path().join("out");
    fs::write(&blocker, b"").unwrap();
    let e = ex::cmd_pipeline(&cfg, &blocker).unwrap_err();
    assert_eq!(e.stage, "config");

    let ok = ex::cmd_pipeline(&cfg, &dir.path().join("run")).unwrap();
    assert_eq!(ok.stages, ["solve", "sample", "fit", "validate", "correct"]);
    let text = fs::read_to_string(dir.path().join("run").join(ex::RUN_MANIFEST)).unwrap();
    let back: ex::RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ok);
    assert!(ok.files.windows(2).all(|w| w[0].path < w[1].path));
}
