use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reachgp::experiments::{self as ex, RunConfig};
use reachgp::Error;

#[derive(Parser)]
#[command(name = "reachgp", version, about = "Reach-avoid value functions with GP error models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `sampling.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reach-avoid game and write the value archive.
    Solve(Common),
    /// Draw closed-loop error samples.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Fit and cross-validate the error models.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Check prediction intervals on fresh samples.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Build and evaluate the corrected value function.
    Correct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Refit the error model under perturbed vehicle speeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// solve, sample, fit, validate and correct in one run.
    Pipeline(Common),
}

fn setup(c: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn or_default(path: Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    path.unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve(c) => {
            let (cfg, out) = setup(&c)?;
            println!("{}", ex::cmd_solve(&cfg, &out)?.display());
        }
        Command::Sample { common, archive } => {
            let (cfg, out) = setup(&common)?;
            let archive = or_default(archive, &out, ex::VALUE_DIR);
            println!("{}", ex::cmd_sample(&cfg, &archive, &out)?.display());
        }
        Command::Fit { common, samples } => {
            let (cfg, out) = setup(&common)?;
            let samples = or_default(samples, &out, ex::SAMPLES_CSV);
            let s = ex::cmd_fit(&cfg, &samples, &out)?;
            for r in &s.rows {
                match r.cv_rmse {
                    Some(v) => println!("{:<28} n={:<5} cv_rmse={v:.5}", r.model, r.n),
                    None => println!("{:<28} n={:<5} {}", r.model, r.n, r.status),
                }
            }
        }
        Command::Validate { common, archive, model } => {
            let (cfg, out) = setup(&common)?;
            let archive = or_default(archive, &out, ex::VALUE_DIR);
            let model = or_default(model, &out, ex::MODEL_DIR);
            let v = ex::cmd_validate(&cfg, &archive, &model, &out)?;
            println!("coverage {}/{} = {:.3}", v.covered, v.n, v.coverage);
        }
        Command::Correct { common, archive, model } => {
            let (cfg, out) = setup(&common)?;
            let archive = or_default(archive, &out, ex::VALUE_DIR);
            let model = or_default(model, &out, ex::MODEL_DIR);
            let r = ex::cmd_correct(&cfg, &archive, &model, &out)?;
            println!("rmse uncorrected {:.5} corrected {:.5}", r.rmse_uncorrected, r.rmse_corrected);
        }
        Command::Sweep { common, archive } => {
            let (cfg, out) = setup(&common)?;
            let archive = or_default(archive, &out, ex::VALUE_DIR);
            for r in ex::cmd_sweep(&cfg, &archive, &out)? {
                println!("v_e={} v_p={} {}", r.v_e, r.v_p, r.status);
            }
        }
        Command::Pipeline(c) => {
            let (cfg, out) = setup(&c)?;
            match ex::cmd_pipeline(&cfg, &out) {
                Ok(m) => println!("{} files under {}", m.files.len(), out.display()),
                Err(e) => {
                    eprintln!("reachgp: stage {}", e.stage);
                    return Err(e.error);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reachgp: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
