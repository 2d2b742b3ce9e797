//! Run every stage from a config file into an output directory and list
//! the hashed outputs.
//!
//! ```bash
//! cargo run --release --example pipeline -- configs/quick.toml runs/quick
//! ```

use std::path::PathBuf;

use reachgp::experiments::{cmd_pipeline, RunConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/quick.toml".into()));
    let cfg = match RunConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| cfg.output_dir.clone());
    match cmd_pipeline(&cfg, &out) {
        Ok(m) => {
            println!("stages: {}", m.stages.join(" -> "));
            for f in &m.files {
                println!("{}  {}", &f.sha256[..16], f.path);
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
