//! On-disk formats: a directory holding `manifest.json` and raw
//! little-endian `f64` arrays.
//!
//! Archives are written under `<path>.partial` and renamed into place once
//! complete, so an interrupted write never leaves a half-finished archive at
//! `path`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::ProblemSpec;
use crate::gp::{GpModel, Hyperparameters, Input};
use crate::grid::{Grid, ScalarField};
use crate::solver::{SeriesLabel, SolverConfig, ValueSeries};

pub const MANIFEST: &str = "manifest.json";
const VALUE_FORMAT: &str = "reachgp-value-series";
const MODEL_FORMAT: &str = "reachgp-gp-model";
const VERSION: u32 = 1;

pub fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Writes a directory archive via `fill`, then moves it over `path`.
fn write_dir(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = partial_path(path);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    fill(&tmp)?;
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `contents` to `<path>.partial` and renames it onto `path`.
pub fn write_file_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::archive(
            path,
            format!("expected {} bytes ({expected} values), found {}", expected * 8, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
        .collect())
}

fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::archive(&path, e.to_string()))
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn check_format(dir: &Path, format: &str, version: u32, want: &str) -> Result<()> {
    if format != want || version != VERSION {
        return Err(Error::archive(dir, format!("expected {want} v{VERSION}, found {format} v{version}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridBlock {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    periodic: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValueManifest {
    format: String,
    version: u32,
    grid: GridBlock,
    problem: ProblemSpec,
    solver: SolverConfig,
    label: SeriesLabel,
    model_id: Option<String>,
    times: Vec<f64>,
    slices: Vec<String>,
}

pub fn save_series(path: &Path, series: &ValueSeries) -> Result<()> {
    series.validate()?;
    let g = &series.grid;
    let names: Vec<String> = (0..series.slices.len()).map(|k| format!("slice_{k:05}.bin")).collect();
    let manifest = ValueManifest {
        format: VALUE_FORMAT.into(),
        version: VERSION,
        grid: GridBlock {
            lower: g.lower().to_vec(),
            upper: g.upper().to_vec(),
            counts: g.counts().to_vec(),
            periodic: g.periodic().to_vec(),
        },
        problem: series.spec,
        solver: series.solver,
        label: series.label,
        model_id: series.model_id.clone(),
        times: series.times.clone(),
        slices: names.clone(),
    };
    write_dir(path, |dir| {
        write_manifest(dir, &manifest)?;
        for (name, slice) in names.iter().zip(&series.slices) {
            write_f64s(&dir.join(name), slice.values())?;
        }
        Ok(())
    })
}

pub fn load_series(path: &Path) -> Result<ValueSeries> {
    let m: ValueManifest = read_manifest(path)?;
    check_format(path, &m.format, m.version, VALUE_FORMAT)?;
    let grid = Grid::new(m.grid.lower, m.grid.upper, m.grid.counts, m.grid.periodic)?;
    m.problem.validate()?;
    m.solver.validate()?;
    if m.slices.len() != m.times.len() {
        return Err(Error::archive(path, format!("{} slice files for {} times", m.slices.len(), m.times.len())));
    }
    let slices = m
        .slices
        .iter()
        .map(|name| {
            if name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(Error::archive(path, format!("invalid slice file name {name:?}")));
            }
            ScalarField::new(&grid, read_f64s(&path.join(name), grid.len())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let series = ValueSeries {
        grid,
        spec: m.problem,
        times: m.times,
        slices,
        label: m.label,
        solver: m.solver,
        model_id: m.model_id,
    };
    series.validate().map_err(|e| Error::archive(path, e.to_string()))?;
    Ok(series)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    format: String,
    version: u32,
    model_id: String,
    hyperparameters: Hyperparameters,
    beta: f64,
    jitter: f64,
    seed: Option<u64>,
    n: usize,
    provenance: Option<ProblemSpec>,
    train_inputs: String,
    train_targets: String,
    weights: String,
}

pub fn save_model(path: &Path, model: &GpModel) -> Result<()> {
    let manifest = ModelManifest {
        format: MODEL_FORMAT.into(),
        version: VERSION,
        model_id: model.id(),
        hyperparameters: *model.hyperparameters(),
        beta: model.beta(),
        jitter: model.jitter(),
        seed: model.seed(),
        n: model.len(),
        provenance: model.provenance().copied(),
        train_inputs: "train_inputs.bin".into(),
        train_targets: "train_targets.bin".into(),
        weights: "weights.bin".into(),
    };
    write_dir(path, |dir| {
        write_manifest(dir, &manifest)?;
        let flat: Vec<f64> = model.train_inputs().iter().flatten().copied().collect();
        write_f64s(&dir.join(&manifest.train_inputs), &flat)?;
        write_f64s(&dir.join(&manifest.train_targets), model.train_targets())?;
        write_f64s(&dir.join(&manifest.weights), model.weights())
    })
}

pub fn load_model(path: &Path) -> Result<GpModel> {
    let m: ModelManifest = read_manifest(path)?;
    check_format(path, &m.format, m.version, MODEL_FORMAT)?;
    for name in [&m.train_inputs, &m.train_targets, &m.weights] {
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::archive(path, format!("invalid array file name {name:?}")));
        }
    }
    let flat = read_f64s(&path.join(&m.train_inputs), 4 * m.n)?;
    let inputs: Vec<Input> = flat.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    let targets = read_f64s(&path.join(&m.train_targets), m.n)?;
    let weights = read_f64s(&path.join(&m.weights), m.n)?;
    let model = GpModel::from_parts(m.hyperparameters, m.beta, m.jitter, m.seed, inputs, targets, weights, m.provenance)?;
    if model.id() != m.model_id {
        return Err(Error::archive(path, format!("model id {} does not match contents ({})", m.model_id, model.id())));
    }
    Ok(model)
}
