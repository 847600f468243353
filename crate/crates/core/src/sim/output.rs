//! Writing a finished sweep to disk: results CSV, run metadata and models.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::report::{SavedModel, SAVED_MODEL_VERSION};
use super::results::{emit_csv, SweepResult};
use super::runner::{run_sweep_with, Prepared, Timings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    /// SHA-256 of the canonical JSON form of the configuration.
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub interleaver_seed: u64,
    pub jobs: usize,
    pub wall_secs: f64,
    pub timings: Timings,
    pub results: PathBuf,
    pub models: Vec<PathBuf>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Companion paths of a results file: `<stem>.meta.json` and `<stem>_models/`.
pub fn companion_paths(results: &Path) -> (PathBuf, PathBuf) {
    let stem = results.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    let dir = results.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}.meta.json")), dir.join(format!("{stem}_models")))
}

fn saved_model(name: &str, db: f64, p: &Prepared) -> SavedModel {
    match p {
        Prepared::Model { trellis, .. } => SavedModel::Trellis {
            format_version: SAVED_MODEL_VERSION,
            detector: name.into(),
            db,
            trellis: trellis.clone(),
            alignment: None,
        },
        Prepared::Hmm(h) => SavedModel::Trellis {
            format_version: SAVED_MODEL_VERSION,
            detector: name.into(),
            db,
            trellis: h.trellis.clone(),
            alignment: Some(h.alignment.clone()),
        },
        Prepared::Nn { trellis, model } | Prepared::Hybrid { trellis, model } => SavedModel::Nn {
            format_version: SAVED_MODEL_VERSION,
            detector: name.into(),
            db,
            trellis: trellis.clone(),
            model: (**model).clone(),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| Error::Json { context: path.display().to_string(), source })?;
    std::fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Runs the sweep and writes the results CSV to `results`, metadata beside it
/// and, when the configuration asks for it, every trained model.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize, results: &Path) -> Result<(SweepResult, RunMetadata)> {
    let start = Instant::now();
    let (sweep, prepared, timings) = run_sweep_with(cfg, jobs)?;
    emit_csv(&sweep, results)?;
    let (meta_path, model_dir) = companion_paths(results);
    let mut models = Vec::new();
    if cfg.save_models {
        std::fs::create_dir_all(&model_dir).map_err(|source| Error::Io { path: model_dir.clone(), source })?;
        for (p, dets) in prepared.iter().enumerate() {
            let db = cfg.sweep_db[p];
            for (name, det) in dets {
                if let Ok(det) = det {
                    let path = model_dir.join(format!("{name}_p{p}.json"));
                    write_json(&path, &saved_model(name, db, det))?;
                    models.push(path);
                }
            }
        }
    }
    let meta = RunMetadata {
        config_hash: config_hash(cfg),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        interleaver_seed: cfg.interleaver_seed,
        jobs,
        wall_secs: start.elapsed().as_secs_f64(),
        timings,
        results: results.to_path_buf(),
        models,
    };
    write_json(&meta_path, &meta)?;
    Ok((sweep, meta))
}
