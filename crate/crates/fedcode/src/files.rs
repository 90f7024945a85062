//! JSON file formats: checkpoints, partition plans, datasets, experiment
//! configs and evaluation batches.

use std::fs;
use std::path::{Path, PathBuf};

use fedcode_core::orchestrator::PartitionSource;
use fedcode_core::{ExperimentConfig, ModelSpec, ParameterVector, PartitionPlan, Segment};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{io, json, Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(json(path))
}

/// Pretty JSON with a trailing newline, written to a sibling temp file and
/// renamed into place so readers never see a partial file.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json(path))?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, text).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    spec: ModelSpec,
    segments: Vec<Segment>,
    values: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, spec: &ModelSpec, params: &ParameterVector) -> Result<()> {
    spec.ensure_params(params)?;
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        spec: *spec,
        segments: params.segments().to_vec(),
        values: params.values().to_vec(),
    };
    write_json(path, &file)
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelSpec, ParameterVector)> {
    let file: CheckpointFile = read_json(path)?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::FormatVersion { path: path.into(), found: file.format_version });
    }
    let params = ParameterVector::new(file.segments, file.values)?;
    if file.spec.validate().is_err() || file.spec.ensure_params(&params).is_err() {
        return Err(Error::CheckpointSpec { path: path.into() });
    }
    Ok((file.spec, params))
}

pub fn read_plan(path: &Path) -> Result<PartitionPlan> {
    read_json(path)
}

pub fn write_plan(path: &Path, plan: &PartitionPlan) -> Result<()> {
    write_json(path, plan)
}

/// Load an experiment config. A `plan_file` partition is read relative to
/// the config's directory and inlined.
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_json(path)?;
    if let PartitionSource::File { plan_file } = &cfg.partition {
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.partition = PartitionSource::Plan(read_plan(&base.join(plan_file))?);
    }
    Ok(cfg)
}
