//! Versioned JSON model files.
//!
//! Layout: `{format_version, config, blocks: [{name, shape, values}], metadata}`
//! with row-major values. Floats are written in shortest round-trip form
//! and parsed exactly, so a reload is bit-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::network::{ModelConfig, ModelParams};
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u64 = 1;

/// How the examples were partitioned for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    /// Early-citation threshold of the training population.
    #[serde(default = "default_min_early")]
    pub min_early_citations: u64,
    pub train: Option<TrainConfig>,
    pub split: Option<SplitInfo>,
    pub best_epoch: Option<usize>,
    pub validation: Option<EvalReport>,
}

fn default_min_early() -> u64 {
    crate::corpus::MIN_EARLY_CITATIONS
}

impl Default for ModelMetadata {
    fn default() -> Self {
        ModelMetadata {
            seed: 0,
            min_early_citations: default_min_early(),
            train: None,
            split: None,
            best_epoch: None,
            validation: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BlockRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    config: ModelConfig,
    blocks: Vec<BlockRecord>,
    metadata: ModelMetadata,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<u64>,
}

pub fn model_to_string(config: &ModelConfig, params: &ModelParams, metadata: &ModelMetadata) -> Result<String> {
    config.validate()?;
    params.check(config)?;
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        blocks: params
            .blocks()
            .into_iter()
            .map(|b| BlockRecord {
                name: b.name,
                shape: b.shape,
                values: b.values.to_vec(),
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn model_from_str(text: &str) -> Result<(ModelConfig, ModelParams, ModelMetadata)> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    match probe.format_version {
        Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::ModelFormat(format!(
                "unsupported format_version {v} (expected {FORMAT_VERSION})"
            )))
        }
        None => return Err(Error::ModelFormat("missing format_version".into())),
    }
    let file: ModelFile = serde_json::from_str(text)?;
    file.config.validate()?;
    let mut params = ModelParams::zeros(&file.config);
    let expected: Vec<(String, Vec<usize>)> = params.blocks().into_iter().map(|b| (b.name, b.shape)).collect();
    if file.blocks.len() != expected.len() {
        return Err(Error::ModelFormat(format!(
            "expected {} parameter blocks, found {}",
            expected.len(),
            file.blocks.len()
        )));
    }
    for ((record, (name, shape)), (_, slot)) in file.blocks.iter().zip(&expected).zip(params.blocks_mut()) {
        if &record.name != name {
            return Err(Error::ModelFormat(format!("expected block {name}, found {}", record.name)));
        }
        if &record.shape != shape {
            return Err(Error::ModelFormat(format!(
                "block {name}: shape {:?} does not match config ({shape:?})",
                record.shape
            )));
        }
        if record.values.len() != slot.len() {
            return Err(Error::ModelFormat(format!(
                "block {name}: {} values for shape {shape:?}",
                record.values.len()
            )));
        }
        if record.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { block: name.clone() });
        }
        slot.copy_from_slice(&record.values);
    }
    params.check(&file.config)?;
    Ok((file.config, params, file.metadata))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial model.
pub fn save_model(path: &Path, config: &ModelConfig, params: &ModelParams, metadata: &ModelMetadata) -> Result<()> {
    let text = model_to_string(config, params, metadata)?;
    write_atomic(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<(ModelConfig, ModelParams, ModelMetadata)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text).map_err(|e| match e {
        Error::Json(j) => Error::ModelFormat(format!("{}: {j}", path.display())),
        other => other,
    })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
