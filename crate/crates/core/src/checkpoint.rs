//! Model directories: `metadata.json`, `heads.safetensors` and encoder files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::config::RunConfig;
use crate::encoder::EncoderKind;
use crate::error::{Error, Result};
use crate::model::EtcModel;
use crate::params::{read_safetensors, restore_group, save_safetensors};

pub const SCHEMA_VERSION: &str = "1";
pub const METADATA_FILE: &str = "metadata.json";
pub const HEADS_FILE: &str = "heads.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub schema_version: String,
    pub config: BTreeMap<String, Json>,
    pub categories: Vec<String>,
    pub encoder_id: String,
    pub step: usize,
    pub dev_f1: f64,
}

/// A saved model directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub metadata: Metadata,
}

/// Writes `model` to `dir`, replacing any previous checkpoint files.
pub fn save_checkpoint(model: &EtcModel, dir: &Path, step: usize, dev_f1: f64) -> Result<Checkpoint> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metadata = Metadata {
        schema_version: SCHEMA_VERSION.to_string(),
        config: model.config.to_flat(),
        categories: model.categories.clone(),
        encoder_id: model.encoder.id(),
        step,
        dev_f1,
    };
    save_safetensors(
        &dir.join(HEADS_FILE),
        &[("span", &model.heads.span), ("pair", &model.heads.pair)],
    )?;
    model.encoder.save(dir)?;
    let path = dir.join(METADATA_FILE);
    let text = serde_json::to_string_pretty(&metadata).expect("metadata serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(Checkpoint {
        dir: dir.to_path_buf(),
        metadata,
    })
}

pub fn read_metadata(dir: &Path) -> Result<Metadata> {
    let path = dir.join(METADATA_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: Json = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let found = raw
        .get("schema_version")
        .and_then(Json::as_str)
        .unwrap_or("<missing>");
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: found.to_string(),
            expected: SCHEMA_VERSION.to_string(),
        });
    }
    serde_json::from_value(raw).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Loads a model directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<EtcModel> {
    let metadata = read_metadata(dir)?;
    let mut config = RunConfig::from_flat(&metadata.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if config.encoder.kind == EncoderKind::Pretrained {
        // Fine-tuned weights live in the checkpoint itself.
        config.encoder.model_id = dir.to_string_lossy().into_owned();
    }
    let mut model = EtcModel::new(config, metadata.categories.clone())?;
    restore_parts(&mut model, dir)?;
    if model.encoder.id() != metadata.encoder_id {
        return Err(Error::Checkpoint(format!(
            "encoder {} does not match the recorded encoder {}",
            model.encoder.id(),
            metadata.encoder_id
        )));
    }
    Ok(model)
}

/// Overwrites the weights of an existing model with those saved in `dir`.
pub fn restore_into(model: &mut EtcModel, dir: &Path) -> Result<()> {
    let metadata = read_metadata(dir)?;
    if metadata.categories != model.categories {
        return Err(Error::Checkpoint("category vocabulary differs".into()));
    }
    restore_parts(model, dir)
}

fn restore_parts(model: &mut EtcModel, dir: &Path) -> Result<()> {
    let tensors = read_safetensors(&dir.join(HEADS_FILE))?;
    restore_group(&tensors, "span", &mut model.heads.span)?;
    restore_group(&tensors, "pair", &mut model.heads.pair)?;
    model.encoder.load(dir)
}
