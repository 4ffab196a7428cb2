//! Checkpoint directories: one `.dten` file per parameter plus `manifest.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::dten;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: usize,
    pub parameters: Vec<String>,
}

pub fn save(model: &Model, dir: &Path, seed: u64, step: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut parameters = Vec::new();
    for p in model.params() {
        dten::write(&dir.join(format!("{}.dten", p.name)), &p.value)?;
        parameters.push(p.name.clone());
    }
    let manifest = CheckpointManifest {
        config: model.config().clone(),
        seed,
        step,
        parameters,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    let mut model = Model::build(manifest.config.clone(), manifest.seed)?;
    let mut values = Vec::with_capacity(manifest.parameters.len());
    for name in &manifest.parameters {
        values.push((name.clone(), dten::read(&dir.join(format!("{name}.dten")))?));
    }
    let expected = model.params().len();
    if values.len() != expected {
        return Err(Error::Format {
            path,
            reason: format!("{} parameters listed, model has {expected}", values.len()),
        });
    }
    model.load_values(values)?;
    Ok((model, manifest))
}
