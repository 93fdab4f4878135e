//! Versioned model checkpoints: a JSON dump of every parameter tensor plus
//! an echo of the model configuration. Values survive save/load bit for
//! bit (shortest-round-trip float formatting).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDump {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<ParamDump>,
}

/// Snapshot the store in insertion order.
pub fn checkpoint_from(config: &ModelConfig, store: &ParamStore) -> Result<Checkpoint> {
    let mut params = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        if p.value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "parameter {:?} holds non-finite values; refusing to checkpoint",
                p.name
            )));
        }
        params.push(ParamDump {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
            trainable: p.trainable,
        });
    }
    Ok(Checkpoint { version: CHECKPOINT_VERSION, config: config.clone(), params })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    store: &ParamStore,
) -> Result<()> {
    let ckpt = checkpoint_from(config, store)?;
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, &ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let r = BufReader::new(File::open(path)?);
    let ckpt: Checkpoint = serde_json::from_reader(r)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

/// Rebuild a model and parameter store from a checkpoint. Model parameters
/// are matched by name; dumps the model does not declare (strategy heads,
/// domain classifiers) are re-inserted behind it so name lookups keep
/// working.
pub fn restore_model(ckpt: &Checkpoint) -> Result<(ParamStore, Model)> {
    let mut store = ParamStore::new();
    let model = Model::new(&mut store, ckpt.config.clone(), 0);
    for dump in &ckpt.params {
        let tensor = Tensor::new(dump.shape.clone(), dump.data.clone())
            .map_err(|e| Error::invalid(format!("parameter {:?}: {e}", dump.name)))?;
        let id = match store.id(&dump.name) {
            Some(id) => {
                if store.value(id).shape() != tensor.shape() {
                    return Err(Error::shape(
                        "restore_model",
                        format!(
                            "parameter {:?} has shape {:?} in the checkpoint but {:?} in the model",
                            dump.name,
                            tensor.shape(),
                            store.value(id).shape()
                        ),
                    ));
                }
                id
            }
            None => store.insert(&dump.name, Tensor::zeros(tensor.shape())),
        };
        let p = store.get_mut(id);
        p.value = tensor;
        p.trainable = dump.trainable;
    }
    Ok((store, model))
}
