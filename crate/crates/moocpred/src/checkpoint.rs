//! Versioned model checkpoints.
//!
//! A checkpoint is the whole [`TransferModel`] bundle as JSON: weights,
//! normalization bounds, week padding, horizon, and feature constants, plus
//! the hash of the config that produced it. Serde's float round-tripping is
//! exact for finite doubles, so a loaded model predicts bit-for-bit like the
//! one that was saved.

use std::path::Path;

use serde::{Deserialize, Serialize};

use moocpred_core::experiments::TransferModel;

use crate::{read_json, write_json, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config_hash: String,
    model: TransferModel,
}

pub fn save_model(path: &Path, model: &TransferModel, config_hash: &str) -> Result<()> {
    write_json(
        path,
        &Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            model: model.clone(),
        },
    )
}

/// Returns the model and the config hash it was trained under.
pub fn load_model(path: &Path) -> Result<(String, TransferModel)> {
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "checkpoint version {} but this build reads {}",
                ckpt.version, CHECKPOINT_VERSION
            ),
        ));
    }
    Ok((ckpt.config_hash, ckpt.model))
}
