//! Versioned JSON snapshot of a run: the resolved experiment and the full
//! trainer state (parameters, optimizer moments, normalizer, buffer, RNGs).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::scalar::Real;
use crate::train::Trainer;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Checkpoint<F> {
    pub version: u32,
    pub experiment: ExperimentConfig,
    pub trainer: Trainer<F>,
}

impl<F: Real> Checkpoint<F> {
    pub fn new(experiment: ExperimentConfig, trainer: Trainer<F>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            experiment,
            trainer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_reader(BufReader::new(file))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
