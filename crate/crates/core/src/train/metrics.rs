use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,env_steps,grad_steps,eval_mean,eval_std,actor_loss,critic_loss,mean_q,seed";

/// One row of the reward curve. Losses are `NaN` for epochs without the
/// corresponding update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: usize,
    pub grad_steps: u64,
    pub eval_mean: f64,
    pub eval_std: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_q: f64,
    pub seed: u64,
    /// Seconds spent on the epoch; not written to the CSV.
    pub wall_time: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.env_steps,
            self.grad_steps,
            self.eval_mean,
            self.eval_std,
            self.actor_loss,
            self.critic_loss,
            self.mean_q,
            self.seed
        )
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{METRICS_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(w, "{}", r.csv_row()).map_err(io)?;
    }
    w.flush().map_err(io)
}
