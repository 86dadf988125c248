//! Per-epoch metrics and their CSV rendering.
//!
//! The CSV starts with one `#` comment line recording the variant, generator
//! name, and seed, followed by the fixed header and one row per split per
//! epoch with 6-decimal fixed-point reals.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RNG_ALGORITHM;

use super::config::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochMetrics {
    /// 1-based epoch index.
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

pub fn format_metrics_csv(cfg: &TrainConfig, rows: &[EpochMetrics]) -> String {
    let mut out = format!(
        "# variant={} rng={RNG_ALGORITHM} seed={}\n",
        cfg.variant, cfg.seed
    );
    out.push_str("epoch,split,loss,accuracy,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            r.epoch, r.split, r.loss, r.accuracy, r.seconds
        ));
    }
    out
}

pub fn write_metrics_csv(
    path: impl AsRef<Path>,
    cfg: &TrainConfig,
    rows: &[EpochMetrics],
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_metrics_csv(cfg, rows)).map_err(|e| Error::io(path, e))
}
