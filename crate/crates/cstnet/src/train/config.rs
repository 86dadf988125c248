//! Experiment configuration, readable from a flat `key = value` text file
//! with `#` comments. Command-line flags override file values.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Variant;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub n_train: usize,
    pub n_test: usize,
    /// Subtract the train-split per-channel mean before training (default
    /// off so the color transform sees raw color).
    pub subtract_mean: bool,
    /// Add a learnable per-channel offset to the cst-global transform.
    pub cst_bias: bool,
    /// Directory holding data_batch_1.bin.
    pub data_dir: PathBuf,
    /// Directory all outputs are written under.
    pub out_dir: PathBuf,
    /// Matrix file for the cst-fixed variant (as written by fit-kl).
    pub fixed_w: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Baseline,
            seed: 42,
            epochs: 15,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            n_train: 5000,
            n_test: 1000,
            subtract_mean: false,
            cst_bias: false,
            data_dir: PathBuf::from("data/cifar-10-batches-bin"),
            out_dir: PathBuf::from("out"),
            fixed_w: None,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Input(format!("{key}: '{value}' is not a boolean"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Input(format!("{key}: cannot parse '{value}'")))
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = Variant::parse(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "momentum" => self.momentum = parse_num(key, value)?,
            "n_train" => self.n_train = parse_num(key, value)?,
            "n_test" => self.n_test = parse_num(key, value)?,
            "subtract_mean" => self.subtract_mean = parse_bool(key, value)?,
            "cst_bias" => self.cst_bias = parse_bool(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "fixed_w" => self.fixed_w = Some(PathBuf::from(value)),
            other => return Err(Error::Input(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` comments.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Input(format!("config line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Input("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Input("batch_size must be >= 1".into()));
        }
        // Zero is allowed: it freezes all parameters, which the equivalence
        // diagnostics rely on.
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Input(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Input(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.variant == Variant::CstFixed && self.fixed_w.is_none() {
            return Err(Error::Input(
                "variant cst-fixed needs fixed_w = <matrix file>".into(),
            ));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering, echoed into checkpoints.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("variant = {}\n", self.variant));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("batch_size = {}\n", self.batch_size));
        s.push_str(&format!("learning_rate = {}\n", self.learning_rate));
        s.push_str(&format!("momentum = {}\n", self.momentum));
        s.push_str(&format!("n_train = {}\n", self.n_train));
        s.push_str(&format!("n_test = {}\n", self.n_test));
        s.push_str(&format!("subtract_mean = {}\n", self.subtract_mean));
        s.push_str(&format!("cst_bias = {}\n", self.cst_bias));
        s.push_str(&format!("data_dir = {}\n", self.data_dir.display()));
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        if let Some(p) = &self.fixed_w {
            s.push_str(&format!("fixed_w = {}\n", p.display()));
        }
        s
    }

    pub fn data_batch_path(&self) -> PathBuf {
        self.data_dir.join("data_batch_1.bin")
    }
}
