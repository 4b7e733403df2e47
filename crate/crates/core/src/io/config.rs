//! Flat `key = value` training configuration. Blank lines and `#` comments
//! are ignored; unknown or repeated keys are errors. Keys not given keep
//! their defaults.
//!
//! | key | type | default |
//! |---|---|---|
//! | `margin` | float > 0 | 0.2 |
//! | `temperature` | float > 0 | 0.1 |
//! | `lambda` | float >= 0 | 1.0 |
//! | `triplet_through_projection` | bool | false |
//! | `batch_size` | integer | 64 |
//! | `epochs` | integer | 20 |
//! | `learning_rate` | float > 0 | 0.001 |
//! | `momentum` | float in [0, 1) | 0.9 |
//! | `view_noise_sigma` | float >= 0 | 0.05 |
//! | `view_dropout_p` | float in [0, 1) | 0.1 |
//! | `schedule` | `constant` or `cosine` | constant |
//! | `max_resample` | integer | 100 |
//! | `train_adapter` | bool | true |
//!
//! The loss setting and seed come from the command line.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::IoError;
use crate::contrastive::{LossConfig, LrSchedule, TrainConfig};
use crate::protocol::LossSetting;

pub const CONFIG_KEYS: [&str; 13] = [
    "margin",
    "temperature",
    "lambda",
    "triplet_through_projection",
    "batch_size",
    "epochs",
    "learning_rate",
    "momentum",
    "view_noise_sigma",
    "view_dropout_p",
    "schedule",
    "max_resample",
    "train_adapter",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(setting: LossSetting, seed: u64) -> Self {
        RunConfig { loss: LossConfig::new(setting), train: TrainConfig { seed, ..TrainConfig::default() } }
    }

    /// Every key in [`CONFIG_KEYS`] order; parses back to the same values.
    pub fn to_text(&self) -> String {
        let (l, t) = (&self.loss, &self.train);
        let values: [String; 13] = [
            l.margin.to_string(),
            l.temperature.to_string(),
            l.lambda.to_string(),
            l.triplet_through_projection.to_string(),
            t.batch_size.to_string(),
            t.epochs.to_string(),
            t.learning_rate.to_string(),
            t.momentum.to_string(),
            t.view_noise_sigma.to_string(),
            t.view_dropout_p.to_string(),
            t.schedule.as_str().to_string(),
            t.max_resample.to_string(),
            t.train_adapter.to_string(),
        ];
        let mut s = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, IoError> {
    raw.parse().map_err(|_| IoError::Config { line, reason: format!("bad value {raw:?} for {key}") })
}

/// Parses config text on top of the defaults for `setting`, then validates.
pub fn parse_config(text: &str, setting: LossSetting, seed: u64) -> Result<RunConfig, IoError> {
    let mut cfg = RunConfig::new(setting, seed);
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, val) = content
            .split_once('=')
            .ok_or_else(|| IoError::Config { line, reason: format!("expected key = value, got {content:?}") })?;
        let (key, val) = (key.trim(), val.trim());
        if !seen.insert(key.to_string()) {
            return Err(IoError::Config { line, reason: format!("duplicate key {key}") });
        }
        let (l, t) = (&mut cfg.loss, &mut cfg.train);
        match key {
            "margin" => l.margin = value(line, key, val)?,
            "temperature" => l.temperature = value(line, key, val)?,
            "lambda" => l.lambda = value(line, key, val)?,
            "triplet_through_projection" => l.triplet_through_projection = value(line, key, val)?,
            "batch_size" => t.batch_size = value(line, key, val)?,
            "epochs" => t.epochs = value(line, key, val)?,
            "learning_rate" => t.learning_rate = value(line, key, val)?,
            "momentum" => t.momentum = value(line, key, val)?,
            "view_noise_sigma" => t.view_noise_sigma = value(line, key, val)?,
            "view_dropout_p" => t.view_dropout_p = value(line, key, val)?,
            "schedule" => {
                t.schedule = match val {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    _ => return Err(IoError::Config { line, reason: format!("bad value {val:?} for schedule") }),
                }
            }
            "max_resample" => t.max_resample = value(line, key, val)?,
            "train_adapter" => t.train_adapter = value(line, key, val)?,
            _ => return Err(IoError::Config { line, reason: format!("unknown key {key:?}") }),
        }
    }
    let invalid = |e: crate::contrastive::ContrastiveError| IoError::Config { line: 0, reason: e.to_string() };
    cfg.loss.validate().map_err(invalid)?;
    cfg.train.validate(setting).map_err(invalid)?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>, setting: LossSetting, seed: u64) -> Result<RunConfig, IoError> {
    parse_config(&std::fs::read_to_string(path)?, setting, seed)
}

/// Hex SHA-256 (first 16 hex digits) over the canonical text, the loss
/// setting and the seed.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(cfg.to_text().as_bytes());
    h.update(format!("loss = {}\nseed = {}\n", cfg.loss.setting.tag(), cfg.train.seed).as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}
