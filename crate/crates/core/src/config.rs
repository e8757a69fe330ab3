//! Plain-text key=value experiment configuration.
//!
//! Every key has a default; a config file only lists overrides. Lines are
//! `key = value`, blank lines and `#` comments are ignored, and unknown
//! keys are errors so typos do not silently fall back to defaults. The
//! fully resolved config is echoed into every output directory.
//!
//! All randomness flows from one root seed through named sub-streams
//! (base-train, corrupt, collect, distill, eval) so stages are
//! independently reproducible.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::decoder::{DecodeConfig, DecodeMode};
use crate::distill::{DistillConfig, DistillMode};
use crate::model::{BaseTrainConfig, HyperParams};
use crate::tasks::{TaskKind, TaskSpec, VOCAB_SIZE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: bad value for {key}: {reason}")]
    BadValue { line: usize, key: String, reason: String },
}

/// Everything an experiment run needs, with defaults sized for a desk-scale
/// model that trains in minutes on a CPU.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // Task mix.
    pub task: TaskKind,
    pub word_len: (usize, usize),
    pub operands: (usize, usize),
    pub train_size: usize,
    pub eval_size: usize,
    /// Response slot length; answers are padded to this with PAD.
    pub gen_len: usize,

    // Model.
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub max_len: usize,

    // Seeding.
    pub seed: u64,

    // Base training.
    pub base_lr: f64,
    pub base_batch: usize,
    pub base_epochs: usize,
    pub base_t_min: f64,

    // Trajectory collection.
    pub collect_count: usize,

    // Distillation.
    pub delta: usize,
    pub lambda: f64,
    pub tau: f64,
    pub distill_lr: f64,
    pub distill_epochs: usize,
    pub distill_batch: usize,
    pub distill_mode: DistillMode,
    pub calibrate_samples: usize,

    // Decoding.
    pub block_len: usize,
    pub entropy_threshold: f64,
    pub block_add_threshold: f64,
    pub decoded_token_threshold: f64,
    pub decode_mode: DecodeMode,
    pub sweep_thresholds: Vec<f64>,

    // Factorization-gap study.
    pub gap_k_max: usize,
    pub gap_stay_prob: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Arith,
            word_len: (3, 6),
            operands: (2, 2),
            train_size: 256,
            eval_size: 200,
            gen_len: 4,
            layers: 2,
            width: 64,
            heads: 4,
            max_len: 48,
            seed: 7,
            base_lr: 2e-3,
            base_batch: 8,
            base_epochs: 350,
            base_t_min: 0.4,
            collect_count: 200,
            delta: 2,
            lambda: 1.0,
            tau: 1.0,
            distill_lr: 3e-4,
            distill_epochs: 2,
            distill_batch: 8,
            distill_mode: DistillMode::Quality,
            calibrate_samples: 200,
            block_len: 4,
            entropy_threshold: 0.5,
            block_add_threshold: 0.1,
            decoded_token_threshold: 0.95,
            decode_mode: DecodeMode::Parallel,
            sweep_thresholds: vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            gap_k_max: 6,
            gap_stay_prob: 0.9,
        }
    }
}

fn parse_pair(line: usize, key: &str, v: &str) -> Result<(usize, usize), ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("expected `lo,hi`, got {v:?}"),
        });
    }
    let lo = parse_num(line, key, parts[0])?;
    let hi = parse_num(line, key, parts[1])?;
    Ok((lo, hi))
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: e.to_string(),
    })
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let v = value.trim();
            match key {
                "task" => cfg.task = parse_num(line, key, v)?,
                "word_len" => cfg.word_len = parse_pair(line, key, v)?,
                "operands" => cfg.operands = parse_pair(line, key, v)?,
                "train_size" => cfg.train_size = parse_num(line, key, v)?,
                "eval_size" => cfg.eval_size = parse_num(line, key, v)?,
                "gen_len" => cfg.gen_len = parse_num(line, key, v)?,
                "layers" => cfg.layers = parse_num(line, key, v)?,
                "width" => cfg.width = parse_num(line, key, v)?,
                "heads" => cfg.heads = parse_num(line, key, v)?,
                "max_len" => cfg.max_len = parse_num(line, key, v)?,
                "seed" => cfg.seed = parse_num(line, key, v)?,
                "base_lr" => cfg.base_lr = parse_num(line, key, v)?,
                "base_batch" => cfg.base_batch = parse_num(line, key, v)?,
                "base_epochs" => cfg.base_epochs = parse_num(line, key, v)?,
                "base_t_min" => cfg.base_t_min = parse_num(line, key, v)?,
                "collect_count" => cfg.collect_count = parse_num(line, key, v)?,
                "delta" => cfg.delta = parse_num(line, key, v)?,
                "lambda" => cfg.lambda = parse_num(line, key, v)?,
                "tau" => cfg.tau = parse_num(line, key, v)?,
                "distill_lr" => cfg.distill_lr = parse_num(line, key, v)?,
                "distill_epochs" => cfg.distill_epochs = parse_num(line, key, v)?,
                "distill_batch" => cfg.distill_batch = parse_num(line, key, v)?,
                "distill_mode" => {
                    cfg.distill_mode =
                        DistillMode::from_str(v).map_err(|reason| ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            reason,
                        })?
                }
                "calibrate_samples" => cfg.calibrate_samples = parse_num(line, key, v)?,
                "block_len" => cfg.block_len = parse_num(line, key, v)?,
                "entropy_threshold" => cfg.entropy_threshold = parse_num(line, key, v)?,
                "block_add_threshold" => cfg.block_add_threshold = parse_num(line, key, v)?,
                "decoded_token_threshold" => {
                    cfg.decoded_token_threshold = parse_num(line, key, v)?
                }
                "decode_mode" => {
                    cfg.decode_mode =
                        DecodeMode::from_str(v).map_err(|reason| ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            reason,
                        })?
                }
                "sweep_thresholds" => {
                    let mut out = Vec::new();
                    for part in v.split(',') {
                        out.push(parse_num(line, key, part.trim())?);
                    }
                    cfg.sweep_thresholds = out;
                }
                "gap_k_max" => cfg.gap_k_max = parse_num(line, key, v)?,
                "gap_stay_prob" => cfg.gap_stay_prob = parse_num(line, key, v)?,
                other => {
                    return Err(ConfigError::UnknownKey { line, key: other.to_string() })
                }
            }
        }
        Ok(cfg)
    }

    /// Resolved key=value text, parseable back into an equal config.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "word_len = {},{}", self.word_len.0, self.word_len.1);
        let _ = writeln!(s, "operands = {},{}", self.operands.0, self.operands.1);
        let _ = writeln!(s, "train_size = {}", self.train_size);
        let _ = writeln!(s, "eval_size = {}", self.eval_size);
        let _ = writeln!(s, "gen_len = {}", self.gen_len);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "base_batch = {}", self.base_batch);
        let _ = writeln!(s, "base_epochs = {}", self.base_epochs);
        let _ = writeln!(s, "base_t_min = {}", self.base_t_min);
        let _ = writeln!(s, "collect_count = {}", self.collect_count);
        let _ = writeln!(s, "delta = {}", self.delta);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "distill_lr = {}", self.distill_lr);
        let _ = writeln!(s, "distill_epochs = {}", self.distill_epochs);
        let _ = writeln!(s, "distill_batch = {}", self.distill_batch);
        let _ = writeln!(s, "distill_mode = {}", self.distill_mode);
        let _ = writeln!(s, "calibrate_samples = {}", self.calibrate_samples);
        let _ = writeln!(s, "block_len = {}", self.block_len);
        let _ = writeln!(s, "entropy_threshold = {}", self.entropy_threshold);
        let _ = writeln!(s, "block_add_threshold = {}", self.block_add_threshold);
        let _ = writeln!(s, "decoded_token_threshold = {}", self.decoded_token_threshold);
        let _ = writeln!(s, "decode_mode = {}", self.decode_mode);
        let thresholds: Vec<String> =
            self.sweep_thresholds.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(s, "sweep_thresholds = {}", thresholds.join(","));
        let _ = writeln!(s, "gap_k_max = {}", self.gap_k_max);
        let _ = writeln!(s, "gap_stay_prob = {}", self.gap_stay_prob);
        s
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec { task: self.task, word_len: self.word_len, operands: self.operands }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            layers: self.layers,
            width: self.width,
            heads: self.heads,
            max_len: self.max_len,
            vocab_size: VOCAB_SIZE,
        }
    }

    pub fn base_train_config(&self) -> BaseTrainConfig {
        BaseTrainConfig {
            lr: self.base_lr,
            batch_size: self.base_batch,
            epochs: self.base_epochs,
            t_min: self.base_t_min,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            delta: self.delta,
            lambda: self.lambda,
            near_weight: 1.0,
            tau: self.tau,
            lr: self.distill_lr,
            epochs: self.distill_epochs,
            batch: self.distill_batch,
            mode: self.distill_mode,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            gen_len: self.gen_len,
            block_len: self.block_len,
            entropy_threshold: self.entropy_threshold,
            block_add_threshold: self.block_add_threshold,
            decoded_token_threshold: self.decoded_token_threshold,
            mode: self.decode_mode,
        }
    }
}

/// Stable named sub-seed derived from the root seed (FNV-1a over the stream
/// name, mixed with the root), so stages are independently reproducible.
pub fn sub_seed(root: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ root.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Build version string stamped into every output.
pub fn version_string() -> String {
    format!("tadlab {}", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_resolved_text() {
        let cfg = ExperimentConfig::default();
        let parsed = ExperimentConfig::from_str_contents(&cfg.resolved_text()).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# comment\nseed = 99\ntask = copy\nword_len = 4, 5\n\nlambda = 0.5\n";
        let cfg = ExperimentConfig::from_str_contents(text).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.task, TaskKind::Copy);
        assert_eq!(cfg.word_len, (4, 5));
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.tau, 1.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_str_contents("sede = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }));
    }

    #[test]
    fn malformed_line_rejected() {
        let err = ExperimentConfig::from_str_contents("seed 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { .. }));
    }

    #[test]
    fn sub_seeds_distinct_and_stable() {
        let a = sub_seed(7, "base-train");
        let b = sub_seed(7, "collect");
        assert_ne!(a, b);
        assert_eq!(a, sub_seed(7, "base-train"));
        assert_ne!(a, sub_seed(8, "base-train"));
    }
}
