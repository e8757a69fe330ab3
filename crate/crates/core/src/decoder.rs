//! Inference-time decoding: token-by-token baseline, entropy-threshold
//! parallel decoding with block scheduling, and the accuracy/TPF sweep.
//!
//! Block semantics: blocks are consumed left to right; the active window is
//! the current block plus at most one look-ahead block. The look-ahead
//! block joins once the current block's committed fraction reaches the
//! decoded-token threshold, and its positions additionally need max
//! probability at least `1 - block_add_threshold` to commit early. When no
//! position passes the entropy test, the single most confident position of
//! the current block commits, so every forward makes progress.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::MaskedState;
use crate::metrics::{MetricsError, ParallelismCurve};
use crate::model::{denoise_forward, DenoiserParams, ModelError, Vocabulary};
use crate::tasks::{PromptAnswerPair, TaskOracle};
use crate::trajectory::select_most_confident;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("decode log io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Tbt,
    Parallel,
}

impl FromStr for DecodeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tbt" => Ok(DecodeMode::Tbt),
            "parallel" => Ok(DecodeMode::Parallel),
            other => Err(format!("unknown decode mode {other:?}")),
        }
    }
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeMode::Tbt => write!(f, "tbt"),
            DecodeMode::Parallel => write!(f, "parallel"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecodeConfig {
    pub gen_len: usize,
    pub block_len: usize,
    /// Entropy threshold in nats.
    pub entropy_threshold: f64,
    pub block_add_threshold: f64,
    pub decoded_token_threshold: f64,
    pub mode: DecodeMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            gen_len: 8,
            block_len: 8,
            entropy_threshold: 0.5,
            block_add_threshold: 0.1,
            decoded_token_threshold: 0.95,
            mode: DecodeMode::Parallel,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) {
        assert!(self.gen_len >= 1, "gen_len must be at least 1");
        assert!(
            (1..=self.gen_len).contains(&self.block_len),
            "block_len must lie in 1..=gen_len"
        );
        assert!(self.entropy_threshold >= 0.0, "entropy threshold must be non-negative");
        assert!((0.0..=1.0).contains(&self.block_add_threshold));
        assert!((0.0..=1.0).contains(&self.decoded_token_threshold));
    }
}

/// Positions committed in one forward pass, with their entropies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub committed_positions: Vec<usize>,
    pub entropies: Vec<f64>,
}

/// Generated tokens plus forward-pass accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub output: Vec<u32>,
    pub forwards: usize,
    pub generated: usize,
    pub per_step: Vec<StepRecord>,
}

impl DecodeResult {
    /// Tokens per forward.
    pub fn tpf(&self) -> f64 {
        self.generated as f64 / self.forwards as f64
    }
}

/// Token-by-token baseline: one confidence-argmax commit per forward, no
/// privileged context. `forwards` always equals `gen_len`.
pub fn decode_tbt(
    params: &DenoiserParams,
    vocab: &Vocabulary,
    q: &[u32],
    gen_len: usize,
) -> Result<DecodeResult, DecodeError> {
    assert!(gen_len >= 1, "gen_len must be at least 1");
    let mut state = MaskedState::fully_masked(q.to_vec(), gen_len, vocab);
    let mut per_step = Vec::with_capacity(gen_len);
    for _ in 0..gen_len {
        let out = denoise_forward(params, &state)?;
        let (pos, token, _) = select_most_confident(&out, &state);
        let entropy = out.entropy(state.response_offset() + pos);
        state.reveal(pos, token);
        per_step.push(StepRecord { committed_positions: vec![pos], entropies: vec![entropy] });
    }
    Ok(DecodeResult {
        output: state.response,
        forwards: gen_len,
        generated: gen_len,
        per_step,
    })
}

/// Entropy-threshold parallel decoding with block scheduling.
pub fn decode_parallel(
    params: &DenoiserParams,
    vocab: &Vocabulary,
    q: &[u32],
    config: &DecodeConfig,
) -> Result<DecodeResult, DecodeError> {
    config.validate();
    let gen_len = config.gen_len;
    let mut state = MaskedState::fully_masked(q.to_vec(), gen_len, vocab);
    let mut per_step = Vec::new();
    let mut forwards = 0usize;
    let block_of = |pos: usize| pos / config.block_len;
    let n_blocks = gen_len.div_ceil(config.block_len);
    let block_range = |b: usize| (b * config.block_len, ((b + 1) * config.block_len).min(gen_len));

    while state.mask_count() > 0 {
        // Current block: leftmost block with any masked position.
        let current = (0..n_blocks)
            .find(|&b| {
                let (lo, hi) = block_range(b);
                (lo..hi).any(|p| state.is_masked(p))
            })
            .expect("masked position must live in some block");
        let (cur_lo, cur_hi) = block_range(current);
        let cur_committed =
            (cur_lo..cur_hi).filter(|&p| !state.is_masked(p)).count() as f64;
        let lookahead_open = current + 1 < n_blocks
            && cur_committed / (cur_hi - cur_lo) as f64 >= config.decoded_token_threshold;

        let out = denoise_forward(params, &state)?;
        forwards += 1;
        let offset = state.response_offset();

        let mut commits: Vec<(usize, u32, f64)> = Vec::new();
        for pos in state.masked_positions() {
            let b = block_of(pos);
            let in_window = b == current || (lookahead_open && b == current + 1);
            if !in_window {
                continue;
            }
            let entropy = out.entropy(offset + pos);
            if entropy >= config.entropy_threshold {
                continue;
            }
            let (token, conf) = out.top_excluding(offset + pos, vocab.mask_id);
            if b != current && conf < 1.0 - config.block_add_threshold {
                continue;
            }
            commits.push((pos, token, entropy));
        }
        if commits.is_empty() {
            // Progress guarantee: commit the most confident position of the
            // current block.
            let mut best: Option<(usize, u32, f64)> = None;
            for pos in cur_lo..cur_hi {
                if !state.is_masked(pos) {
                    continue;
                }
                let (token, conf) = out.top_excluding(offset + pos, vocab.mask_id);
                if best.is_none_or(|(_, _, bc)| conf > bc) {
                    best = Some((pos, token, conf));
                }
            }
            let (pos, token, _) = best.expect("current block has a masked position");
            commits.push((pos, token, out.entropy(offset + pos)));
        }
        let mut record = StepRecord {
            committed_positions: Vec::with_capacity(commits.len()),
            entropies: Vec::with_capacity(commits.len()),
        };
        for (pos, token, entropy) in commits {
            state.reveal(pos, token);
            record.committed_positions.push(pos);
            record.entropies.push(entropy);
        }
        per_step.push(record);
    }
    Ok(DecodeResult { output: state.response, forwards, generated: gen_len, per_step })
}

/// One decode-log line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeLogEntry {
    pub prompt_ids: Vec<u32>,
    pub output_ids: Vec<u32>,
    pub forwards: usize,
    pub generated: usize,
    pub tpf: f64,
    pub oracle_pass: bool,
    pub per_step: Vec<StepRecord>,
}

impl DecodeLogEntry {
    pub fn new(prompt: &[u32], result: &DecodeResult, oracle_pass: bool) -> Self {
        DecodeLogEntry {
            prompt_ids: prompt.to_vec(),
            output_ids: result.output.clone(),
            forwards: result.forwards,
            generated: result.generated,
            tpf: result.tpf(),
            oracle_pass,
            per_step: result.per_step.clone(),
        }
    }
}

pub fn write_decode_log(entries: &[DecodeLogEntry], path: &Path) -> Result<(), DecodeError> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e).expect("serializable log entry");
        writeln!(w)?;
    }
    Ok(())
}

/// Mean accuracy (percent) and mean TPF at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub tpf: f64,
}

/// Sweep entropy thresholds over an evaluation set and assemble the
/// accuracy-parallelism curve (duplicate TPF points merge by max accuracy).
pub fn sweep_parallelism(
    params: &DenoiserParams,
    vocab: &Vocabulary,
    eval_set: &[PromptAnswerPair],
    thresholds: &[f64],
    base: &DecodeConfig,
) -> Result<(ParallelismCurve, Vec<SweepRow>), DecodeError> {
    if eval_set.is_empty() {
        return Err(DecodeError::EmptyEvalSet);
    }
    assert!(
        thresholds.windows(2).all(|w| w[0] <= w[1]),
        "thresholds must be sorted ascending"
    );
    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let config = DecodeConfig { entropy_threshold: threshold, ..base.clone() };
        let mut correct = 0usize;
        let mut tpf_sum = 0.0;
        for pair in eval_set {
            let result = decode_parallel(params, vocab, &pair.prompt_ids, &config)?;
            if TaskOracle::new(pair.task).check(&pair.prompt_ids, &result.output) {
                correct += 1;
            }
            tpf_sum += result.tpf();
        }
        rows.push(SweepRow {
            threshold,
            accuracy: 100.0 * correct as f64 / eval_set.len() as f64,
            tpf: tpf_sum / eval_set.len() as f64,
        });
    }
    let curve = ParallelismCurve::from_points(rows.iter().map(|r| (r.tpf, r.accuracy)).collect())?;
    Ok((curve, rows))
}
