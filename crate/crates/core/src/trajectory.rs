//! Privileged-information teacher rollout: strict one-token-per-step
//! decoding conditioned on the prompt and the ground-truth answer, with
//! every intermediate state recoverable from the step list.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::MaskedState;
use crate::model::{denoise_forward, DenoiserParams, ModelError, Vocabulary};
use crate::tasks::{TaskKind, TaskOracle, SEP};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid trajectory: {0}")]
    Invalid(String),
}

/// One teacher decoding step: the revealed position, the committed token,
/// and the teacher's max-probability there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub s: usize,
    pub pos: usize,
    pub token: u32,
    pub conf: f64,
}

/// Ordered record of a full teacher rollout. Intermediate states are stored
/// implicitly: `x_1` is fully masked and [`Trajectory::state_at`] replays
/// the step list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: TaskKind,
    #[serde(rename = "prompt_ids")]
    pub prompt: Vec<u32>,
    #[serde(rename = "answer_ids")]
    pub answer: Vec<u32>,
    pub gen_len: usize,
    pub steps: Vec<TrajectoryStep>,
    pub final_ids: Vec<u32>,
    pub oracle_pass: bool,
    #[serde(skip, default = "default_mask_id")]
    pub mask_id: u32,
}

fn default_mask_id() -> u32 {
    crate::tasks::MASK
}

impl Trajectory {
    /// Total number of decoding steps `T`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Reconstruct the masked state `x_s` (1-based; `s = T + 1` is the
    /// fully decoded state).
    pub fn state_at(&self, s: usize) -> MaskedState {
        assert!((1..=self.len() + 1).contains(&s), "step {s} out of range");
        let mut response = vec![self.mask_id; self.gen_len];
        for step in &self.steps[..s - 1] {
            response[step.pos] = step.token;
        }
        MaskedState { prompt: self.prompt.clone(), response, mask_id: self.mask_id }
    }

    /// Step at which a response position is revealed (1-based).
    pub fn reveal_step(&self, pos: usize) -> usize {
        self.steps
            .iter()
            .find(|st| st.pos == pos)
            .map(|st| st.s)
            .expect("every position is revealed")
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.steps.is_empty() {
            return Err(TrajectoryError::Invalid("zero-step trajectory".into()));
        }
        if self.steps.len() != self.gen_len {
            return Err(TrajectoryError::Invalid(format!(
                "{} steps for gen_len {}",
                self.steps.len(),
                self.gen_len
            )));
        }
        let mut seen = vec![false; self.gen_len];
        for (i, st) in self.steps.iter().enumerate() {
            if st.s != i + 1 {
                return Err(TrajectoryError::Invalid(format!("step index {} at slot {}", st.s, i)));
            }
            if st.pos >= self.gen_len || seen[st.pos] {
                return Err(TrajectoryError::Invalid(format!("bad or repeated position {}", st.pos)));
            }
            if !(st.conf > 0.0 && st.conf <= 1.0) {
                return Err(TrajectoryError::Invalid(format!("confidence {} out of (0,1]", st.conf)));
            }
            seen[st.pos] = true;
        }
        if self.final_ids.len() != self.gen_len
            || self.final_ids.contains(&self.mask_id)
        {
            return Err(TrajectoryError::Invalid("final state still masked".into()));
        }
        Ok(())
    }
}

/// Teacher input: prompt, separator, privileged answer, then the current
/// response state. The response region keeps its own positional alignment.
pub fn teacher_input(q: &[u32], a: &[u32], state: &MaskedState) -> MaskedState {
    let mut prompt = Vec::with_capacity(q.len() + 1 + a.len());
    prompt.extend_from_slice(q);
    prompt.push(SEP);
    prompt.extend_from_slice(a);
    MaskedState { prompt, response: state.response.clone(), mask_id: state.mask_id }
}

/// Student input: prompt and response only; the privileged segment is omitted.
pub fn student_input(q: &[u32], state: &MaskedState) -> MaskedState {
    MaskedState { prompt: q.to_vec(), response: state.response.clone(), mask_id: state.mask_id }
}

/// Confidence argmax over the masked positions of a model output.
///
/// Returns `(position, token, confidence)`; ties break toward the lowest
/// position index.
pub fn select_most_confident(
    out: &crate::model::DenoiserOutput,
    state: &MaskedState,
) -> (usize, u32, f64) {
    let offset = state.response_offset();
    let mut best: Option<(usize, u32, f64)> = None;
    for pos in state.masked_positions() {
        let (token, conf) = out.top_excluding(offset + pos, state.mask_id);
        if best.is_none_or(|(_, _, bc)| conf > bc) {
            best = Some((pos, token, conf));
        }
    }
    best.expect("at least one masked position")
}

/// Strict one-token-per-step teacher rollout conditioned on `(q, a)`.
pub fn collect_trajectory(
    teacher: &DenoiserParams,
    vocab: &Vocabulary,
    task: TaskKind,
    q: &[u32],
    a: &[u32],
    gen_len: usize,
) -> Result<Trajectory, TrajectoryError> {
    assert!(gen_len >= 1, "gen_len must be at least 1");
    let mut state = MaskedState::fully_masked(q.to_vec(), gen_len, vocab);
    let mut steps = Vec::with_capacity(gen_len);
    for s in 1..=gen_len {
        let input = teacher_input(q, a, &state);
        let out = denoise_forward(teacher, &input)?;
        let (pos, token, conf) = select_most_confident(&out, &input);
        state.reveal(pos, token);
        steps.push(TrajectoryStep { s, pos, token, conf });
    }
    let oracle = TaskOracle::new(task);
    let final_ids = state.response.clone();
    let oracle_pass = oracle.check(q, &final_ids);
    Ok(Trajectory {
        task,
        prompt: q.to_vec(),
        answer: a.to_vec(),
        gen_len,
        steps,
        final_ids,
        oracle_pass,
        mask_id: vocab.mask_id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped: usize,
}

/// Keep exactly the trajectories whose final response passes the oracle.
pub fn filter_trajectories(trajs: Vec<Trajectory>) -> (Vec<Trajectory>, FilterReport) {
    let total = trajs.len();
    let kept: Vec<Trajectory> = trajs
        .into_iter()
        .filter(|t| TaskOracle::new(t.task).check(&t.prompt, &t.final_ids))
        .collect();
    let report = FilterReport { kept: kept.len(), dropped: total - kept.len() };
    (kept, report)
}

pub fn save_trajectories(trajs: &[Trajectory], path: &Path) -> Result<(), TrajectoryError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in trajs {
        serde_json::to_writer(&mut w, t)
            .map_err(|e| TrajectoryError::Parse { line: 0, msg: e.to_string() })?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>, TrajectoryError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj: Trajectory = serde_json::from_str(&line)
            .map_err(|e| TrajectoryError::Parse { line: i + 1, msg: e.to_string() })?;
        traj.validate()
            .map_err(|e| TrajectoryError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(traj);
    }
    Ok(out)
}
