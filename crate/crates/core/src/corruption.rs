//! Forward masking process: produce intermediate states `x_t` from clean
//! sequences by independent per-position Bernoulli masking.

use rand::Rng;
use thiserror::Error;

use crate::model::Vocabulary;

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("corruption level {0} outside [0, 1]")]
    BadLevel(f64),
    #[error("clean sequence contains the MASK token")]
    MaskInClean,
}

/// A token sequence split into an immutable prompt region and a mutable
/// response region whose slots are either concrete ids or `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedState {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
    pub mask_id: u32,
}

impl MaskedState {
    /// Fully masked response of length `len` after the given prompt.
    pub fn fully_masked(prompt: Vec<u32>, len: usize, vocab: &Vocabulary) -> Self {
        MaskedState { prompt, response: vec![vocab.mask_id; len], mask_id: vocab.mask_id }
    }

    /// Response indices currently holding `[MASK]`, in ascending order.
    pub fn masked_positions(&self) -> Vec<usize> {
        self.response
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == self.mask_id)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.response[pos] == self.mask_id
    }

    pub fn mask_count(&self) -> usize {
        self.response.iter().filter(|&&t| t == self.mask_id).count()
    }

    /// Commit a concrete token at a masked response position.
    pub fn reveal(&mut self, pos: usize, token: u32) {
        debug_assert!(self.is_masked(pos), "reveal on an unmasked position");
        debug_assert_ne!(token, self.mask_id);
        self.response[pos] = token;
    }

    /// Prompt followed by response, as fed to the denoiser.
    pub fn full_sequence(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.prompt.len() + self.response.len());
        out.extend_from_slice(&self.prompt);
        out.extend_from_slice(&self.response);
        out
    }

    /// Absolute input index of a response position.
    pub fn response_offset(&self) -> usize {
        self.prompt.len()
    }
}

/// Mask each response position independently with probability `t`; the
/// prompt is untouched.
pub fn corrupt(
    prompt: &[u32],
    x0_response: &[u32],
    vocab: &Vocabulary,
    t: f64,
    rng: &mut impl Rng,
) -> Result<MaskedState, CorruptionError> {
    if !(0.0..=1.0).contains(&t) || t.is_nan() {
        return Err(CorruptionError::BadLevel(t));
    }
    if x0_response.iter().chain(prompt).any(|&x| x == vocab.mask_id) {
        return Err(CorruptionError::MaskInClean);
    }
    let response = x0_response
        .iter()
        .map(|&x| if rng.gen_range(0.0f64..1.0) < t { vocab.mask_id } else { x })
        .collect();
    Ok(MaskedState { prompt: prompt.to_vec(), response, mask_id: vocab.mask_id })
}
