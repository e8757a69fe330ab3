//! The tiny bidirectional denoiser and its masked-diffusion training
//! objective.
//!
//! The denoiser is a standard pre-norm transformer encoder (no causal mask)
//! that maps a partially masked token sequence to a categorical distribution
//! over the vocabulary at every position. Only masked positions carry
//! training signal; unmasked positions receive their own token as input and
//! their output rows are ignored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::corruption::{corrupt, MaskedState};
use crate::numerics::softmax_row;
use crate::{Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input length {len} exceeds maximum {max}")]
    OverLength { len: usize, max: usize },
    #[error("token id {0} out of vocabulary range {1}")]
    BadToken(u32, usize),
    #[error("corruption level {0} out of range")]
    BadLevel(f64),
    #[error("non-finite model output")]
    NonFinite,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Token id space with the reserved `[MASK]` and padding ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub size: usize,
    pub mask_id: u32,
    pub pad_id: u32,
}

impl Vocabulary {
    pub fn new(size: usize, mask_id: u32, pad_id: u32) -> Self {
        assert!(mask_id != pad_id, "mask and pad ids must differ");
        assert!((mask_id as usize) < size && (pad_id as usize) < size);
        Vocabulary { size, mask_id, pad_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperParams {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl HyperParams {
    pub fn head_dim(&self) -> usize {
        assert_eq!(self.width % self.heads, 0, "width must divide by heads");
        self.width / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Full parameter set of the denoiser. Tensor declaration order (as returned
/// by [`DenoiserParams::tensors`]) is the serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub hp: HyperParams,
    pub embedding: Tensor,
    pub positional: Tensor,
    pub blocks: Vec<BlockParams>,
    pub ln_f_gain: Tensor,
    pub ln_f_bias: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

const LN_EPS: f64 = 1e-5;
const CKPT_MAGIC: &[u8; 8] = b"TADCKPT1";

fn randn<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    // Box-Muller; avoids a rand_distr dependency and stays reproducible.
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        out.push(r * (2.0 * std::f64::consts::PI * u2).cos() * std);
        if out.len() < n {
            out.push(r * (2.0 * std::f64::consts::PI * u2).sin() * std);
        }
    }
    out
}

impl DenoiserParams {
    /// Fresh parameters: small gaussian weights, identity layer norms, and a
    /// zero output head so an untrained model predicts uniform rows.
    pub fn init(hp: HyperParams, rng: &mut impl Rng) -> Self {
        let d = hp.width;
        let f = 4 * d;
        let std = 0.02;
        let mat = |rng: &mut dyn rand::RngCore, r: usize, c: usize| {
            Tensor::matrix(r, c, randn(rng, r * c, std))
        };
        let blocks = (0..hp.layers)
            .map(|_| BlockParams {
                ln1_gain: Tensor::vector(vec![1.0; d]),
                ln1_bias: Tensor::vector(vec![0.0; d]),
                wq: mat(rng, d, d),
                bq: Tensor::vector(vec![0.0; d]),
                wk: mat(rng, d, d),
                bk: Tensor::vector(vec![0.0; d]),
                wv: mat(rng, d, d),
                bv: Tensor::vector(vec![0.0; d]),
                wo: mat(rng, d, d),
                bo: Tensor::vector(vec![0.0; d]),
                ln2_gain: Tensor::vector(vec![1.0; d]),
                ln2_bias: Tensor::vector(vec![0.0; d]),
                w1: mat(rng, d, f),
                b1: Tensor::vector(vec![0.0; f]),
                w2: mat(rng, f, d),
                b2: Tensor::vector(vec![0.0; d]),
            })
            .collect();
        DenoiserParams {
            hp,
            embedding: mat(rng, hp.vocab_size, d),
            positional: mat(rng, hp.max_len, d),
            blocks,
            ln_f_gain: Tensor::vector(vec![1.0; d]),
            ln_f_bias: Tensor::vector(vec![0.0; d]),
            w_out: Tensor::zeros(vec![d, hp.vocab_size]),
            b_out: Tensor::vector(vec![0.0; hp.vocab_size]),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding, &self.positional];
        for b in &self.blocks {
            out.extend([
                &b.ln1_gain, &b.ln1_bias, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo,
                &b.bo, &b.ln2_gain, &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2,
            ]);
        }
        out.extend([&self.ln_f_gain, &self.ln_f_bias, &self.w_out, &self.b_out]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embedding, &mut self.positional];
        for b in &mut self.blocks {
            out.push(&mut b.ln1_gain);
            out.push(&mut b.ln1_bias);
            out.push(&mut b.wq);
            out.push(&mut b.bq);
            out.push(&mut b.wk);
            out.push(&mut b.bk);
            out.push(&mut b.wv);
            out.push(&mut b.bv);
            out.push(&mut b.wo);
            out.push(&mut b.bo);
            out.push(&mut b.ln2_gain);
            out.push(&mut b.ln2_bias);
            out.push(&mut b.w1);
            out.push(&mut b.b1);
            out.push(&mut b.w2);
            out.push(&mut b.b2);
        }
        out.push(&mut self.ln_f_gain);
        out.push(&mut self.ln_f_bias);
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }

    /// Bit-exact comparison across every tensor.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.hp == other.hp
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Serialize to the checkpoint format: magic string, u32 hyperparameter
    /// header, then raw little-endian f64 values in declaration order.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        for v in [
            self.hp.layers,
            self.hp.width,
            self.hp.heads,
            self.hp.max_len,
            self.hp.vocab_size,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for t in self.tensors() {
            for &x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(ModelError::Format("bad magic string".into()));
        }
        let mut u = [0u8; 4];
        let mut next = |r: &mut BufReader<File>| -> Result<usize, ModelError> {
            r.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u) as usize)
        };
        let hp = HyperParams {
            layers: next(&mut r)?,
            width: next(&mut r)?,
            heads: next(&mut r)?,
            max_len: next(&mut r)?,
            vocab_size: next(&mut r)?,
        };
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut params = DenoiserParams::init(hp, &mut rng);
        let mut buf = [0u8; 8];
        for t in params.tensors_mut() {
            for x in t.data.iter_mut() {
                r.read_exact(&mut buf).map_err(|_| {
                    ModelError::Format("checkpoint truncated".into())
                })?;
                *x = f64::from_le_bytes(buf);
            }
        }
        if r.read(&mut buf)? != 0 {
            return Err(ModelError::Format("trailing bytes after parameters".into()));
        }
        Ok(params)
    }
}

/// Logits for every input position; rows soften to distributions on demand.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub logits: Tensor,
}

impl DenoiserOutput {
    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.cols()
    }

    /// Categorical distribution at one position.
    pub fn probs(&self, pos: usize) -> Vec<f64> {
        softmax_row(self.logits.row(pos))
    }

    /// Distribution softened by dividing logits by `tau` before softmax.
    pub fn probs_softened(&self, pos: usize, tau: f64) -> Vec<f64> {
        let row: Vec<f64> = self.logits.row(pos).iter().map(|x| x / tau).collect();
        softmax_row(&row)
    }

    /// `(argmax id, probability)` at one position.
    pub fn top(&self, pos: usize) -> (u32, f64) {
        let p = self.probs(pos);
        let (mut best, mut bp) = (0usize, f64::NEG_INFINITY);
        for (i, &x) in p.iter().enumerate() {
            if x > bp {
                best = i;
                bp = x;
            }
        }
        (best as u32, bp)
    }

    /// `(argmax id, probability)` at one position with one token id barred
    /// from selection. Decoding uses this with the mask id so a commit can
    /// never write `[MASK]` back into the sequence.
    pub fn top_excluding(&self, pos: usize, banned: u32) -> (u32, f64) {
        let p = self.probs(pos);
        let (mut best, mut bp) = (0usize, f64::NEG_INFINITY);
        for (i, &x) in p.iter().enumerate() {
            if i as u32 != banned && x > bp {
                best = i;
                bp = x;
            }
        }
        (best as u32, bp)
    }

    /// Predictive entropy in nats at one position.
    pub fn entropy(&self, pos: usize) -> f64 {
        self.probs(pos)
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Taped forward pass: logits variable plus the parameter leaves in
/// declaration order (for gradient lookup).
pub struct TapedForward {
    pub logits: Var,
    pub param_vars: Vec<Var>,
}

/// Record the transformer forward pass for `tokens` on `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &DenoiserParams,
    tokens: &[u32],
) -> Result<TapedForward, ModelError> {
    let hp = params.hp;
    if tokens.len() > hp.max_len {
        return Err(ModelError::OverLength { len: tokens.len(), max: hp.max_len });
    }
    for &t in tokens {
        if t as usize >= hp.vocab_size {
            return Err(ModelError::BadToken(t, hp.vocab_size));
        }
    }
    let mut param_vars = Vec::new();
    let mut leaf = |tape: &mut Tape, t: &Tensor| {
        let v = tape.leaf(t.clone());
        param_vars.push(v);
        v
    };
    let emb = leaf(tape, &params.embedding);
    let pos = leaf(tape, &params.positional);
    let block_vars: Vec<Vec<Var>> = params
        .blocks
        .iter()
        .map(|b| {
            [
                &b.ln1_gain, &b.ln1_bias, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo,
                &b.bo, &b.ln2_gain, &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2,
            ]
            .iter()
            .map(|t| leaf(tape, t))
            .collect()
        })
        .collect();
    let ln_f_gain = leaf(tape, &params.ln_f_gain);
    let ln_f_bias = leaf(tape, &params.ln_f_bias);
    let w_out = leaf(tape, &params.w_out);
    let b_out = leaf(tape, &params.b_out);

    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let x0 = tape.gather_rows(emb, &ids);
    let p0 = tape.slice_rows(pos, 0, ids.len());
    let mut x = tape.add(x0, p0);
    let dh = hp.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    for bv in &block_vars {
        let [ln1_g, ln1_b, wq, bq, wk, bk, wv, bvv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2]: [Var; 16] =
            bv.as_slice().try_into().expect("block var count");
        let mut h = tape.layer_norm_rows(x, LN_EPS);
        h = tape.mul_row(h, ln1_g);
        h = tape.add_row(h, ln1_b);
        let q = tape.matmul(h, wq);
        let q = tape.add_row(q, bq);
        let k = tape.matmul(h, wk);
        let k = tape.add_row(k, bk);
        let v = tape.matmul(h, wv);
        let v = tape.add_row(v, bvv);
        let mut heads = Vec::with_capacity(hp.heads);
        for hd in 0..hp.heads {
            let qh = tape.slice_cols(q, hd * dh, dh);
            let kh = tape.slice_cols(k, hd * dh, dh);
            let vh = tape.slice_cols(v, hd * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, inv_sqrt);
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(&heads);
        let o = tape.matmul(cat, wo);
        let o = tape.add_row(o, bo);
        x = tape.add(x, o);

        let mut h2 = tape.layer_norm_rows(x, LN_EPS);
        h2 = tape.mul_row(h2, ln2_g);
        h2 = tape.add_row(h2, ln2_b);
        let f1 = tape.matmul(h2, w1);
        let f1 = tape.add_row(f1, b1);
        let f1 = tape.gelu(f1);
        let f2 = tape.matmul(f1, w2);
        let f2 = tape.add_row(f2, b2);
        x = tape.add(x, f2);
    }
    let mut hf = tape.layer_norm_rows(x, LN_EPS);
    hf = tape.mul_row(hf, ln_f_gain);
    hf = tape.add_row(hf, ln_f_bias);
    let logits = tape.matmul(hf, w_out);
    let logits = tape.add_row(logits, b_out);
    Ok(TapedForward { logits, param_vars })
}

/// Eager forward pass over a full token sequence.
pub fn forward(params: &DenoiserParams, tokens: &[u32]) -> Result<DenoiserOutput, ModelError> {
    let mut tape = Tape::new();
    let fwd = forward_on_tape(&mut tape, params, tokens)?;
    let logits = tape.value(fwd.logits).clone();
    if !logits.all_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok(DenoiserOutput { logits })
}

/// Full-distribution prediction at every position of a masked state.
///
/// Attention is bidirectional; callers are expected to read only the masked
/// response positions.
pub fn denoise_forward(
    params: &DenoiserParams,
    state: &MaskedState,
) -> Result<DenoiserOutput, ModelError> {
    forward(params, &state.full_sequence())
}

/// MDLM loss on an already-corrupted state, recorded on `tape` for gradients.
///
/// Returns `None` when the corruption left no masked positions (empty sum).
pub fn mdlm_loss_on_tape(
    tape: &mut Tape,
    params: &DenoiserParams,
    x0_response: &[u32],
    state: &MaskedState,
    t: f64,
) -> Result<Option<(Var, Vec<Var>)>, ModelError> {
    if t <= 0.0 || t > 1.0 {
        return Err(ModelError::BadLevel(t));
    }
    let masked = state.masked_positions();
    if masked.is_empty() {
        return Ok(None);
    }
    let fwd = forward_on_tape(tape, params, &state.full_sequence())?;
    let lsm = tape.log_softmax_rows(fwd.logits);
    let offset = state.prompt.len();
    let coords: Vec<(usize, usize)> = masked
        .iter()
        .map(|&i| (offset + i, x0_response[i] as usize))
        .collect();
    let picked = tape.gather_elems(lsm, &coords);
    let total = tape.sum(picked);
    let loss = tape.scale(total, -1.0 / t);
    Ok(Some((loss, fwd.param_vars)))
}

/// Monte-Carlo MDLM objective sample: corrupt `x_0` at level `t`, then score
/// the masked positions (Eq.-style `1/t` weighting).
pub fn mdlm_loss(
    params: &DenoiserParams,
    vocab: &Vocabulary,
    prompt: &[u32],
    x0_response: &[u32],
    t: f64,
    rng: &mut impl Rng,
) -> Result<f64, ModelError> {
    if t <= 0.0 || t > 1.0 {
        return Err(ModelError::BadLevel(t));
    }
    let state = corrupt(prompt, x0_response, vocab, t, rng).map_err(|_| ModelError::BadLevel(t))?;
    let mut tape = Tape::new();
    match mdlm_loss_on_tape(&mut tape, params, x0_response, &state, t)? {
        Some((loss, _)) => Ok(tape.value(loss).item()),
        None => Ok(0.0),
    }
}

/// One (prompt, clean response) training sequence.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct BaseTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Lower clamp for the corruption level; bounds the 1/t loss weight.
    pub t_min: f64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig { lr: 1e-3, batch_size: 16, epochs: 10, t_min: 0.01 }
    }
}

/// Adam optimizer over the flat tensor list of a parameter set.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &DenoiserParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut DenoiserParams, grads: &[Vec<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, t) in params.tensors_mut().into_iter().enumerate() {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for j in 0..t.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                t.data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Incremental MDLM trainer; [`train_base`] wraps it, and callers that need
/// between-epoch evaluation drive it directly.
pub struct BaseTrainer {
    pub params: DenoiserParams,
    pub vocab: Vocabulary,
    config: BaseTrainConfig,
    opt: Adam,
}

impl BaseTrainer {
    pub fn new(params: DenoiserParams, vocab: Vocabulary, config: BaseTrainConfig) -> Self {
        let opt = Adam::new(config.lr, &params);
        BaseTrainer { params, vocab, config, opt }
    }

    /// One pass over the corpus; returns the mean per-sequence loss.
    pub fn run_epoch(
        &mut self,
        corpus: &[TrainItem],
        rng: &mut impl Rng,
    ) -> Result<f64, ModelError> {
        self.run_batches(corpus, rng, usize::MAX).map(|(loss, _)| loss)
    }

    /// Run at most `max_batches` batches over a shuffled copy of the corpus.
    /// Returns `(mean loss, batches run)`.
    pub fn run_batches(
        &mut self,
        corpus: &[TrainItem],
        rng: &mut impl Rng,
        max_batches: usize,
    ) -> Result<(f64, usize), ModelError> {
        assert!(!corpus.is_empty(), "empty corpus");
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            if batches >= max_batches {
                break;
            }
            let mut grads: Vec<Vec<f64>> =
                self.params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let item = &corpus[i];
                let t = rng.gen_range(0.0f64..1.0).max(self.config.t_min);
                let state = corrupt(&item.prompt, &item.response, &self.vocab, t, rng)
                    .expect("valid corruption level");
                let mut tape = Tape::new();
                let Some((loss, param_vars)) =
                    mdlm_loss_on_tape(&mut tape, &self.params, &item.response, &state, t)?
                else {
                    continue;
                };
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(ModelError::Diverged { epoch: 0 });
                }
                loss_sum += value;
                loss_count += 1;
                let g = tape.backward(loss).expect("scalar loss");
                for (slot, var) in grads.iter_mut().zip(&param_vars) {
                    if let Some(gt) = g.wrt(*var) {
                        for (dst, &x) in slot.iter_mut().zip(&gt.data) {
                            *dst += x * scale;
                        }
                    }
                }
            }
            self.opt.apply(&mut self.params, &grads);
            batches += 1;
        }
        let mean = if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 };
        Ok((mean, batches))
    }
}

/// Train a fresh denoiser on the corpus; deterministic given the rng seed.
/// Returns the parameters and the per-epoch mean losses.
pub fn train_base(
    hp: HyperParams,
    vocab: Vocabulary,
    config: &BaseTrainConfig,
    corpus: &[TrainItem],
    rng: &mut impl Rng,
) -> Result<(DenoiserParams, Vec<f64>), ModelError> {
    assert!(!corpus.is_empty(), "empty corpus");
    let params = DenoiserParams::init(hp, rng);
    let mut trainer = BaseTrainer::new(params, vocab, config.clone());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = trainer
            .run_epoch(corpus, rng)
            .map_err(|e| match e {
                ModelError::Diverged { .. } => ModelError::Diverged { epoch },
                other => other,
            })?;
        epoch_losses.push(loss);
    }
    Ok((trainer.params, epoch_losses))
}
