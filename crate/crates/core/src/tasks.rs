//! Synthetic corpora with exact correctness oracles, plus exactly
//! enumerable probabilistic sources for factorization-gap analysis.
//!
//! One small token alphabet (digits, operators, lowercase letters, and the
//! reserved specials) is shared across all tasks so a single model serves
//! every corpus.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::DistributionTable;
use crate::model::{TrainItem, Vocabulary};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const EOS: u32 = 2;
pub const SEP: u32 = 3;
pub const PLUS: u32 = 4;
pub const EQUALS: u32 = 5;
pub const DIGIT_BASE: u32 = 6;
pub const LETTER_BASE: u32 = 16;
pub const VOCAB_SIZE: usize = 42;

pub fn vocabulary() -> Vocabulary {
    Vocabulary::new(VOCAB_SIZE, MASK, PAD)
}

pub fn digit(d: u32) -> u32 {
    debug_assert!(d < 10);
    DIGIT_BASE + d
}

pub fn letter(c: char) -> u32 {
    debug_assert!(c.is_ascii_lowercase());
    LETTER_BASE + (c as u32 - 'a' as u32)
}

pub fn token_to_char(t: u32) -> char {
    match t {
        PAD => '_',
        MASK => '#',
        EOS => '$',
        SEP => '|',
        PLUS => '+',
        EQUALS => '=',
        DIGIT_BASE..=15 => char::from_digit(t - DIGIT_BASE, 10).unwrap(),
        LETTER_BASE..=41 => char::from_u32('a' as u32 + t - LETTER_BASE).unwrap(),
        _ => '?',
    }
}

pub fn tokens_to_text(tokens: &[u32]) -> String {
    tokens.iter().map(|&t| token_to_char(t)).collect()
}

pub fn text_to_tokens(text: &str) -> Vec<u32> {
    text.chars()
        .map(|c| match c {
            '_' => PAD,
            '#' => MASK,
            '$' => EOS,
            '|' => SEP,
            '+' => PLUS,
            '=' => EQUALS,
            '0'..='9' => digit(c.to_digit(10).unwrap()),
            'a'..='z' => letter(c),
            _ => panic!("unmapped character {c:?}"),
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown task id {0:?}")]
    UnknownTask(String),
    #[error("joint table too large: {0} entries (limit {1})")]
    TableTooLarge(u128, u64),
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Reverse,
    Arith,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Copy => write!(f, "copy"),
            TaskKind::Reverse => write!(f, "reverse"),
            TaskKind::Arith => write!(f, "arith"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;
    fn from_str(s: &str) -> Result<Self, TaskError> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "reverse" => Ok(TaskKind::Reverse),
            "arith" => Ok(TaskKind::Arith),
            other => Err(TaskError::UnknownTask(other.to_string())),
        }
    }
}

/// Prompt/ground-truth pair in token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAnswerPair {
    pub task: TaskKind,
    pub prompt_ids: Vec<u32>,
    pub answer_ids: Vec<u32>,
    pub prompt_text: String,
    pub answer_text: String,
}

/// Shape parameters for corpus generation.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// Inclusive range of letter-string lengths (copy/reverse).
    pub word_len: (usize, usize),
    /// Inclusive range of operand counts (arith).
    pub operands: (usize, usize),
}

impl TaskSpec {
    pub fn new(task: TaskKind) -> Self {
        TaskSpec { task, word_len: (3, 6), operands: (2, 4) }
    }

    pub fn with_operands(mut self, lo: usize, hi: usize) -> Self {
        self.operands = (lo, hi);
        self
    }

    pub fn with_word_len(mut self, lo: usize, hi: usize) -> Self {
        self.word_len = (lo, hi);
        self
    }
}

fn make_pair(task: TaskKind, prompt_ids: Vec<u32>, answer_ids: Vec<u32>) -> PromptAnswerPair {
    let prompt_text = tokens_to_text(&prompt_ids);
    let answer_text = tokens_to_text(&answer_ids);
    PromptAnswerPair { task, prompt_ids, answer_ids, prompt_text, answer_text }
}

/// Deterministic-under-seed corpus generation.
pub fn generate_corpus(
    spec: &TaskSpec,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<PromptAnswerPair> {
    assert!(n > 0, "corpus size must be positive");
    (0..n)
        .map(|_| match spec.task {
            TaskKind::Copy | TaskKind::Reverse => {
                let len = rng.gen_range(spec.word_len.0..=spec.word_len.1);
                let word: Vec<u32> =
                    (0..len).map(|_| LETTER_BASE + rng.gen_range(0..26)).collect();
                let answer = if spec.task == TaskKind::Copy {
                    word.clone()
                } else {
                    word.iter().rev().cloned().collect()
                };
                make_pair(spec.task, word, answer)
            }
            TaskKind::Arith => {
                let k = rng.gen_range(spec.operands.0..=spec.operands.1);
                let digits: Vec<u32> = (0..k).map(|_| rng.gen_range(0..10)).collect();
                let mut prompt = Vec::with_capacity(2 * k);
                for (i, &d) in digits.iter().enumerate() {
                    if i > 0 {
                        prompt.push(PLUS);
                    }
                    prompt.push(digit(d));
                }
                prompt.push(EQUALS);
                let sum: u32 = digits.iter().sum::<u32>() % 10;
                make_pair(TaskKind::Arith, prompt, vec![digit(sum)])
            }
        })
        .collect()
}

/// Deterministic correctness checker for a task. Malformed output is simply
/// incorrect, never an error.
#[derive(Debug, Clone, Copy)]
pub struct TaskOracle {
    pub task: TaskKind,
}

impl TaskOracle {
    pub fn new(task: TaskKind) -> Self {
        TaskOracle { task }
    }

    /// Expected answer tokens for a prompt, recomputed from the prompt alone.
    pub fn expected(&self, prompt: &[u32]) -> Option<Vec<u32>> {
        match self.task {
            TaskKind::Copy => Some(prompt.to_vec()),
            TaskKind::Reverse => Some(prompt.iter().rev().cloned().collect()),
            TaskKind::Arith => {
                let mut sum = 0u32;
                let mut expect_digit = true;
                let mut it = prompt.iter().peekable();
                while let Some(&t) = it.next() {
                    match t {
                        DIGIT_BASE..=15 if expect_digit => {
                            sum = (sum + (t - DIGIT_BASE)) % 10;
                            expect_digit = false;
                        }
                        PLUS if !expect_digit => expect_digit = true,
                        EQUALS if !expect_digit && it.peek().is_none() => {
                            return Some(vec![digit(sum)]);
                        }
                        _ => return None,
                    }
                }
                None
            }
        }
    }

    /// Check a generated output against the prompt; trailing padding is
    /// stripped before comparison.
    pub fn check(&self, prompt: &[u32], output: &[u32]) -> bool {
        let Some(expected) = self.expected(prompt) else {
            return false;
        };
        strip_padding(output) == expected.as_slice()
    }
}

/// Drop trailing PAD tokens (the fixed-length generation filler).
pub fn strip_padding(output: &[u32]) -> &[u32] {
    let mut end = output.len();
    while end > 0 && output[end - 1] == PAD {
        end -= 1;
    }
    &output[..end]
}

/// Pad an answer to the fixed response length with PAD.
pub fn pad_answer(answer: &[u32], gen_len: usize) -> Vec<u32> {
    assert!(answer.len() <= gen_len, "answer longer than generation budget");
    let mut out = answer.to_vec();
    out.resize(gen_len, PAD);
    out
}

/// Turn prompt/answer pairs into training items with a fixed response slot.
///
/// With `privileged_mix` each pair contributes a second item whose prompt
/// carries the ground-truth answer after SEP, matching the teacher input
/// layout, so one model serves both the plain and the privileged roles.
pub fn training_items(
    pairs: &[PromptAnswerPair],
    gen_len: usize,
    privileged_mix: bool,
) -> Vec<TrainItem> {
    let mut items = Vec::with_capacity(pairs.len() * if privileged_mix { 2 } else { 1 });
    for pair in pairs {
        let response = pad_answer(&pair.answer_ids, gen_len);
        items.push(TrainItem { prompt: pair.prompt_ids.clone(), response: response.clone() });
        if privileged_mix {
            let mut prompt = pair.prompt_ids.clone();
            prompt.push(SEP);
            prompt.extend_from_slice(&pair.answer_ids);
            items.push(TrainItem { prompt, response });
        }
    }
    items
}

pub fn save_corpus(pairs: &[PromptAnswerPair], path: &Path) -> Result<(), TaskError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p).map_err(|e| TaskError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<PromptAnswerPair>, TaskError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PromptAnswerPair = serde_json::from_str(&line)
            .map_err(|e| TaskError::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(pair);
    }
    Ok(out)
}

/// Order-1 Markov chain over a small alphabet; supplies an exactly
/// computable joint distribution.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    pub alphabet: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

const JOINT_LIMIT: u64 = 1_000_000;

impl MarkovSource {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Self {
        let alphabet = initial.len();
        assert!((initial.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "initial must sum to 1");
        assert_eq!(transition.len(), alphabet);
        for row in &transition {
            assert_eq!(row.len(), alphabet);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12, "rows must sum to 1");
        }
        MarkovSource { alphabet, initial, transition }
    }

    /// Independent uniform source (zero-gap reference).
    pub fn iid_uniform(alphabet: usize) -> Self {
        let p = 1.0 / alphabet as f64;
        MarkovSource::new(vec![p; alphabet], vec![vec![p; alphabet]; alphabet])
    }

    /// Binary chain that stays in place with probability `stay`.
    pub fn sticky_binary(stay: f64) -> Self {
        MarkovSource::new(
            vec![0.5, 0.5],
            vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
        )
    }

    /// Chain-rule probability of one sequence.
    pub fn sequence_prob(&self, seq: &[usize]) -> f64 {
        let mut p = self.initial[seq[0]];
        for w in seq.windows(2) {
            p *= self.transition[w[0]][w[1]];
        }
        p
    }

    /// Exact joint distribution table over all `alphabet^K` sequences.
    pub fn enumerate_joint(&self, k: usize) -> Result<DistributionTable, TaskError> {
        let total = (self.alphabet as u128).pow(k as u32);
        if total > JOINT_LIMIT as u128 {
            return Err(TaskError::TableTooLarge(total, JOINT_LIMIT));
        }
        let mut probs = Vec::with_capacity(total as usize);
        let mut seq = vec![0usize; k];
        for idx in 0..total as usize {
            DistributionTable::decode_index(idx, self.alphabet, k, &mut seq);
            probs.push(self.sequence_prob(&seq));
        }
        Ok(DistributionTable::new(self.alphabet, k, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn copy_and_reverse_definitions() {
        let o = TaskOracle::new(TaskKind::Copy);
        let abc = text_to_tokens("abc");
        assert_eq!(o.expected(&abc).unwrap(), abc);
        let r = TaskOracle::new(TaskKind::Reverse);
        assert_eq!(r.expected(&abc).unwrap(), text_to_tokens("cba"));
    }

    #[test]
    fn arith_hand_examples() {
        let o = TaskOracle::new(TaskKind::Arith);
        assert_eq!(o.expected(&text_to_tokens("3+4+5=")).unwrap(), vec![digit(2)]);
        assert_eq!(o.expected(&text_to_tokens("3+4+2=")).unwrap(), vec![digit(9)]);
        assert_eq!(o.expected(&text_to_tokens("3+4=")).unwrap(), vec![digit(7)]);
    }

    #[test]
    fn oracle_check_examples() {
        let copy = TaskOracle::new(TaskKind::Copy);
        assert!(copy.check(&text_to_tokens("abc"), &text_to_tokens("abc")));
        assert!(!copy.check(&text_to_tokens("abc"), &text_to_tokens("abd")));
        let arith = TaskOracle::new(TaskKind::Arith);
        assert!(arith.check(&text_to_tokens("3+4="), &text_to_tokens("7___")));
        assert!(!arith.check(&text_to_tokens("3+4="), &text_to_tokens("8")));
    }

    #[test]
    fn malformed_output_is_incorrect_not_error() {
        let arith = TaskOracle::new(TaskKind::Arith);
        assert!(!arith.check(&text_to_tokens("3+4="), &text_to_tokens("ab")));
        assert!(!arith.check(&text_to_tokens("++="), &text_to_tokens("7")));
    }

    #[test]
    fn generated_pairs_pass_their_own_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for task in [TaskKind::Copy, TaskKind::Reverse, TaskKind::Arith] {
            let spec = TaskSpec::new(task);
            let oracle = TaskOracle::new(task);
            for p in generate_corpus(&spec, 200, &mut rng) {
                assert!(oracle.check(&p.prompt_ids, &p.answer_ids), "{p:?}");
            }
        }
    }

    #[test]
    fn corpus_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs = generate_corpus(&TaskSpec::new(TaskKind::Arith), 20, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&pairs, &path).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), pairs);
    }

    #[test]
    fn iid_uniform_joint_is_flat() {
        let table = MarkovSource::iid_uniform(2).enumerate_joint(2).unwrap();
        for i in 0..4 {
            assert!((table.probs[i] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn correlated_binary_joint() {
        // Uniform over {00, 11}.
        let src = MarkovSource::sticky_binary(1.0);
        let t = src.enumerate_joint(2).unwrap();
        assert_eq!(t.probs, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn sticky_chain_hand_values() {
        let src = MarkovSource::sticky_binary(0.9);
        let t = src.enumerate_joint(2).unwrap();
        let expected = [0.45, 0.05, 0.05, 0.45];
        for (p, e) in t.probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_marginals_match_direct_computation() {
        let src = MarkovSource::sticky_binary(0.8);
        let t = src.enumerate_joint(4).unwrap();
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Position-0 marginal is the initial distribution.
        let m0 = t.marginal(0);
        assert!((m0[0] - 0.5).abs() < 1e-9 && (m0[1] - 0.5).abs() < 1e-9);
        // Position-1 marginal via direct single-position computation.
        let direct: Vec<f64> = (0..2)
            .map(|b| (0..2).map(|a| src.initial[a] * src.transition[a][b]).sum())
            .collect();
        let m1 = t.marginal(1);
        for (x, y) in m1.iter().zip(direct) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn oversized_table_rejected() {
        let src = MarkovSource::iid_uniform(10);
        assert!(src.enumerate_joint(7).is_err());
    }
}
