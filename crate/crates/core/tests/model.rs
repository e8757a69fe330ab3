//! Denoiser behavior: untrained uniformity, loss hand values, training
//! determinism, checkpoint integrity, and a finite-difference check of the
//! full transformer gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tadlab::corruption::{corrupt, MaskedState};
use tadlab::model::{
    denoise_forward, forward, mdlm_loss_on_tape, train_base, BaseTrainConfig, DenoiserParams,
    HyperParams, ModelError, TrainItem, Vocabulary,
};
use tadlab::Tape;

fn tiny_hp() -> HyperParams {
    HyperParams { layers: 1, width: 16, heads: 2, max_len: 12, vocab_size: 10 }
}

fn tiny_vocab() -> Vocabulary {
    Vocabulary::new(10, 1, 0)
}

fn tiny_corpus() -> Vec<TrainItem> {
    vec![
        TrainItem { prompt: vec![2, 3], response: vec![4, 5, 6] },
        TrainItem { prompt: vec![3, 2], response: vec![6, 5, 4] },
        TrainItem { prompt: vec![7, 8], response: vec![9, 2, 3] },
    ]
}

#[test]
fn untrained_model_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let out = forward(&params, &[2, 3, 4]).unwrap();
    let v = params.hp.vocab_size;
    for pos in 0..3 {
        for p in out.probs(pos) {
            assert!((p - 1.0 / v as f64).abs() < 1e-12);
        }
        assert!((out.entropy(pos) - (v as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn untrained_mdlm_loss_hand_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let vocab = tiny_vocab();
    let x0 = vec![4u32, 5, 6];
    // t = 1 masks everything, so the loss is (1/t) * m * ln V exactly.
    let state = corrupt(&[2, 3], &x0, &vocab, 1.0, &mut rng).unwrap();
    let mut tape = Tape::new();
    let (loss, _) = mdlm_loss_on_tape(&mut tape, &params, &x0, &state, 1.0).unwrap().unwrap();
    let expect = 3.0 * (10.0f64).ln();
    assert!((tape.value(loss).item() - expect).abs() < 1e-10);

    // Same masked state scored at t = 0.5 doubles the weight.
    let mut tape = Tape::new();
    let (loss, _) = mdlm_loss_on_tape(&mut tape, &params, &x0, &state, 0.5).unwrap().unwrap();
    assert!((tape.value(loss).item() - 2.0 * expect).abs() < 1e-10);
}

#[test]
fn no_masked_positions_means_no_loss_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let x0 = vec![4u32, 5, 6];
    let state = MaskedState { prompt: vec![2, 3], response: x0.clone(), mask_id: 1 };
    let mut tape = Tape::new();
    assert!(mdlm_loss_on_tape(&mut tape, &params, &x0, &state, 0.5).unwrap().is_none());
}

#[test]
fn corruption_level_bounds_are_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let x0 = vec![4u32];
    let state = MaskedState { prompt: vec![2], response: vec![1], mask_id: 1 };
    let mut tape = Tape::new();
    for t in [0.0, -0.5, 1.5] {
        let err = mdlm_loss_on_tape(&mut tape, &params, &x0, &state, t);
        assert!(matches!(err, Err(ModelError::BadLevel(_))), "t = {t}");
    }
}

#[test]
fn over_length_and_bad_token_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let long: Vec<u32> = vec![2; 13];
    assert!(matches!(forward(&params, &long), Err(ModelError::OverLength { .. })));
    assert!(matches!(forward(&params, &[2, 99]), Err(ModelError::BadToken(99, _))));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = BaseTrainConfig { lr: 0.0, batch_size: 2, epochs: 2, t_min: 0.01 };
    let (params, _) =
        train_base(tiny_hp(), tiny_vocab(), &config, &tiny_corpus(), &mut rng).unwrap();
    let mut rng2 = ChaCha8Rng::seed_from_u64(8);
    let fresh = DenoiserParams::init(tiny_hp(), &mut rng2);
    assert!(params.bit_equal(&fresh));
}

#[test]
fn training_is_bit_deterministic_under_seed() {
    let config = BaseTrainConfig { lr: 1e-3, batch_size: 2, epochs: 2, t_min: 0.01 };
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        train_base(tiny_hp(), tiny_vocab(), &config, &tiny_corpus(), &mut rng).unwrap()
    };
    let (p1, l1) = run(42);
    let (p2, l2) = run(42);
    assert!(p1.bit_equal(&p2));
    assert_eq!(
        l1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        l2.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    let (p3, _) = run(43);
    assert!(!p1.bit_equal(&p3));
}

#[test]
fn training_reduces_loss() {
    let config = BaseTrainConfig { lr: 1e-3, batch_size: 2, epochs: 30, t_min: 0.01 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (_, losses) =
        train_base(tiny_hp(), tiny_vocab(), &config, &tiny_corpus(), &mut rng).unwrap();
    let first = losses[..3].iter().sum::<f64>() / 3.0;
    let last = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(last < first, "loss did not drop: {first} -> {last}");
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    params.save(&path).unwrap();
    let loaded = DenoiserParams::load(&path).unwrap();
    assert!(params.bit_equal(&loaded));
    assert_eq!(params.hp, loaded.hp);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    params.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let truncated = &bytes[..bytes.len() - 7];
    std::fs::write(&path, truncated).unwrap();
    assert!(DenoiserParams::load(&path).is_err());

    let mut padded = bytes.clone();
    padded.extend_from_slice(&[0u8; 8]);
    std::fs::write(&path, &padded).unwrap();
    assert!(DenoiserParams::load(&path).is_err());

    let mut bad_magic = bytes;
    bad_magic[0] ^= 0xff;
    std::fs::write(&path, &bad_magic).unwrap();
    assert!(DenoiserParams::load(&path).is_err());
}

#[test]
fn argmax_tie_breaks_toward_lowest_token_id() {
    // Untrained output is exactly uniform, so every token ties.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let state = MaskedState { prompt: vec![2], response: vec![1, 1], mask_id: 1 };
    let out = denoise_forward(&params, &state).unwrap();
    let (token, p) = out.top(1);
    assert_eq!(token, 0);
    assert!((p - 0.1).abs() < 1e-12);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = DenoiserParams::init(tiny_hp(), &mut rng);
    let vocab = tiny_vocab();
    let x0 = vec![4u32, 5, 6];
    let state = corrupt(&[2, 3], &x0, &vocab, 0.7, &mut rng).unwrap();
    assert!(state.mask_count() > 0);

    let eval = |p: &DenoiserParams| {
        let mut tape = Tape::new();
        let (loss, _) = mdlm_loss_on_tape(&mut tape, p, &x0, &state, 0.7).unwrap().unwrap();
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let (loss, param_vars) =
        mdlm_loss_on_tape(&mut tape, &params, &x0, &state, 0.7).unwrap().unwrap();
    let grads = tape.backward(loss).expect("scalar loss");

    let h = 1e-5;
    let n_tensors = params.tensors().len();
    let mut checked = 0usize;
    for ti in 0..n_tensors {
        // A few random coordinates per tensor keeps this fast but broad.
        let len = params.tensors()[ti].len();
        for _ in 0..2.min(len) {
            let j = rng.gen_range(0..len);
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data[j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let analytic = grads.wrt(param_vars[ti]).map_or(0.0, |g| g.data[j]);
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "tensor {ti} elem {j}: analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked > 20);
}
