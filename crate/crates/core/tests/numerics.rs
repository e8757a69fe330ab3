//! Gradient checks for every tape primitive against a central-difference
//! oracle, plus end-to-end checks on small composed networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tadlab::numerics::record_forward;
use tadlab::{Tape, Tensor, Var};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn rand_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(m, n, (0..m * n).map(|_| rng.gen_range(lo..hi)).collect())
}

fn rand_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Evaluate the scalar function on the given inputs.
fn eval(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

/// Analytic gradients of every input element must match the central
/// difference within REL_TOL relative error.
fn check_grads(name: &str, inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).expect("scalar output");
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.data.len() {
            let mut plus = inputs.to_vec();
            plus[i].data[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data[j] -= H;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * H);
            let analytic = grads.wrt(vars[i]).map_or(0.0, |g| g.data[j]);
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            let rel = (numeric - analytic).abs() / denom;
            assert!(
                rel < REL_TOL,
                "{name}: input {i} elem {j}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}

/// Weighted reduction so upstream gradients are non-uniform.
fn weighted_sum(tape: &mut Tape, v: Var, w: &Tensor) -> Var {
    let wl = tape.leaf(w.clone());
    let prod = tape.mul(v, wl);
    tape.sum(prod)
}

#[test]
fn gradcheck_elementwise_and_row_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);
    let b = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);
    let row = rand_vector(&mut rng, 4, -2.0, 2.0);
    let w = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);

    let wa = w.clone();
    check_grads("add", &[a.clone(), b.clone()], &move |t, v| {
        let y = t.add(v[0], v[1]);
        weighted_sum(t, y, &wa)
    });
    let wb = w.clone();
    check_grads("mul", &[a.clone(), b.clone()], &move |t, v| {
        let y = t.mul(v[0], v[1]);
        weighted_sum(t, y, &wb)
    });
    let wc = w.clone();
    check_grads("add_row", &[a.clone(), row.clone()], &move |t, v| {
        let y = t.add_row(v[0], v[1]);
        weighted_sum(t, y, &wc)
    });
    let wd = w.clone();
    check_grads("mul_row", &[a.clone(), row.clone()], &move |t, v| {
        let y = t.mul_row(v[0], v[1]);
        weighted_sum(t, y, &wd)
    });
    let we = w.clone();
    check_grads("scale", std::slice::from_ref(&a), &move |t, v| {
        let y = t.scale(v[0], -1.7);
        weighted_sum(t, y, &we)
    });
    let wf = w;
    check_grads("gelu", &[a], &move |t, v| {
        let y = t.gelu(v[0]);
        weighted_sum(t, y, &wf)
    });
}

#[test]
fn gradcheck_matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_matrix(&mut rng, 3, 5, -2.0, 2.0);
    let b = rand_matrix(&mut rng, 5, 4, -2.0, 2.0);
    let bt = rand_matrix(&mut rng, 4, 5, -2.0, 2.0);
    let w = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);

    let wa = w.clone();
    check_grads("matmul", &[a.clone(), b], &move |t, v| {
        let y = t.matmul(v[0], v[1]);
        weighted_sum(t, y, &wa)
    });
    let wb = w;
    check_grads("matmul_nt", &[a, bt], &move |t, v| {
        let y = t.matmul_nt(v[0], v[1]);
        weighted_sum(t, y, &wb)
    });
}

#[test]
fn gradcheck_softmax_log_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = rand_matrix(&mut rng, 3, 5, -2.0, 2.0);
    let pos = rand_matrix(&mut rng, 3, 5, 0.5, 2.5);
    let w = rand_matrix(&mut rng, 3, 5, -2.0, 2.0);

    let wa = w.clone();
    check_grads("softmax_rows", std::slice::from_ref(&a), &move |t, v| {
        let y = t.softmax_rows(v[0]);
        weighted_sum(t, y, &wa)
    });
    let wb = w.clone();
    check_grads("log_softmax_rows", std::slice::from_ref(&a), &move |t, v| {
        let y = t.log_softmax_rows(v[0]);
        weighted_sum(t, y, &wb)
    });
    let wc = w.clone();
    check_grads("log", &[pos], &move |t, v| {
        let y = t.log(v[0]);
        weighted_sum(t, y, &wc)
    });
    let wd = w.clone();
    check_grads("exp", std::slice::from_ref(&a), &move |t, v| {
        let y = t.exp(v[0]);
        weighted_sum(t, y, &wd)
    });
    let we = w;
    check_grads("layer_norm_rows", &[a], &move |t, v| {
        let y = t.layer_norm_rows(v[0], 1e-5);
        weighted_sum(t, y, &we)
    });
}

#[test]
fn gradcheck_gather_slice_concat_reduce() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = rand_matrix(&mut rng, 5, 4, -2.0, 2.0);

    let w2 = rand_matrix(&mut rng, 3, 4, -2.0, 2.0);
    check_grads("gather_rows", std::slice::from_ref(&a), &move |t, v| {
        // Repeated index exercises gradient accumulation.
        let y = t.gather_rows(v[0], &[4, 1, 4]);
        weighted_sum(t, y, &w2)
    });
    let w3 = rand_vector(&mut rng, 3, -2.0, 2.0);
    check_grads("gather_elems", std::slice::from_ref(&a), &move |t, v| {
        let y = t.gather_elems(v[0], &[(0, 3), (2, 0), (0, 3)]);
        weighted_sum(t, y, &w3)
    });
    let w4 = rand_matrix(&mut rng, 2, 4, -2.0, 2.0);
    check_grads("slice_rows", std::slice::from_ref(&a), &move |t, v| {
        let y = t.slice_rows(v[0], 1, 2);
        weighted_sum(t, y, &w4)
    });
    let w5 = rand_matrix(&mut rng, 5, 2, -2.0, 2.0);
    check_grads("slice_cols", std::slice::from_ref(&a), &move |t, v| {
        let y = t.slice_cols(v[0], 1, 2);
        weighted_sum(t, y, &w5)
    });
    let w6 = rand_matrix(&mut rng, 5, 6, -2.0, 2.0);
    check_grads("concat_cols", std::slice::from_ref(&a), &move |t, v| {
        let left = t.slice_cols(v[0], 0, 2);
        let right = t.slice_cols(v[0], 2, 2);
        let y = t.concat_cols(&[left, right, left]);
        weighted_sum(t, y, &w6)
    });
    check_grads("sum", std::slice::from_ref(&a), &|t, v| t.sum(v[0]));
    check_grads("mean", &[a], &|t, v| t.mean(v[0]));
}

#[test]
fn record_forward_hand_examples() {
    // d/dx x^2 = 2x at x = 3.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.mul(x, x);
    assert_eq!(tape.value(y).item(), 9.0);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 6.0);

    let (sm, _, _) = record_forward(|t| {
        let x = t.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]));
        t.softmax_rows(x)
    });
    assert_eq!(sm.data, vec![0.5, 0.5]);

    let (le, _, _) = record_forward(|t| {
        let x = t.leaf(Tensor::scalar(1.7));
        let e = t.exp(x);
        t.log(e)
    });
    assert!((le.item() - 1.7).abs() < 1e-12);
}

#[test]
fn softmax_cross_entropy_gradient_is_probs_minus_onehot() {
    let logits = Tensor::matrix(1, 4, vec![0.3, -1.2, 0.8, 0.1]);
    let target = 2usize;
    let mut tape = Tape::new();
    let x = tape.leaf(logits.clone());
    let lsm = tape.log_softmax_rows(x);
    let picked = tape.gather_elems(lsm, &[(0, target)]);
    let s = tape.sum(picked);
    let loss = tape.scale(s, -1.0);
    let g = tape.backward(loss).unwrap();
    let grad = g.wrt(x).unwrap();
    let probs = tadlab::numerics::softmax_row(&logits.data);
    for (k, (&gk, &pk)) in grad.data.iter().zip(&probs).enumerate() {
        let expect = if k == target { pk - 1.0 } else { pk };
        assert!((gk - expect).abs() < 1e-12, "component {k}: {gk} vs {expect}");
    }
}

#[test]
fn gradcheck_two_layer_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = rand_matrix(&mut rng, 2, 3, -2.0, 2.0);
    let w1 = rand_matrix(&mut rng, 3, 4, -1.0, 1.0);
    let b1 = rand_vector(&mut rng, 4, -1.0, 1.0);
    let w2 = rand_matrix(&mut rng, 4, 2, -1.0, 1.0);
    let b2 = rand_vector(&mut rng, 2, -1.0, 1.0);
    check_grads("two_layer", &[x, w1, b1, w2, b2], &|t, v| {
        let h = t.matmul(v[0], v[1]);
        let h = t.add_row(h, v[2]);
        let h = t.gelu(h);
        let h = t.layer_norm_rows(h, 1e-5);
        let o = t.matmul(h, v[3]);
        let o = t.add_row(o, v[4]);
        let lsm = t.log_softmax_rows(o);
        let picked = t.gather_elems(lsm, &[(0, 1), (1, 0)]);
        let m = t.mean(picked);
        t.scale(m, -1.0)
    });
}

#[test]
fn backward_rejects_non_scalar_output() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let y = tape.scale(x, 2.0);
    let err = match tape.backward(y) {
        Err(e) => e,
        Ok(_) => panic!("non-scalar backward must fail"),
    };
    assert!(err.to_string().contains("scalar"));
}

#[test]
fn tape_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = rand_matrix(&mut rng, 4, 4, -2.0, 2.0);
        let mut tape = Tape::new();
        let x = tape.leaf(a);
        let h = tape.softmax_rows(x);
        let y = tape.sum(h);
        let g = tape.backward(y).unwrap();
        (tape.value(y).item(), g.wrt(x).unwrap().clone())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    assert_eq!(g1, g2);
}

#[test]
fn generic_f32_instantiation() {
    use tadlab::numerics::{Tape as GTape, Tensor as GTensor};
    let mut tape: GTape<f32> = GTape::new();
    let x = tape.leaf(GTensor::scalar(2.0f32));
    let y = tape.mul(x, x);
    let g = tape.backward(y).unwrap();
    assert_eq!(tape.value(y).item(), 4.0f32);
    assert_eq!(g.wrt(x).unwrap().item(), 4.0f32);
}
