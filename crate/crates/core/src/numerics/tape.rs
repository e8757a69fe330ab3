//! Computation tape: eager forward evaluation with recorded primitives and
//! reverse-mode backward.
//!
//! Supported primitives: add, mul, matmul (plain and B-transposed), softmax
//! and log-softmax over rows, log, exp, gather (rows and elements), sum,
//! mean, layer-norm over rows, gelu, plus structural slice/concat/broadcast
//! helpers. Anything else simply cannot be expressed against this interface.
//!
//! Shapes are validated eagerly; a mismatch is a programming error and
//! panics with a diagnostic. Non-finite values are caught by debug
//! assertions after every primitive.

use super::{fl, NumericsError, Scalar, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    /// Broadcast-add a row vector to every row of a matrix.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Broadcast-multiply every row of a matrix by a row vector.
    MulRow(Var, Var),
    MatMul(Var, Var),
    /// `a * b^T` without materializing the transpose.
    MatMulNT(Var, Var),
    Scale(Var, F),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Log(Var),
    Exp(Var),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<(usize, usize)>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    LayerNormRows(Var, F),
    Gelu(Var),
}

#[derive(Debug, Clone)]
struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
}

/// Ordered record of primitive operations; inputs always precede outputs.
#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the backward root with respect to `v`, if `v` influenced it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads[v.0].as_ref()
    }
}

/// Record a forward computation and return its output value with the tape.
pub fn record_forward<F: Scalar>(
    build: impl FnOnce(&mut Tape<F>) -> Var,
) -> (Tensor<F>, Tape<F>, Var) {
    let mut tape = Tape::new();
    let out = build(&mut tape);
    (tape.value(out).clone(), tape, out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Var {
        debug_assert!(value.all_finite(), "non-finite value on tape: {:?}", op_name(&op));
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "add: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x + y).collect();
        let shape = ta.shape.clone();
        self.push(Op::Add(a, b), Tensor::new(shape, data))
    }

    /// `a` is `[m, n]`, `row` is `[n]`; adds `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = (ta.rows(), ta.cols());
        assert_eq!(tr.shape, vec![n], "add_row: row length mismatch");
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for c in 0..n {
                data.push(ta.data[r * n + c] + tr.data[c]);
            }
        }
        self.push(Op::AddRow(a, row), Tensor::matrix(m, n, data))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "mul: shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect();
        let shape = ta.shape.clone();
        self.push(Op::Mul(a, b), Tensor::new(shape, data))
    }

    /// `a` is `[m, n]`, `row` is `[n]`; multiplies every row of `a` by `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        let (m, n) = (ta.rows(), ta.cols());
        assert_eq!(tr.shape, vec![n], "mul_row: row length mismatch");
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for c in 0..n {
                data.push(ta.data[r * n + c] * tr.data[c]);
            }
        }
        self.push(Op::MulRow(a, row), Tensor::matrix(m, n, data))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul: inner dimension mismatch");
        let value = matmul_raw(&ta.data, &tb.data, m, k, n);
        self.push(Op::MatMul(a, b), Tensor::matrix(m, n, value))
    }

    /// `a` is `[m, k]`, `b` is `[n, k]`; computes `a * b^T` as `[m, n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (n, k2) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul_nt: inner dimension mismatch");
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            let ar = &ta.data[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &tb.data[j * k..(j + 1) * k];
                let mut acc = F::zero();
                for l in 0..k {
                    acc += ar[l] * br[l];
                }
                data[i * n + j] = acc;
            }
        }
        self.push(Op::MatMulNT(a, b), Tensor::matrix(m, n, data))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x * c).collect();
        let shape = ta.shape.clone();
        self.push(Op::Scale(a, c), Tensor::new(shape, data))
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            data.extend(softmax_row(&ta.data[r * n..(r + 1) * n]));
        }
        self.push(Op::SoftmaxRows(a), Tensor::matrix(m, n, data))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = &ta.data[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&x| (x - max).exp()).fold(F::zero(), |s, x| s + x).ln() + max;
            data.extend(row.iter().map(|&x| x - lse));
        }
        self.push(Op::LogSoftmaxRows(a), Tensor::matrix(m, n, data))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x.ln()).collect();
        let shape = ta.shape.clone();
        self.push(Op::Log(a), Tensor::new(shape, data))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x.exp()).collect();
        let shape = ta.shape.clone();
        self.push(Op::Exp(a), Tensor::new(shape, data))
    }

    /// Gather whole rows of a matrix by index (used for embedding lookup).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            assert!(i < ta.rows(), "gather_rows: index {} out of range", i);
            data.extend_from_slice(ta.row(i));
        }
        self.push(Op::GatherRows(a, indices.to_vec()), Tensor::matrix(indices.len(), n, data))
    }

    /// Gather individual `(row, col)` elements of a matrix into a vector.
    pub fn gather_elems(&mut self, a: Var, coords: &[(usize, usize)]) -> Var {
        let ta = self.value(a);
        let data = coords.iter().map(|&(r, c)| ta.at(r, c)).collect();
        self.push(Op::GatherElems(a, coords.to_vec()), Tensor::vector(data))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        assert!(start + len <= ta.rows(), "slice_rows: out of range");
        let data = ta.data[start * n..(start + len) * n].to_vec();
        self.push(Op::SliceRows(a, start), Tensor::matrix(len, n, data))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        assert!(start + len <= n, "slice_cols: out of range");
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&ta.data[r * n + start..r * n + start + len]);
        }
        self.push(Op::SliceCols(a, start), Tensor::matrix(m, len, data))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let tp = self.value(p);
                assert_eq!(tp.rows(), m, "concat_cols: row mismatch");
                data.extend_from_slice(tp.row(r));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(m, total, data))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().fold(F::zero(), |acc, &x| acc + x);
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = fl::<F>(ta.len() as f64);
        let s = ta.data.iter().fold(F::zero(), |acc, &x| acc + x) / n;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Row-wise layer normalization (no learned affine; compose with
    /// `mul_row`/`add_row` for gain and bias).
    pub fn layer_norm_rows(&mut self, a: Var, eps: F) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let nf = fl::<F>(n as f64);
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = &ta.data[r * n..(r + 1) * n];
            let mu = row.iter().fold(F::zero(), |s, &x| s + x) / nf;
            let var = row.iter().fold(F::zero(), |s, &x| s + (x - mu) * (x - mu)) / nf;
            let inv = (var + eps).sqrt().recip();
            data.extend(row.iter().map(|&x| (x - mu) * inv));
        }
        self.push(Op::LayerNormRows(a, eps), Tensor::matrix(m, n, data))
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| gelu_val(x)).collect();
        let shape = ta.shape.clone();
        self.push(Op::Gelu(a), Tensor::new(shape, data))
    }

    /// Reverse-mode sweep from a scalar output back to every contributing node.
    pub fn backward(&self, out: Var) -> Result<Gradients<F>, NumericsError> {
        let out_t = self.value(out);
        if out_t.len() != 1 {
            return Err(NumericsError::NonScalarOutput(out_t.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::new(out_t.shape.clone(), vec![F::one()]));

        for i in (0..=out.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_grad(grads, *a, &self.nodes[a.0].value.shape, &g.data);
                add_grad(grads, *b, &self.nodes[b.0].value.shape, &g.data);
            }
            Op::AddRow(a, row) => {
                add_grad(grads, *a, &self.nodes[a.0].value.shape, &g.data);
                let n = self.value(*row).len();
                let mut gr = vec![F::zero(); n];
                for (idx, &gx) in g.data.iter().enumerate() {
                    gr[idx % n] += gx;
                }
                add_grad(grads, *row, &[n], &gr);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga: Vec<F> = g.data.iter().zip(&tb.data).map(|(&gx, &y)| gx * y).collect();
                let gb: Vec<F> = g.data.iter().zip(&ta.data).map(|(&gx, &x)| gx * x).collect();
                add_grad(grads, *a, &ta.shape.clone(), &ga);
                add_grad(grads, *b, &tb.shape.clone(), &gb);
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(*a), self.value(*row));
                let n = tr.len();
                let ga: Vec<F> = g
                    .data
                    .iter()
                    .enumerate()
                    .map(|(idx, &gx)| gx * tr.data[idx % n])
                    .collect();
                let mut gr = vec![F::zero(); n];
                for (idx, &gx) in g.data.iter().enumerate() {
                    gr[idx % n] += gx * ta.data[idx];
                }
                add_grad(grads, *a, &ta.shape.clone(), &ga);
                add_grad(grads, *row, &[n], &gr);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                // dA = dC * B^T
                let mut ga = vec![F::zero(); m * k];
                for i2 in 0..m {
                    for j in 0..n {
                        let gx = g.data[i2 * n + j];
                        for l in 0..k {
                            ga[i2 * k + l] += gx * tb.data[l * n + j];
                        }
                    }
                }
                // dB = A^T * dC
                let mut gb = vec![F::zero(); k * n];
                for i2 in 0..m {
                    for l in 0..k {
                        let av = ta.data[i2 * k + l];
                        for j in 0..n {
                            gb[l * n + j] += av * g.data[i2 * n + j];
                        }
                    }
                }
                add_grad(grads, *a, &[m, k], &ga);
                add_grad(grads, *b, &[k, n], &gb);
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.rows();
                // dA = dC * B
                let ga = matmul_raw(&g.data, &tb.data, m, n, k);
                // dB = dC^T * A
                let mut gb = vec![F::zero(); n * k];
                for i2 in 0..m {
                    for j in 0..n {
                        let gx = g.data[i2 * n + j];
                        for l in 0..k {
                            gb[j * k + l] += gx * ta.data[i2 * k + l];
                        }
                    }
                }
                add_grad(grads, *a, &[m, k], &ga);
                add_grad(grads, *b, &[n, k], &gb);
            }
            Op::Scale(a, c) => {
                let ga: Vec<F> = g.data.iter().map(|&gx| gx * *c).collect();
                add_grad(grads, *a, &self.nodes[a.0].value.shape.clone(), &ga);
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (out.rows(), out.cols());
                let mut ga = Vec::with_capacity(m * n);
                for r in 0..m {
                    let y = &out.data[r * n..(r + 1) * n];
                    let gy = &g.data[r * n..(r + 1) * n];
                    let dot = y.iter().zip(gy).fold(F::zero(), |s, (&yi, &gi)| s + yi * gi);
                    ga.extend(y.iter().zip(gy).map(|(&yi, &gi)| yi * (gi - dot)));
                }
                add_grad(grads, *a, &[m, n], &ga);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = (out.rows(), out.cols());
                let mut ga = Vec::with_capacity(m * n);
                for r in 0..m {
                    let y = &out.data[r * n..(r + 1) * n];
                    let gy = &g.data[r * n..(r + 1) * n];
                    let gsum = gy.iter().fold(F::zero(), |s, &x| s + x);
                    ga.extend(y.iter().zip(gy).map(|(&yi, &gi)| gi - yi.exp() * gsum));
                }
                add_grad(grads, *a, &[m, n], &ga);
            }
            Op::Log(a) => {
                let ta = self.value(*a);
                let ga: Vec<F> = g.data.iter().zip(&ta.data).map(|(&gx, &x)| gx / x).collect();
                add_grad(grads, *a, &ta.shape.clone(), &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<F> = g.data.iter().zip(&out.data).map(|(&gx, &y)| gx * y).collect();
                add_grad(grads, *a, &self.nodes[a.0].value.shape.clone(), &ga);
            }
            Op::GatherRows(a, indices) => {
                let ta = self.value(*a);
                let (rows, n) = (ta.rows(), ta.cols());
                let mut ga = vec![F::zero(); rows * n];
                for (pos, &i2) in indices.iter().enumerate() {
                    for c in 0..n {
                        ga[i2 * n + c] += g.data[pos * n + c];
                    }
                }
                add_grad(grads, *a, &[rows, n], &ga);
            }
            Op::GatherElems(a, coords) => {
                let ta = self.value(*a);
                let (rows, n) = (ta.rows(), ta.cols());
                let mut ga = vec![F::zero(); rows * n];
                for (pos, &(r, c)) in coords.iter().enumerate() {
                    ga[r * n + c] += g.data[pos];
                }
                add_grad(grads, *a, &[rows, n], &ga);
            }
            Op::SliceRows(a, start) => {
                let ta = self.value(*a);
                let (rows, n) = (ta.rows(), ta.cols());
                let mut ga = vec![F::zero(); rows * n];
                ga[start * n..start * n + g.data.len()].copy_from_slice(&g.data);
                add_grad(grads, *a, &[rows, n], &ga);
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let (rows, n) = (ta.rows(), ta.cols());
                let len = out.cols();
                let mut ga = vec![F::zero(); rows * n];
                for r in 0..rows {
                    for c in 0..len {
                        ga[r * n + start + c] = g.data[r * len + c];
                    }
                }
                add_grad(grads, *a, &[rows, n], &ga);
            }
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = tp.cols();
                    let mut gp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        gp.extend_from_slice(&g.data[r * total + offset..r * total + offset + w]);
                    }
                    add_grad(grads, p, &[m, w], &gp);
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                let ga = vec![g.data[0]; ta.len()];
                add_grad(grads, *a, &ta.shape.clone(), &ga);
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let c = g.data[0] / fl::<F>(ta.len() as f64);
                let ga = vec![c; ta.len()];
                add_grad(grads, *a, &ta.shape.clone(), &ga);
            }
            Op::LayerNormRows(a, eps) => {
                let ta = self.value(*a);
                let (m, n) = (ta.rows(), ta.cols());
                let nf = fl::<F>(n as f64);
                let mut ga = Vec::with_capacity(m * n);
                for r in 0..m {
                    let x = &ta.data[r * n..(r + 1) * n];
                    let y = &out.data[r * n..(r + 1) * n];
                    let gy = &g.data[r * n..(r + 1) * n];
                    let mu = x.iter().fold(F::zero(), |s, &v| s + v) / nf;
                    let var = x.iter().fold(F::zero(), |s, &v| s + (v - mu) * (v - mu)) / nf;
                    let inv = (var + *eps).sqrt().recip();
                    let mean_gy = gy.iter().fold(F::zero(), |s, &v| s + v) / nf;
                    let mean_gy_y =
                        gy.iter().zip(y).fold(F::zero(), |s, (&gv, &yv)| s + gv * yv) / nf;
                    ga.extend(
                        gy.iter()
                            .zip(y)
                            .map(|(&gv, &yv)| inv * (gv - mean_gy - yv * mean_gy_y)),
                    );
                }
                add_grad(grads, *a, &[m, n], &ga);
            }
            Op::Gelu(a) => {
                let ta = self.value(*a);
                let ga: Vec<F> = g
                    .data
                    .iter()
                    .zip(&ta.data)
                    .map(|(&gx, &x)| gx * gelu_grad(x))
                    .collect();
                add_grad(grads, *a, &ta.shape.clone(), &ga);
            }
        }
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::MulRow(..) => "mul_row",
        Op::MatMul(..) => "matmul",
        Op::MatMulNT(..) => "matmul_nt",
        Op::Scale(..) => "scale",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::LogSoftmaxRows(..) => "log_softmax_rows",
        Op::Log(..) => "log",
        Op::Exp(..) => "exp",
        Op::GatherRows(..) => "gather_rows",
        Op::GatherElems(..) => "gather_elems",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::LayerNormRows(..) => "layer_norm_rows",
        Op::Gelu(..) => "gelu",
    }
}

fn add_grad<F: Scalar>(grads: &mut [Option<Tensor<F>>], v: Var, shape: &[usize], delta: &[F]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (dst, &d) in t.data.iter_mut().zip(delta) {
                *dst += d;
            }
        }
        slot => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()));
        }
    }
}

fn matmul_raw<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let or = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            if av == F::zero() {
                continue;
            }
            let br = &b[l * n..(l + 1) * n];
            for j in 0..n {
                or[j] += av * br[j];
            }
        }
    }
    out
}

/// Stable softmax of a single slice.
pub fn softmax_row<F: Scalar>(row: &[F]) -> Vec<F> {
    let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |s, &x| s + x);
    exps.into_iter().map(|x| x / sum).collect()
}

fn gelu_val<F: Scalar>(x: F) -> F {
    let c = fl::<F>(GELU_C);
    let a = fl::<F>(GELU_A);
    let half = fl::<F>(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = fl::<F>(GELU_C);
    let a = fl::<F>(GELU_A);
    let half = fl::<F>(0.5);
    let three = fl::<F>(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    let du = c * (F::one() + three * a * x * x);
    half * (F::one() + t) + half * x * sech2 * du
}
