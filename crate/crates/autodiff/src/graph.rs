use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Parameter,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    RowSoftmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SumAll(Var),
    MeanRows(Var),
    MaxOverTime {
        input: Var,
        argmax: Vec<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        window: usize,
    },
    LstmCell {
        inputs: [Var; 6],
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Cosine {
        a: Var,
        b: Var,
        norm_a: T,
        norm_b: T,
    },
    #[cfg(test)]
    FaultySigmoid(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward/backward tape.
///
/// Nodes are appended in creation order; [`Graph::backward`] walks them in
/// exact reverse order, so a node's gradient is complete before any of its
/// inputs are visited.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<T: Real> Graph<T> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training graph: dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Graph::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<&Tensor<T>> {
        let t = &self.nodes[v.0].value;
        if !t.is_matrix() {
            return Err(AutodiffError::invalid(
                op,
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        }
        Ok(t)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        if !value.is_matrix() {
            return Err(AutodiffError::invalid(
                "constant",
                format!("expected a matrix, got {:?}", value.shape()),
            ));
        }
        self.push(value, Op::Constant, false, "constant")
    }

    /// Leaf that requires grad but is not tied to a parameter store.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant, true, "leaf")
    }

    /// Binds a stored parameter into the graph; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.get(id).clone(), Op::Parameter, true, "param")?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn param_by_name(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        self.param(store, id)
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.matrix(a, "matmul")?, self.matrix(b, "matmul")?);
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(AutodiffError::shape("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg, name)
    }

    fn map(&mut self, a: Var, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(&[a]);
        self.push(value, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds a `[1, n]` row to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.matrix(a, "add_row")?, self.matrix(row, "add_row")?);
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(AutodiffError::shape("add_row", ta.shape(), tr.shape()));
        }
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % n])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg, "add_row")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        self.map(a, Op::Scale(a, factor), "scale", |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.map(a, Op::AddScalar(a), "add_scalar", |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat_cols", "no inputs"))?;
        let rows = self.matrix(first, "concat_cols")?.rows();
        let mut total = 0;
        for &p in parts {
            let t = self.matrix(p, "concat_cols")?;
            if t.rows() != rows {
                return Err(AutodiffError::shape("concat_cols", self.shape(first), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::invalid("concat_rows", "no inputs"))?;
        let cols = self.matrix(first, "concat_rows")?.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.matrix(p, "concat_rows")?;
            if t.cols() != cols {
                return Err(AutodiffError::shape("concat_rows", self.shape(first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
            "concat_rows",
        )
    }

    /// Columns `[start, end)` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.matrix(a, "slice_cols")?;
        if start >= end || end > t.cols() {
            return Err(AutodiffError::invalid(
                "slice_cols",
                format!("range {start}..{end} out of bounds for {:?}", t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::matrix(t.rows(), end - start, data)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols(a, start), rg, "slice_cols")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.matrix(a, "transpose")?;
        let (m, n) = (t.rows(), t.cols());
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data()[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(n, m, data)?, Op::Transpose(a), rg, "transpose")
    }

    /// Numerically stable softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.matrix(a, "row_softmax")?;
        let n = t.cols();
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
            let sum: T = exps.iter().copied().sum();
            data.extend(exps.into_iter().map(|e| e / sum));
        }
        let value = Tensor::matrix(t.rows(), n, data)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::RowSoftmax(a), rg, "row_softmax")
    }

    /// Sum of all elements as a `[1, 1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg, "sum_all")
    }

    /// Column means: `[len, f] -> [1, f]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.matrix(a, "mean_rows")?;
        let (m, n) = (t.rows(), t.cols());
        let inv = T::one() / T::of(m as f64);
        let mut data = vec![T::zero(); n];
        for r in 0..m {
            for (acc, &x) in data.iter_mut().zip(t.row_slice(r)) {
                *acc = *acc + x;
            }
        }
        data.iter_mut().for_each(|x| *x = *x * inv);
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(1, n, data)?, Op::MeanRows(a), rg, "mean_rows")
    }

    /// Max-over-time pooling: column-wise max, `[len, f] -> [1, f]`.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let t = self.matrix(a, "max_over_time")?;
        let (m, n) = (t.rows(), t.cols());
        let mut argmax = vec![0usize; n];
        let mut data = t.row_slice(0).to_vec();
        for r in 1..m {
            for (c, &x) in t.row_slice(r).iter().enumerate() {
                if x > data[c] {
                    data[c] = x;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(
            Tensor::matrix(1, n, data)?,
            Op::MaxOverTime { input: a, argmax },
            rg,
            "max_over_time",
        )
    }

    /// Valid 1-D convolution over the row (token) axis.
    ///
    /// `input` is `[len, d]`, `weight` is `[window * d, f]` laid out as the
    /// window's rows concatenated, `bias` is `[1, f]`. Output is
    /// `[len - window + 1, f]`; `len < window` is an error.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, window: usize) -> Result<Var> {
        let x = self.matrix(input, "conv1d")?;
        let w = self.matrix(weight, "conv1d")?;
        let b = self.matrix(bias, "conv1d")?;
        let (len, d, f) = (x.rows(), x.cols(), w.cols());
        if window == 0 || w.rows() != window * d {
            return Err(AutodiffError::shape("conv1d", x.shape(), w.shape()));
        }
        if b.rows() != 1 || b.cols() != f {
            return Err(AutodiffError::shape("conv1d", w.shape(), b.shape()));
        }
        if len < window {
            return Err(AutodiffError::invalid(
                "conv1d",
                format!("sequence of length {len} shorter than window {window}"),
            ));
        }
        let out_len = len - window + 1;
        let mut out = Vec::with_capacity(out_len * f);
        for _ in 0..out_len {
            out.extend_from_slice(b.data());
        }
        for p in 0..out_len {
            // Rows p..p+window are contiguous in row-major layout.
            let patch = &x.data()[p * d..(p + window) * d];
            matmul_into(patch, w.data(), &mut out[p * f..(p + 1) * f], 1, window * d, f);
        }
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            Tensor::matrix(out_len, f, out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
                window,
            },
            rg,
            "conv1d",
        )
    }

    /// One LSTM step for a batch of rows.
    ///
    /// `x: [n, e]`, `h, c: [n, h]`, `w_ih: [e, 4h]`, `w_hh: [h, 4h]`,
    /// `bias: [1, 4h]` with gate order input, forget, cell, output.
    /// Returns `[n, 2h]` holding the new hidden state followed by the new
    /// cell state; split with [`Graph::slice_cols`].
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let tx = self.matrix(x, "lstm_cell")?;
        let th = self.matrix(h, "lstm_cell")?;
        let tc = self.matrix(c, "lstm_cell")?;
        let twi = self.matrix(w_ih, "lstm_cell")?;
        let twh = self.matrix(w_hh, "lstm_cell")?;
        let tb = self.matrix(bias, "lstm_cell")?;
        let (n, e, hd) = (tx.rows(), tx.cols(), th.cols());
        if th.rows() != n || tc.shape() != th.shape() {
            return Err(AutodiffError::shape("lstm_cell", th.shape(), tc.shape()));
        }
        if twi.rows() != e || twi.cols() != 4 * hd {
            return Err(AutodiffError::shape("lstm_cell", tx.shape(), twi.shape()));
        }
        if twh.rows() != hd || twh.cols() != 4 * hd {
            return Err(AutodiffError::shape("lstm_cell", th.shape(), twh.shape()));
        }
        if tb.rows() != 1 || tb.cols() != 4 * hd {
            return Err(AutodiffError::shape("lstm_cell", twi.shape(), tb.shape()));
        }
        let g4 = 4 * hd;
        let mut z = Vec::with_capacity(n * g4);
        for _ in 0..n {
            z.extend_from_slice(tb.data());
        }
        matmul_into(tx.data(), twi.data(), &mut z, n, e, g4);
        matmul_into(th.data(), twh.data(), &mut z, n, hd, g4);
        let mut out = vec![T::zero(); n * 2 * hd];
        let mut tanh_c = vec![T::zero(); n * hd];
        for r in 0..n {
            let zr = &mut z[r * g4..(r + 1) * g4];
            for k in 0..hd {
                let i = sigmoid(zr[k]);
                let f = sigmoid(zr[hd + k]);
                let g = zr[2 * hd + k].tanh();
                let o = sigmoid(zr[3 * hd + k]);
                zr[k] = i;
                zr[hd + k] = f;
                zr[2 * hd + k] = g;
                zr[3 * hd + k] = o;
                let c_new = f * tc.data()[r * hd + k] + i * g;
                let tcn = c_new.tanh();
                tanh_c[r * hd + k] = tcn;
                out[r * 2 * hd + k] = o * tcn;
                out[r * 2 * hd + hd + k] = c_new;
            }
        }
        let rg = self.rg(&[x, h, c, w_ih, w_hh, bias]);
        self.push(
            Tensor::matrix(n, 2 * hd, out)?,
            Op::LstmCell {
                inputs: [x, h, c, w_ih, w_hh, bias],
                gates: z,
                tanh_c,
            },
            rg,
            "lstm_cell",
        )
    }

    /// Inverted dropout. Identity in inference graphs or when `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let t = self.value(a);
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout { input: a, mask }, rg, "dropout")
    }

    /// Rows of `table` selected by `indices`: `[v, d] -> [indices.len(), d]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.matrix(table, "gather")?;
        if indices.is_empty() {
            return Err(AutodiffError::invalid("gather", "no indices"));
        }
        let d = t.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= t.rows() {
                return Err(AutodiffError::invalid(
                    "gather",
                    format!("index {i} out of range for {} rows", t.rows()),
                ));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(indices.len(), d, data)?;
        let rg = self.rg(&[table]);
        self.push(
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
            "gather",
        )
    }

    /// Cosine similarity of two `[1, n]` rows; 0 when either has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "cosine")?;
        if self.shape(a)[0] != 1 {
            return Err(AutodiffError::invalid(
                "cosine",
                format!("expected a row, got {:?}", self.shape(a)),
            ));
        }
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let dot: T = ta.iter().zip(tb).map(|(&x, &y)| x * y).sum();
        let na = ta.iter().map(|&x| x * x).sum::<T>().sqrt();
        let nb = tb.iter().map(|&x| x * x).sum::<T>().sqrt();
        let c = if na > T::zero() && nb > T::zero() {
            dot / (na * nb)
        } else {
            T::zero()
        };
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::scalar(c),
            Op::Cosine {
                a,
                b,
                norm_a: na,
                norm_b: nb,
            },
            rg,
            "cosine",
        )
    }

    #[cfg(test)]
    pub(crate) fn faulty_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::FaultySigmoid(a), "faulty_sigmoid", sigmoid)
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Gradients accumulate additively when a node feeds several consumers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &dy);
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    /// Parameter gradients collected after [`Graph::backward`].
    pub fn param_grads(&self) -> Gradients<T> {
        let mut out = Gradients::empty(0);
        for (&id, &v) in &self.params {
            let g = self
                .grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![T::zero(); self.value(v).len()]);
            let shape = self.shape(v).to_vec();
            out.set(id, Tensor::new(shape, g).expect("gradient matches parameter shape"));
        }
        out
    }

    fn acc(&mut self, v: Var, delta: impl IntoIterator<Item = T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        for (g, d) in slot.iter_mut().zip(delta) {
            *g = *g + d;
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, idx: usize, dy: &[T]) {
        // Temporarily move the op out so inputs can be read while grads are written.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Constant);
        match &op {
            Op::Constant | Op::Parameter => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    // dA = dY * B^T
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = dy[i * n + j];
                            if g == T::zero() {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] = da[i * k + p] + g * tb.data()[p * n + j];
                            }
                        }
                    }
                    self.acc(*a, da);
                }
                let ta = self.value(*a);
                if self.wants(*b) {
                    // dB = A^T * dY
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = ta.data()[i * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            let row = &mut db[p * n..(p + 1) * n];
                            for (d, &g) in row.iter_mut().zip(&dy[i * n..(i + 1) * n]) {
                                *d = *d + x * g;
                            }
                        }
                    }
                    self.acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(*a, dy.iter().copied());
                self.acc(*b, dy.iter().copied());
            }
            Op::AddRow(a, row) => {
                self.acc(*a, dy.iter().copied());
                let n = self.value(*row).cols();
                let mut dr = vec![T::zero(); n];
                for (i, &g) in dy.iter().enumerate() {
                    dr[i % n] = dr[i % n] + g;
                }
                self.acc(*row, dr);
            }
            Op::Sub(a, b) => {
                self.acc(*a, dy.iter().copied());
                self.acc(*b, dy.iter().map(|&g| -g));
            }
            Op::Mul(a, b) => {
                let db: Vec<T> = self.value(*a).data().iter().zip(dy).map(|(&x, &g)| x * g).collect();
                let da: Vec<T> = self.value(*b).data().iter().zip(dy).map(|(&x, &g)| x * g).collect();
                self.acc(*a, da);
                self.acc(*b, db);
            }
            Op::Scale(a, f) => {
                let f = *f;
                self.acc(*a, dy.iter().map(|&g| g * f));
            }
            Op::AddScalar(a) => self.acc(*a, dy.iter().copied()),
            Op::ConcatCols(parts) => {
                let rows = self.value(parts[0]).rows();
                let total: usize = dy.len() / rows;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&dy[r * total + offset..r * total + offset + w]);
                    }
                    self.acc(p, d);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(p, dy[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let (rows, cols) = (t.rows(), t.cols());
                let w = dy.len() / rows;
                let mut d = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w].copy_from_slice(&dy[r * w..(r + 1) * w]);
                }
                self.acc(*a, d);
            }
            Op::Transpose(a) => {
                let t = self.value(*a);
                let (m, n) = (t.rows(), t.cols());
                let mut d = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = dy[j * m + i];
                    }
                }
                self.acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let n = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = &dy[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&yv, &g)| yv * (g - dot)));
                }
                self.acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<T> = self.nodes[idx]
                    .value
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                self.acc(*a, d);
            }
            #[cfg(test)]
            Op::FaultySigmoid(a) => {
                // Drops the (1 - s) factor on purpose.
                let d: Vec<T> = self.nodes[idx]
                    .value
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&s, &g)| g * s)
                    .collect();
                self.acc(*a, d);
            }
            Op::Tanh(a) => {
                let d: Vec<T> = self.nodes[idx]
                    .value
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&t, &g)| g * (T::one() - t * t))
                    .collect();
                self.acc(*a, d);
            }
            Op::Relu(a) => {
                let d: Vec<T> = self
                    .value(*a)
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.acc(*a, d);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.acc(*a, std::iter::repeat_n(dy[0], n));
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let (m, n) = (t.rows(), t.cols());
                let inv = T::one() / T::of(m as f64);
                self.acc(*a, (0..m * n).map(|i| dy[i % n] * inv));
            }
            Op::MaxOverTime { input, argmax } => {
                let t = self.value(*input);
                let n = t.cols();
                let mut d = vec![T::zero(); t.len()];
                for (c, &r) in argmax.iter().enumerate() {
                    d[r * n + c] = dy[c];
                }
                self.acc(*input, d);
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                window,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (d, f) = (x.cols(), w.cols());
                let out_len = dy.len() / f;
                let wd = window * d;
                let mut dx = vec![T::zero(); x.len()];
                let mut dw = vec![T::zero(); w.len()];
                let mut db = vec![T::zero(); f];
                for p in 0..out_len {
                    let g = &dy[p * f..(p + 1) * f];
                    for (acc, &gv) in db.iter_mut().zip(g) {
                        *acc = *acc + gv;
                    }
                    let patch = &x.data()[p * d..p * d + wd];
                    for q in 0..wd {
                        let xv = patch[q];
                        let wrow = &w.data()[q * f..(q + 1) * f];
                        let mut s = T::zero();
                        for c in 0..f {
                            s = s + wrow[c] * g[c];
                        }
                        dx[p * d + q] = dx[p * d + q] + s;
                        if xv != T::zero() {
                            let dwrow = &mut dw[q * f..(q + 1) * f];
                            for c in 0..f {
                                dwrow[c] = dwrow[c] + xv * g[c];
                            }
                        }
                    }
                }
                self.acc(*input, dx);
                self.acc(*weight, dw);
                self.acc(*bias, db);
            }
            Op::LstmCell { inputs, gates, tanh_c } => {
                let [x, h, c, w_ih, w_hh, bias] = *inputs;
                let (n, e) = (self.value(x).rows(), self.value(x).cols());
                let hd = self.value(h).cols();
                let g4 = 4 * hd;
                let mut dz = vec![T::zero(); n * g4];
                let mut dc_prev = vec![T::zero(); n * hd];
                let c_prev = self.value(c).data();
                for r in 0..n {
                    let z = &gates[r * g4..(r + 1) * g4];
                    for k in 0..hd {
                        let (i, f, g, o) = (z[k], z[hd + k], z[2 * hd + k], z[3 * hd + k]);
                        let tcn = tanh_c[r * hd + k];
                        let dh = dy[r * 2 * hd + k];
                        let dc = dy[r * 2 * hd + hd + k] + dh * o * (T::one() - tcn * tcn);
                        let d_o = dh * tcn;
                        let d_i = dc * g;
                        let d_g = dc * i;
                        let d_f = dc * c_prev[r * hd + k];
                        dc_prev[r * hd + k] = dc * f;
                        let dzr = &mut dz[r * g4..(r + 1) * g4];
                        dzr[k] = d_i * i * (T::one() - i);
                        dzr[hd + k] = d_f * f * (T::one() - f);
                        dzr[2 * hd + k] = d_g * (T::one() - g * g);
                        dzr[3 * hd + k] = d_o * o * (T::one() - o);
                    }
                }
                let xv = self.value(x).data().to_vec();
                let hv = self.value(h).data().to_vec();
                let wiv = self.value(w_ih).data().to_vec();
                let whv = self.value(w_hh).data().to_vec();
                if self.wants(x) {
                    self.acc(x, matmul_bt(&dz, &wiv, n, g4, e));
                }
                if self.wants(h) {
                    self.acc(h, matmul_bt(&dz, &whv, n, g4, hd));
                }
                self.acc(c, dc_prev);
                if self.wants(w_ih) {
                    self.acc(w_ih, matmul_at(&xv, &dz, n, e, g4));
                }
                if self.wants(w_hh) {
                    self.acc(w_hh, matmul_at(&hv, &dz, n, hd, g4));
                }
                let mut db = vec![T::zero(); g4];
                for r in 0..n {
                    for (acc, &v) in db.iter_mut().zip(&dz[r * g4..(r + 1) * g4]) {
                        *acc = *acc + v;
                    }
                }
                self.acc(bias, db);
            }
            Op::Dropout { input, mask } => {
                let d: Vec<T> = dy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                self.acc(*input, d);
            }
            Op::Gather { table, indices } => {
                let t = self.value(*table);
                let d = t.cols();
                let mut dt = vec![T::zero(); t.len()];
                for (row, &i) in indices.iter().enumerate() {
                    for c in 0..d {
                        dt[i * d + c] = dt[i * d + c] + dy[row * d + c];
                    }
                }
                self.acc(*table, dt);
            }
            Op::Cosine { a, b, norm_a, norm_b } => {
                let (na, nb) = (*norm_a, *norm_b);
                if na > T::zero() && nb > T::zero() {
                    let cval = self.nodes[idx].value.item();
                    let g = dy[0];
                    let (ta, tb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                    let inv = T::one() / (na * nb);
                    let da: Vec<T> = ta
                        .iter()
                        .zip(&tb)
                        .map(|(&x, &y)| g * (y * inv - cval * x / (na * na)))
                        .collect();
                    let db: Vec<T> = ta
                        .iter()
                        .zip(&tb)
                        .map(|(&x, &y)| g * (x * inv - cval * y / (nb * nb)))
                        .collect();
                    self.acc(*a, da);
                    self.acc(*b, db);
                }
            }
        }
        self.nodes[idx].op = op;
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out += a[m, k] * b[k, n]`
fn matmul_into<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `a[m, k] * b[n, k]^T -> [m, n]`
fn matmul_bt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `a[m, k]^T * b[m, n] -> [k, n]`
fn matmul_at<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}
