//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably, records every operation of
//! one forward pass and, on [`Tape::backward`], pushes gradients back to the
//! parameters it touched. Gradients are always accumulated, so a parameter
//! used at every time step of a recurrence receives the sum of all uses.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::param::{GradBuffer, ParamId, ParamStore};
use super::tensor::{gemm_acc, sigmoid, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    LeftConst(Arc<Tensor>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    SumRows(Var),
    SumAll(Var),
    Square(Var),
    ConcatCols(Var, Var),
    Reshape(Var),
    SoftmaxXent { logits: Var, label: usize },
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `m · x` for a constant matrix `m`; zero entries of `m` are skipped.
    pub fn left_const(&mut self, m: &Arc<Tensor>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if m.cols() != xv.rows() {
            return Err(Error::dim("left_const", m.shape(), xv.shape()));
        }
        let (rows, inner, cols) = (m.rows(), m.cols(), xv.cols());
        let mut out = vec![0.0; rows * cols];
        let xd = xv.data();
        for i in 0..rows {
            let dst = &mut out[i * cols..(i + 1) * cols];
            for j in 0..inner {
                let w = m.get(i, j);
                if w != 0.0 {
                    for (o, &s) in dst.iter_mut().zip(&xd[j * cols..(j + 1) * cols]) {
                        *o += w * s;
                    }
                }
            }
        }
        let out = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(out, Op::LeftConst(Arc::clone(m), x)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), name, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "hadamard", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::dim("add_row", xv.shape(), rv.shape()));
        }
        let mut out = xv.clone();
        let cols = xv.cols();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    /// Scales row `i` of an `m x n` matrix by entry `i` of an `m x 1` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.cols() != 1 || cv.rows() != xv.rows() {
            return Err(Error::dim("mul_col", xv.shape(), cv.shape()));
        }
        let mut out = xv.clone();
        let cols = xv.cols();
        for (chunk, s) in out.data_mut().chunks_mut(cols).zip(cv.data()) {
            chunk.iter_mut().for_each(|o| *o *= s);
        }
        Ok(self.push(out, Op::MulCol(x, col)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(super::tensor::relu);
        self.push(out, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    /// Hadamard product with a constant tensor (e.g. a dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(&c, "mul_const", |a, b| a * b)?;
        Ok(self.push(out, Op::MulConst(x, c)))
    }

    /// Column sums of an `m x n` matrix, as a `1 x n` row.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = vec![0.0; cols];
        for chunk in xv.data().chunks(cols) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        let out = Tensor::matrix(1, cols, out).expect("non-empty");
        self.push(out, Op::SumRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::dim("concat_cols", av.shape(), bv.shape()));
        }
        let (rows, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let out = Tensor::matrix(rows, ca + cb, out)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Sum of several same-shaped values.
    pub fn sum_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::Data("sum of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        validate_dropout(p)?;
        if p == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).shape(), p, rng);
        self.mul_const(x, mask)
    }

    /// Negative log of the softmax probability of `label` in a `1 x C` row.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != 1 {
            return Err(Error::dim("softmax_xent", lv.shape(), &[1, lv.cols()]));
        }
        if label >= lv.cols() {
            return Err(Error::Data(format!(
                "label {label} outside {} classes",
                lv.cols()
            )));
        }
        let row = lv.data();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Tensor::scalar(lse - row[label]);
        Ok(self.push(out, Op::SoftmaxXent { logits, label }))
    }

    /// Back-propagates from a `1 x 1` output and accumulates parameter
    /// gradients into `grads`.
    pub fn backward(&self, output: Var, grads: &mut GradBuffer) -> Result<()> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::dim("backward", out.shape(), &[1, 1]));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::full(out.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.add(*id, &g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let ga = slot(&mut adj, *a, av.shape());
                    gemm_acc(m, n, k, g.data(), false, bv.data(), true, ga.data_mut());
                    let gb = slot(&mut adj, *b, bv.shape());
                    gemm_acc(k, m, n, av.data(), true, g.data(), false, gb.data_mut());
                }
                Op::LeftConst(m, x) => {
                    let cols = g.cols();
                    let gx = slot(&mut adj, *x, &self.shape(*x));
                    let gxd = gx.data_mut();
                    for i in 0..m.rows() {
                        let src = &g.data()[i * cols..(i + 1) * cols];
                        for j in 0..m.cols() {
                            let w = m.get(i, j);
                            if w != 0.0 {
                                for (d, s) in gxd[j * cols..(j + 1) * cols].iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, &g);
                    acc(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, &g);
                    acc(&mut adj, *b, &g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = mul(&g, self.value(*b));
                    let gb = mul(&g, self.value(*a));
                    acc(&mut adj, *a, &ga);
                    acc(&mut adj, *b, &gb);
                }
                Op::AddRow(x, row) => {
                    let cols = g.cols();
                    let mut gr = vec![0.0; cols];
                    for chunk in g.data().chunks(cols) {
                        for (o, v) in gr.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *row, &Tensor::matrix(1, cols, gr)?);
                    acc(&mut adj, *x, &g);
                }
                Op::MulCol(x, col) => {
                    let (xv, cv) = (self.value(*x), self.value(*col));
                    let cols = g.cols();
                    let mut gx = g.clone();
                    let mut gc = vec![0.0; cv.rows()];
                    for (r, chunk) in gx.data_mut().chunks_mut(cols).enumerate() {
                        let s = cv.data()[r];
                        let xr = xv.row(r);
                        let mut dot = 0.0;
                        for (c, v) in chunk.iter_mut().enumerate() {
                            dot += *v * xr[c];
                            *v *= s;
                        }
                        gc[r] = dot;
                    }
                    acc(&mut adj, *x, &gx);
                    acc(&mut adj, *col, &Tensor::matrix(cv.rows(), 1, gc)?);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("computed");
                    let gx = g.zip_map(y, "sigmoid", |g, y| g * y * (1.0 - y))?;
                    acc(&mut adj, *x, &gx);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().expect("computed");
                    let gx = g.zip_map(y, "tanh", |g, y| g * (1.0 - y * y))?;
                    acc(&mut adj, *x, &gx);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(self.value(*x), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                    acc(&mut adj, *x, &gx);
                }
                Op::Scale(x, c) => acc(&mut adj, *x, &g.scale(*c)),
                Op::AddScalar(x) => acc(&mut adj, *x, &g),
                Op::MulConst(x, c) => acc(&mut adj, *x, &mul(&g, c)),
                Op::SumRows(x) => {
                    let shape = self.shape(*x);
                    let gx = slot(&mut adj, *x, &shape);
                    let cols = g.cols();
                    for chunk in gx.data_mut().chunks_mut(cols) {
                        for (d, s) in chunk.iter_mut().zip(g.data()) {
                            *d += s;
                        }
                    }
                }
                Op::SumAll(x) => {
                    let shape = self.shape(*x);
                    let s = g.data()[0];
                    let gx = slot(&mut adj, *x, &shape);
                    gx.data_mut().iter_mut().for_each(|d| *d += s);
                }
                Op::Square(x) => {
                    let gx = g.zip_map(self.value(*x), "square", |g, x| 2.0 * g * x)?;
                    acc(&mut adj, *x, &gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let rows = g.rows();
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let row = g.row(r);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    acc(&mut adj, *a, &Tensor::matrix(rows, ca, ga)?);
                    acc(&mut adj, *b, &Tensor::matrix(rows, cb, gb)?);
                }
                Op::Reshape(x) => {
                    let gx = g.reshaped(&self.shape(*x))?;
                    acc(&mut adj, *x, &gx);
                }
                Op::SoftmaxXent { logits, label } => {
                    let mut p = self.value(*logits).clone();
                    softmax_in_place(p.data_mut());
                    p.data_mut()[*label] -= 1.0;
                    let s = g.data()[0];
                    acc(&mut adj, *logits, &p.scale(s));
                }
            }
        }
        Ok(())
    }
}

fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    a.zip_map(b, "hadamard", |x, y| x * y).expect("recorded shapes agree")
}

fn slot<'t>(adj: &'t mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'t mut Tensor {
    adj[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn acc(adj: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut adj[v.0] {
        Some(t) => t.add_assign(g).expect("recorded shapes agree"),
        s @ None => *s = Some(g.clone()),
    }
}

pub(crate) fn validate_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config("dropout", format!("probability {p} outside [0, 1)")));
    }
    Ok(())
}

fn dropout_mask<R: Rng>(shape: &[usize], p: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        if rng.gen::<f64>() >= p {
            *m = keep;
        }
    }
    mask
}

/// Inverted dropout on a plain tensor. In eval mode this is the identity.
pub fn dropout<R: Rng>(x: &Tensor, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
    validate_dropout(p)?;
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    Ok(mul(x, &dropout_mask(x.shape(), p, rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::full(&[4, 4], 2.0);
        assert_eq!(dropout(&x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, false, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let x = Tensor::full(&[n, 1], 1.0);
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean = y.sum() / n as f64;
        // Each entry is 0 or 2 with equal odds: standard deviation 1.
        let stderr = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * stderr, "mean {mean}");
    }

    #[test]
    fn param_leaf_is_reused() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0));
        let mut tape = Tape::new(&store);
        assert_eq!(tape.param(w), tape.param(w));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0));
        let mut tape = Tape::new(&store);
        let a = tape.param(w);
        let b = tape.param(w);
        let y = tape.mul(a, b).unwrap();
        let mut grads = GradBuffer::new(&store);
        tape.backward(y, &mut grads).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        let mut grads = GradBuffer::new(&store);
        assert!(tape.backward(x, &mut grads).is_err());
    }
}
