//! Loop-level reimplementation of the network loss over any [`Scalar`].
//!
//! It reads parameters by name and shares no code with the tape forward
//! pass. In `f64` it cross-checks the tape; in [`DoubleDouble`] it is the
//! finite-difference oracle of [`network_gradient_check`], where central
//! differences of an `f64` loss would drown tiny deep-layer gradients in
//! rounding noise.

use crate::cell::CellKind;
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::model::{loss, AgcLstmNetwork, LossWeights};
use crate::numerics::{probe_entries, DoubleDouble, GradBuffer, GradCheckReport, ParamId, Scalar, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    fn from_tensor(t: &Tensor) -> Self {
        Mat {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|&v| S::from_f64(v)).collect(),
        }
    }

    fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    fn matmul(&self, b: &Mat<S>) -> Result<Mat<S>> {
        if self.cols != b.rows {
            return Err(Error::dim("reference matmul", &[self.rows, self.cols], &[b.rows, b.cols]));
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for j in 0..b.cols {
                let mut acc = S::zero();
                for k in 0..self.cols {
                    acc = acc + self.at(i, k) * b.at(k, j);
                }
                out.data[i * b.cols + j] = acc;
            }
        }
        Ok(out)
    }

    fn zip(&self, b: &Mat<S>, f: impl Fn(S, S) -> S) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (b.rows, b.cols), "reference shapes");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    fn map(&self, f: impl Fn(S) -> S) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Adds a `1 x cols` row to every row.
    fn plus_row(&self, row: &Mat<S>) -> Mat<S> {
        assert_eq!((row.rows, row.cols), (1, self.cols), "reference row shape");
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * self.cols + c] = out.data[r * self.cols + c] + row.data[c];
            }
        }
        out
    }

    /// Multiplies row `r` by `col[r]`.
    fn scale_rows(&self, col: &[S]) -> Mat<S> {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * self.cols + c] = out.data[r * self.cols + c] * col[r];
            }
        }
        out
    }

    fn column_sums(&self) -> Mat<S> {
        let mut out = Mat::zeros(1, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c] = out.data[c] + self.at(r, c);
            }
        }
        out
    }

    fn flat(&self) -> Mat<S> {
        Mat {
            rows: 1,
            cols: self.data.len(),
            data: self.data.clone(),
        }
    }
}

/// Loss terms of one reference evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLoss<S> {
    pub total: S,
    pub global_xent: S,
    pub local_xent: S,
    pub balance: S,
    pub sparsity: S,
}

struct Net<'a, S> {
    net: &'a AgcLstmNetwork,
    values: Vec<Mat<S>>,
}

const GATES: [&str; 4] = ["i", "f", "o", "c"];

impl<S: Scalar> Net<'_, S> {
    fn p(&self, name: &str) -> Result<&Mat<S>> {
        let id = self
            .net
            .params()
            .find(name)
            .ok_or_else(|| Error::Data(format!("reference: missing parameter `{name}`")))?;
        Ok(&self.values[id.index()])
    }

    fn lstm_step(&self, z: [Mat<S>; 4], prev_c: Option<&Mat<S>>) -> (Mat<S>, Mat<S>) {
        let [zi, zf, zo, zc] = z;
        let i = zi.map(S::sigmoid);
        let f = zf.map(S::sigmoid);
        let o = zo.map(S::sigmoid);
        let u = zc.map(S::tanh);
        let mut c = i.zip(&u, |a, b| a * b);
        if let Some(p) = prev_c {
            c = f.zip(p, |a, b| a * b).zip(&c, |a, b| a + b);
        }
        let h = o.zip(&c.map(S::tanh), |a, b| a * b);
        (h, c)
    }

    fn augment(&self, frames: &[Mat<S>]) -> Result<Vec<Mat<S>>> {
        let w = self.p("augment.pos.W")?;
        let b = self.p("augment.pos.b")?;
        let pos: Vec<Mat<S>> = frames
            .iter()
            .map(|f| Ok(f.matmul(w)?.plus_row(b)))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        let mut state: Option<(Mat<S>, Mat<S>)> = None;
        for t in 0..pos.len() {
            let motion = if t == 0 {
                Mat::zeros(pos[0].rows, pos[0].cols)
            } else {
                pos[t].zip(&pos[t - 1], |a, b| a - b)
            };
            let mut x = Mat::zeros(pos[t].rows, 2 * pos[t].cols);
            for r in 0..x.rows {
                for c in 0..pos[t].cols {
                    x.data[r * x.cols + c] = pos[t].at(r, c);
                    x.data[r * x.cols + pos[t].cols + c] = motion.at(r, c);
                }
            }
            let mut z = Vec::new();
            for g in GATES {
                let mut zg = x.matmul(self.p(&format!("augment.lstm.W_x{g}"))?)?;
                if let Some((h, _)) = &state {
                    zg = zg.zip(&h.matmul(self.p(&format!("augment.lstm.W_h{g}"))?)?, |a, b| a + b);
                }
                z.push(zg.plus_row(self.p(&format!("augment.lstm.b_{g}"))?));
            }
            let z: [Mat<S>; 4] = z.try_into().expect("four gates");
            let (h, c) = self.lstm_step(z, state.as_ref().map(|s| &s.1));
            out.push(h.clone());
            state = Some((h, c));
        }
        Ok(out)
    }

    fn transform(&self, x: &Mat<S>, name: &str, adj: &[Mat<S>]) -> Result<Mat<S>> {
        match self.net.config().variant.cell {
            CellKind::Graph => {
                let mut acc: Option<Mat<S>> = None;
                for (k, a) in adj.iter().enumerate() {
                    let term = a.matmul(x)?.matmul(self.p(&format!("{name}.W{}", k + 1))?)?;
                    acc = Some(match acc {
                        Some(s) => s.zip(&term, |p, q| p + q),
                        None => term,
                    });
                }
                Ok(acc.expect("at least one subset"))
            }
            CellKind::Dense => x.flat().matmul(self.p(name)?),
        }
    }

    /// Returns `(H, Ĥ, α)` for every step.
    #[allow(clippy::type_complexity)]
    fn layer(&self, l: usize, seq: &[Mat<S>], adj: &[Mat<S>]) -> Result<Vec<(Mat<S>, Mat<S>, Option<Vec<S>>)>> {
        let prefix = format!("layer{l}");
        let nodes = seq[0].rows;
        let d = self.net.config().hidden_width;
        let mut out: Vec<(Mat<S>, Mat<S>, Option<Vec<S>>)> = Vec::new();
        let mut memory: Option<Mat<S>> = None;
        for x in seq {
            let mut z = Vec::new();
            for g in GATES {
                let mut zg = self.transform(x, &format!("{prefix}.gate_{g}.W_x{g}"), adj)?;
                if let Some((h, _, _)) = out.last() {
                    let zh = self.transform(h, &format!("{prefix}.gate_{g}.W_h{g}"), adj)?;
                    zg = zg.zip(&zh, |a, b| a + b);
                }
                let b = self.p(&format!("{prefix}.gate_{g}.b_{g}"))?;
                let zg = if zg.rows == 1 {
                    let summed = zg.zip(b, |a, c| a + c);
                    Mat {
                        rows: nodes,
                        cols: d,
                        data: summed.data,
                    }
                } else {
                    zg.plus_row(b)
                };
                z.push(zg);
            }
            let z: [Mat<S>; 4] = z.try_into().expect("four gates");
            let (hidden_pre, c) = self.lstm_step(z, memory.as_ref());
            memory = Some(c);
            if self.net.config().variant.attention {
                let alpha = self.attention(&prefix, &hidden_pre)?;
                let gain: Vec<S> = alpha.iter().map(|&a| S::one() + a).collect();
                out.push((hidden_pre.scale_rows(&gain), hidden_pre, Some(alpha)));
            } else {
                out.push((hidden_pre.clone(), hidden_pre, None));
            }
        }
        Ok(out)
    }

    fn attention(&self, prefix: &str, hp: &Mat<S>) -> Result<Vec<S>> {
        let p = |n: &str| self.p(&format!("{prefix}.att.{n}"));
        let query = hp.matmul(p("W")?)?.column_sums().map(S::relu);
        let row = query.matmul(p("W_q")?)?.zip(p("b_s")?, |a, b| a + b);
        let act = hp.matmul(p("W_h")?)?.plus_row(&row).map(S::tanh);
        let scores = act.matmul(p("U_s")?)?;
        let b_u = p("b_u")?.data[0];
        Ok(scores.data.iter().map(|&s| (s + b_u).sigmoid()).collect())
    }

    fn pool(&self, seq: Vec<Mat<S>>) -> Result<Vec<Mat<S>>> {
        let v = self.net.config().variant;
        if !v.temporal_hierarchy {
            return Ok(seq);
        }
        let (window, stride) = self.net.config().pooling;
        if seq.len() < window {
            return Err(Error::Data("reference: sequence shorter than the pooling window".into()));
        }
        let inv = S::one() / S::from_f64(window as f64);
        Ok((0..(seq.len() - window) / stride + 1)
            .map(|t| {
                let mut acc = seq[t * stride].clone();
                for m in &seq[t * stride + 1..t * stride + window] {
                    acc = acc.zip(m, |a, b| a + b);
                }
                acc.map(|a| a * inv)
            })
            .collect())
    }

    fn head(&self, name: &str, feature: &Mat<S>) -> Result<Vec<S>> {
        let z = feature.matmul(self.p(&format!("head.{name}.W"))?)?;
        Ok(z.zip(self.p(&format!("head.{name}.b"))?, |a, b| a + b).data)
    }
}

fn xent<S: Scalar>(logits: &[S], label: usize) -> S {
    let max = logits.iter().copied().fold(logits[0], |m, v| if v > m { v } else { m });
    let mut sum = S::zero();
    for &v in logits {
        sum = sum + (v - max).exp();
    }
    max + sum.ln() - logits[label]
}

/// Evaluates the training loss (eval mode, no dropout) with every parameter
/// converted to `S`. `nudge = (id, entry, delta)` adds `delta` to one
/// parameter entry after conversion.
pub fn reference_loss<S: Scalar>(
    net: &AgcLstmNetwork,
    seq: &SkeletonSequence,
    label: usize,
    w: LossWeights,
    nudge: Option<(ParamId, usize, S)>,
) -> Result<ReferenceLoss<S>> {
    if label >= net.config().classes {
        return Err(Error::Data(format!("label {label} outside {} classes", net.config().classes)));
    }
    let mut values: Vec<Mat<S>> = net.params().iter().map(|(_, p)| Mat::from_tensor(&p.value)).collect();
    if let Some((id, entry, delta)) = nudge {
        let slot = &mut values[id.index()].data[entry];
        *slot = *slot + delta;
    }
    let r = Net { net, values };
    let frames: Vec<Mat<S>> = net.inputs(seq)?.iter().map(Mat::from_tensor).collect();
    let adjacency = net.adjacency();
    let adj: Vec<Mat<S>> = (0..adjacency.subsets())
        .map(|k| Mat::from_tensor(adjacency.normalized(k)))
        .collect();

    let mut seq = r.augment(&frames)?;
    let mut alphas: Vec<Vec<Vec<S>>> = Vec::new();
    let mut top = Vec::new();
    for l in 1..=net.config().layers {
        if l > 1 {
            seq = r.pool(seq)?;
        }
        let out = r.layer(l, &seq, &adj)?;
        if net.config().variant.attention {
            alphas.push(out.iter().map(|s| s.2.clone().expect("attention on")).collect());
        }
        seq = out.iter().map(|s| s.0.clone()).collect();
        top = out;
    }

    let (mut global_xent, mut local_xent) = (S::zero(), S::zero());
    for (hidden, hidden_pre, alpha) in &top {
        let fg = hidden.column_sums();
        let fl = match alpha {
            Some(a) => hidden_pre.scale_rows(a).column_sums(),
            None => fg.clone(),
        };
        global_xent = global_xent + xent(&r.head("global", &fg)?, label);
        local_xent = local_xent + xent(&r.head("local", &fl)?, label);
    }
    let (mut balance, mut sparsity) = (S::zero(), S::zero());
    for layer in &alphas {
        let steps = S::from_f64(layer.len() as f64);
        for n in 0..layer[0].len() {
            let mut mean = S::zero();
            for a in layer {
                mean = mean + a[n];
            }
            let gap = S::one() - mean / steps;
            balance = balance + gap * gap;
        }
        let mut s = S::zero();
        for a in layer {
            let mut mass = S::zero();
            for &v in a {
                mass = mass + v;
            }
            s = s + mass * mass;
        }
        sparsity = sparsity + s / steps;
    }
    let balance = S::from_f64(w.lambda) * balance;
    let sparsity = S::from_f64(w.beta) * sparsity;
    Ok(ReferenceLoss {
        total: global_xent + local_xent + balance + sparsity,
        global_xent,
        local_xent,
        balance,
        sparsity,
    })
}

/// Back-propagated gradient of the loss of one sequence.
pub fn analytic_gradient(net: &AgcLstmNetwork, seq: &SkeletonSequence, label: usize, w: LossWeights) -> Result<GradBuffer> {
    let mut tape = Tape::new(net.params());
    let out = net.forward(&mut tape, seq, None)?;
    let lv = loss(&mut tape, &out, label, w)?;
    let mut grads = GradBuffer::new(net.params());
    tape.backward(lv.total, &mut grads)?;
    Ok(grads)
}

/// Compares back-propagated gradients against central differences
/// `(L(θ+h) - L(θ-h)) / 2h` of the reference loss in double-double
/// precision, on up to `probes` random entries of every parameter.
pub fn network_gradient_check(
    net: &AgcLstmNetwork,
    seq: &SkeletonSequence,
    label: usize,
    w: LossWeights,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads = analytic_gradient(net, seq, label, w)?;
    check_gradient(net, seq, label, w, &grads, probes, h, seed)
}

/// [`network_gradient_check`] against a given gradient.
#[allow(clippy::too_many_arguments)]
pub fn check_gradient(
    net: &AgcLstmNetwork,
    seq: &SkeletonSequence,
    label: usize,
    w: LossWeights,
    grads: &GradBuffer,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config("step", "must be positive"));
    }
    let mut store = net.params().clone();
    probe_entries(&mut store, grads, probes, seed, |_, id, e| {
        let dh = DoubleDouble::new(h);
        let plus = reference_loss(net, seq, label, w, Some((id, e, dh)))?.total;
        let minus = reference_loss(net, seq, label, w, Some((id, e, -dh)))?.total;
        let numeric = (plus - minus) / DoubleDouble::new(2.0 * h);
        let numeric = numeric.to_f64();
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!("non-finite finite difference for `{}`", net.params().get(id).name)));
        }
        Ok(numeric)
    })
}
