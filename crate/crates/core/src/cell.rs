//! The attention enhanced graph convolutional LSTM cell, its spatial
//! attention network, a recurrent layer over a sequence, and temporal
//! average pooling.
//!
//! Gate transforms are graph convolutions for the graph cells and full
//! linear maps over the flattened node features for the plain LSTM
//! baseline. Attention is optional so the attention-free GC-LSTM shares
//! this code path.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::AdjacencyStack;
use crate::graph_conv::{apply_propagated, propagate, GraphConvWeights};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// How a cell maps node features into gate pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    /// Graph convolution over the skeleton.
    Graph,
    /// Fully connected over all `N x d` features flattened together.
    Dense,
}

#[derive(Debug, Clone)]
enum Transform {
    Graph(GraphConvWeights),
    Dense(ParamId),
}

#[derive(Debug, Clone)]
struct Gate {
    input: Transform,
    hidden: Transform,
    bias: ParamId,
}

/// Parameters of the spatial attention network.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// Query aggregator, `d_hidden x d_att`.
    pub query: ParamId,
    /// `W_h`, `d_hidden x d_att`.
    pub hidden: ParamId,
    /// `W_q`, `d_att x d_att`.
    pub query_proj: ParamId,
    /// `U_s`, `d_att x 1`.
    pub score: ParamId,
    /// `b_s`, `1 x d_att`.
    pub bias_s: ParamId,
    /// `b_u`, `1 x 1`.
    pub bias_u: ParamId,
}

impl AttentionParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d_hidden: usize, d_att: usize, rng: &mut R) -> Self {
        AttentionParams {
            query: store.add_uniform(format!("{prefix}.att.W"), d_hidden, d_att, rng),
            hidden: store.add_uniform(format!("{prefix}.att.W_h"), d_hidden, d_att, rng),
            query_proj: store.add_uniform(format!("{prefix}.att.W_q"), d_att, d_att, rng),
            score: store.add_uniform(format!("{prefix}.att.U_s"), d_att, 1, rng),
            bias_s: store.add_constant(format!("{prefix}.att.b_s"), 1, d_att, 0.0),
            bias_u: store.add_constant(format!("{prefix}.att.b_u"), 1, 1, 0.0),
        }
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [self.query, self.hidden, self.query_proj, self.score, self.bias_s, self.bias_u]
    }
}

/// Shape settings of one recurrent layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellShape {
    pub kind: CellKind,
    pub nodes: usize,
    pub d_in: usize,
    pub d_hidden: usize,
    /// Attention width; `None` builds a cell without attention.
    pub d_att: Option<usize>,
    pub subsets: usize,
    pub forget_bias: f64,
}

/// All parameters of one recurrent layer, shared across time steps.
#[derive(Debug, Clone)]
pub struct AgcLstmCellParams {
    shape: CellShape,
    gates: [Gate; 4],
    attention: Option<AttentionParams>,
}

const GATE_NAMES: [&str; 4] = ["i", "f", "o", "c"];

impl AgcLstmCellParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, shape: CellShape, rng: &mut R) -> Self {
        let flat_in = shape.nodes * shape.d_in;
        let flat_h = shape.nodes * shape.d_hidden;
        let gates = GATE_NAMES.map(|g| {
            let name = |src: &str| format!("{prefix}.gate_{g}.W_{src}{g}");
            let (input, hidden) = match shape.kind {
                CellKind::Graph => (
                    Transform::Graph(GraphConvWeights::new(
                        store, &name("x"), shape.subsets, shape.d_in, shape.d_hidden, rng,
                    )),
                    Transform::Graph(GraphConvWeights::new(
                        store, &name("h"), shape.subsets, shape.d_hidden, shape.d_hidden, rng,
                    )),
                ),
                CellKind::Dense => (
                    Transform::Dense(store.add_uniform(name("x"), flat_in, flat_h, rng)),
                    Transform::Dense(store.add_uniform(name("h"), flat_h, flat_h, rng)),
                ),
            };
            let bias_len = match shape.kind {
                CellKind::Graph => shape.d_hidden,
                CellKind::Dense => flat_h,
            };
            let init = if g == "f" { shape.forget_bias } else { 0.0 };
            let bias = store.add_constant(format!("{prefix}.gate_{g}.b_{g}"), 1, bias_len, init);
            Gate { input, hidden, bias }
        });
        let attention = shape
            .d_att
            .map(|d_att| AttentionParams::new(store, prefix, shape.d_hidden, d_att, rng));
        AgcLstmCellParams {
            shape,
            gates,
            attention,
        }
    }

    pub fn shape(&self) -> &CellShape {
        &self.shape
    }

    pub fn attention(&self) -> Option<&AttentionParams> {
        self.attention.as_ref()
    }

    /// Bias parameters in gate order i, f, o, c.
    pub fn biases(&self) -> [ParamId; 4] {
        [
            self.gates[0].bias,
            self.gates[1].bias,
            self.gates[2].bias,
            self.gates[3].bias,
        ]
    }

    /// Graph convolution weights of gate `g` (0..4 for i, f, o, c) for the
    /// input side and the hidden side, when this is a graph cell.
    pub fn graph_weights(&self, g: usize) -> Option<(&GraphConvWeights, &GraphConvWeights)> {
        match (&self.gates[g].input, &self.gates[g].hidden) {
            (Transform::Graph(x), Transform::Graph(h)) => Some((x, h)),
            _ => None,
        }
    }
}

/// Recorded state of one time step.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    /// Cell memory `C_t`, `N x d_hidden`.
    pub memory: Var,
    /// Attention-enhanced hidden state `H_t`.
    pub hidden: Var,
    /// Intermediate hidden state `Ĥ_t`.
    pub hidden_pre: Var,
    /// Attention scores `α_t` as an `N x 1` column, when attention is on.
    pub alpha: Option<Var>,
}

/// Plain-tensor snapshot of a [`CellState`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgcLstmState {
    pub memory: Tensor,
    pub hidden: Tensor,
    pub hidden_pre: Tensor,
    pub alpha: Option<Tensor>,
}

impl AgcLstmState {
    pub fn capture(tape: &Tape, s: &CellState) -> Self {
        AgcLstmState {
            memory: tape.value(s.memory).clone(),
            hidden: tape.value(s.hidden).clone(),
            hidden_pre: tape.value(s.hidden_pre).clone(),
            alpha: s.alpha.map(|a| tape.value(a).clone()),
        }
    }
}

/// Per-node attention scores `α = σ(U_s tanh(Ĥ W_h + q W_q + b_s) + b_u)`
/// with query `q = ReLU(Σ_i Ĥ_i W)`. Returns an `N x 1` column.
pub fn attention(tape: &mut Tape, hidden_pre: Var, p: &AttentionParams) -> Result<Var> {
    let w = tape.param(p.query);
    let projected = tape.matmul(hidden_pre, w)?;
    let summed = tape.sum_rows(projected);
    let query = tape.relu(summed);

    let w_q = tape.param(p.query_proj);
    let b_s = tape.param(p.bias_s);
    let q_term = tape.matmul(query, w_q)?;
    let row = tape.add(q_term, b_s)?;
    let w_h = tape.param(p.hidden);
    let per_node = tape.matmul(hidden_pre, w_h)?;
    let pre = tape.add_row(per_node, row)?;
    let act = tape.tanh(pre);

    let u_s = tape.param(p.score);
    let b_u = tape.param(p.bias_u);
    let scores = tape.matmul(act, u_s)?;
    let scores = tape.add_row(scores, b_u)?;
    Ok(tape.sigmoid(scores))
}

struct Prepared {
    /// Graph cells: `Â_k X`; dense cells: the flattened input.
    parts: Vec<Var>,
}

fn prepare(tape: &mut Tape, x: Var, kind: CellKind, adj: &AdjacencyStack) -> Result<Prepared> {
    let parts = match kind {
        CellKind::Graph => propagate(tape, x, adj)?,
        CellKind::Dense => {
            let len = tape.value(x).len();
            vec![tape.reshape(x, &[1, len])?]
        }
    };
    Ok(Prepared { parts })
}

fn transform(tape: &mut Tape, prepared: &Prepared, t: &Transform, gate: &str) -> Result<Var> {
    match t {
        Transform::Graph(w) => apply_propagated(tape, &prepared.parts, w),
        Transform::Dense(id) => {
            let w = tape.param(*id);
            let x = prepared.parts[0];
            let (xs, ws) = (tape.value(x).shape().to_vec(), tape.value(w).shape().to_vec());
            if xs[1] != ws[0] {
                return Err(Error::dim(format!("gate_{gate}"), &xs, &ws));
            }
            tape.matmul(x, w)
        }
    }
}

/// One recurrent step. `prev = None` is the zero initial state.
pub fn cell_step(
    tape: &mut Tape,
    x: Var,
    prev: Option<&CellState>,
    p: &AgcLstmCellParams,
    adj: &AdjacencyStack,
) -> Result<CellState> {
    let s = p.shape;
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 2 || xs[0] != s.nodes || xs[1] != s.d_in {
        return Err(Error::dim("cell input", &xs, &[s.nodes, s.d_in]));
    }
    let x_prep = prepare(tape, x, s.kind, adj)?;
    let h_prep = match prev {
        Some(prev) => Some(prepare(tape, prev.hidden, s.kind, adj)?),
        None => None,
    };

    let mut pre = Vec::with_capacity(4);
    for (g, gate) in p.gates.iter().enumerate() {
        let name = GATE_NAMES[g];
        let mut z = transform(tape, &x_prep, &gate.input, name)?;
        if let Some(h_prep) = &h_prep {
            let zh = transform(tape, h_prep, &gate.hidden, name)?;
            z = tape.add(z, zh)?;
        }
        let b = tape.param(gate.bias);
        let z = match s.kind {
            CellKind::Graph => tape.add_row(z, b)?,
            CellKind::Dense => {
                let z = tape.add(z, b)?;
                tape.reshape(z, &[s.nodes, s.d_hidden])?
            }
        };
        pre.push(z);
    }
    let input_gate = tape.sigmoid(pre[0]);
    let forget_gate = tape.sigmoid(pre[1]);
    let output_gate = tape.sigmoid(pre[2]);
    let modulated = tape.tanh(pre[3]);

    let written = tape.mul(input_gate, modulated)?;
    let memory = match prev {
        Some(prev) => {
            let kept = tape.mul(forget_gate, prev.memory)?;
            tape.add(kept, written)?
        }
        None => written,
    };
    let squashed = tape.tanh(memory);
    let hidden_pre = tape.mul(output_gate, squashed)?;

    let (hidden, alpha) = match &p.attention {
        Some(att) => {
            let alpha = attention(tape, hidden_pre, att)?;
            let gain = tape.add_scalar(alpha, 1.0);
            (tape.mul_col(hidden_pre, gain)?, Some(alpha))
        }
        None => (hidden_pre, None),
    };
    Ok(CellState {
        memory,
        hidden,
        hidden_pre,
        alpha,
    })
}

/// States of every step of one layer.
#[derive(Debug, Clone, Default)]
pub struct LayerOutput {
    pub states: Vec<CellState>,
}

impl LayerOutput {
    pub fn hidden(&self) -> Vec<Var> {
        self.states.iter().map(|s| s.hidden).collect()
    }

    pub fn alphas(&self) -> Option<Vec<Var>> {
        self.states.iter().map(|s| s.alpha).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Runs the cell over `seq` from a zero initial state.
pub fn layer_forward(
    tape: &mut Tape,
    seq: &[Var],
    p: &AgcLstmCellParams,
    adj: &AdjacencyStack,
) -> Result<LayerOutput> {
    if seq.is_empty() {
        return Err(Error::Data("recurrent layer needs a non-empty sequence".into()));
    }
    let mut states: Vec<CellState> = Vec::with_capacity(seq.len());
    for &x in seq {
        let s = cell_step(tape, x, states.last(), p, adj)?;
        states.push(s);
    }
    Ok(LayerOutput { states })
}

/// Output length of average pooling: `floor((len - window) / stride) + 1`.
pub fn pooled_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::config("pooling", "window and stride must be at least 1"));
    }
    if len < window {
        return Err(Error::Data(format!(
            "sequence of {len} steps is shorter than the pooling window {window}; \
             shorten the pooling schedule or lengthen the input"
        )));
    }
    Ok((len - window) / stride + 1)
}

/// Mean of frames `[t * stride, t * stride + window)` for each output `t`.
pub fn temporal_avg_pool(tape: &mut Tape, seq: &[Var], window: usize, stride: usize) -> Result<Vec<Var>> {
    let out_len = pooled_len(seq.len(), window, stride)?;
    if window == 1 && stride == 1 {
        return Ok(seq.to_vec());
    }
    (0..out_len)
        .map(|t| {
            let start = t * stride;
            let total = tape.sum_of(&seq[start..start + window])?;
            Ok(tape.scale(total, 1.0 / window as f64))
        })
        .collect()
}
