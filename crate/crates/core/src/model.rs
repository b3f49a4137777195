//! The end-to-end network: feature augmentation, stacked recurrent layers
//! with temporal pooling, global and local readouts, the training loss,
//! prediction, part streams and hybrid fusion.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::{layer_forward, pooled_len, temporal_avg_pool, AgcLstmCellParams, CellKind, CellShape};
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyStack, PartMap, SkeletonGraph};
use crate::numerics::{softmax_rows, ParamId, ParamStore, Tape, Tensor, Var};

/// Which ablation of the network to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub cell: CellKind,
    pub attention: bool,
    pub temporal_hierarchy: bool,
}

impl Variant {
    pub const AGC_LSTM: Variant = Variant {
        cell: CellKind::Graph,
        attention: true,
        temporal_hierarchy: true,
    };
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, th) = match s.strip_suffix("+th") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let (cell, attention) = match base {
            "agc-lstm" => return Ok(Variant::AGC_LSTM),
            "gc-lstm" => (CellKind::Graph, false),
            "lstm" => (CellKind::Dense, false),
            _ => {
                return Err(Error::config(
                    "variant",
                    format!("unknown variant `{s}` (expected agc-lstm, gc-lstm, gc-lstm+th, lstm, lstm+th)"),
                ))
            }
        };
        Ok(Variant {
            cell,
            attention,
            temporal_hierarchy: th,
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Variant::AGC_LSTM {
            return write!(f, "agc-lstm");
        }
        let base = match (self.cell, self.attention) {
            (CellKind::Graph, true) => "agc-lstm",
            (CellKind::Graph, false) => "gc-lstm",
            (CellKind::Dense, _) => "lstm",
        };
        write!(f, "{base}{}", if self.temporal_hierarchy { "+th" } else { "" })
    }
}

/// Loss weights of the attention regularizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the equal-attention term.
    pub lambda: f64,
    /// Weight of the attention-sparsity term.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.01,
            beta: 0.001,
        }
    }
}

/// Widths and schedule of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub classes: usize,
    /// Width of the position encoding of each node.
    pub encoder_width: usize,
    /// Output width of the shared augmentation LSTM.
    pub augment_width: usize,
    /// Hidden width of every recurrent layer.
    pub hidden_width: usize,
    pub attention_width: usize,
    pub layers: usize,
    /// `(window, stride)` applied between consecutive layers.
    pub pooling: (usize, usize),
    pub dropout: f64,
    pub forget_bias: f64,
    pub variant: Variant,
}

impl NetworkConfig {
    /// Full-size widths: 256-d encoder, 512-d layers.
    pub fn full(classes: usize) -> Self {
        NetworkConfig {
            classes,
            encoder_width: 256,
            augment_width: 512,
            hidden_width: 512,
            attention_width: 128,
            layers: 3,
            pooling: (2, 2),
            dropout: 0.5,
            forget_bias: 1.0,
            variant: Variant::AGC_LSTM,
        }
    }

    /// Same structure with every width set to `width`.
    pub fn toy(classes: usize, width: usize) -> Self {
        NetworkConfig {
            encoder_width: width,
            augment_width: width,
            hidden_width: width,
            attention_width: (width / 4).max(1),
            dropout: 0.0,
            ..Self::full(classes)
        }
    }

    fn pooling_for_layers(&self) -> (usize, usize) {
        if self.variant.temporal_hierarchy {
            self.pooling
        } else {
            (1, 1)
        }
    }

    /// Number of steps seen by each layer for an input of `t` frames.
    pub fn layer_lengths(&self, t: usize) -> Result<Vec<usize>> {
        let (w, s) = self.pooling_for_layers();
        let mut lens = vec![t];
        for _ in 1..self.layers {
            let prev = *lens.last().expect("non-empty");
            lens.push(pooled_len(prev, w, s)?);
        }
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("classes", self.classes),
            ("encoder_width", self.encoder_width),
            ("augment_width", self.augment_width),
            ("hidden_width", self.hidden_width),
            ("attention_width", self.attention_width),
            ("layers", self.layers),
            ("pool_window", self.pooling.0),
            ("pool_stride", self.pooling.1),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        crate::numerics::dropout(&Tensor::scalar(0.0), self.dropout, false, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(())
    }
}

/// What the network's nodes are.
#[derive(Debug, Clone, PartialEq)]
pub enum Stream {
    Joints,
    Parts(PartMap),
}

/// Linear position encoder plus an LSTM shared by every node.
#[derive(Debug, Clone)]
pub struct FeatureAugmenter {
    pub position_w: ParamId,
    pub position_b: ParamId,
    /// Gate order i, f, o, c: `(W_x, W_h, b)`.
    pub lstm: [(ParamId, ParamId, ParamId); 4],
}

impl FeatureAugmenter {
    fn new<R: Rng>(store: &mut ParamStore, input_width: usize, cfg: &NetworkConfig, rng: &mut R) -> Self {
        let enc = cfg.encoder_width;
        let out = cfg.augment_width;
        let position_w = store.add_uniform("augment.pos.W", input_width, enc, rng);
        let position_b = store.add_constant("augment.pos.b", 1, enc, 0.0);
        let lstm = ["i", "f", "o", "c"].map(|g| {
            let wx = store.add_uniform(format!("augment.lstm.W_x{g}"), 2 * enc, out, rng);
            let wh = store.add_uniform(format!("augment.lstm.W_h{g}"), out, out, rng);
            let init = if g == "f" { cfg.forget_bias } else { 0.0 };
            let b = store.add_constant(format!("augment.lstm.b_{g}"), 1, out, init);
            (wx, wh, b)
        });
        FeatureAugmenter {
            position_w,
            position_b,
            lstm,
        }
    }

    /// Position features `P_t` for every frame.
    pub fn positions(&self, tape: &mut Tape, frames: &[Tensor]) -> Result<Vec<Var>> {
        let w = tape.param(self.position_w);
        let b = tape.param(self.position_b);
        frames
            .iter()
            .map(|f| {
                let x = tape.constant(f.clone());
                let p = tape.matmul(x, w)?;
                tape.add_row(p, b)
            })
            .collect()
    }

    /// Augmented features `E_t = LSTM([P_t, P_t - P_{t-1}])` with `V_1 = 0`.
    pub fn forward(&self, tape: &mut Tape, frames: &[Tensor]) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(Error::Data("feature augmentation needs at least one frame".into()));
        }
        let positions = self.positions(tape, frames)?;
        let shape = tape.value(positions[0]).shape().to_vec();
        let mut out = Vec::with_capacity(frames.len());
        let mut state: Option<(Var, Var)> = None;
        for t in 0..positions.len() {
            let motion = if t == 0 {
                tape.constant(Tensor::zeros(&shape))
            } else {
                tape.sub(positions[t], positions[t - 1])?
            };
            let x = tape.concat_cols(positions[t], motion)?;
            let mut gates = Vec::with_capacity(4);
            for &(wx, wh, b) in &self.lstm {
                let wxv = tape.param(wx);
                let mut z = tape.matmul(x, wxv)?;
                if let Some((h, _)) = state {
                    let whv = tape.param(wh);
                    let zh = tape.matmul(h, whv)?;
                    z = tape.add(z, zh)?;
                }
                let bv = tape.param(b);
                gates.push(tape.add_row(z, bv)?);
            }
            let i = tape.sigmoid(gates[0]);
            let f = tape.sigmoid(gates[1]);
            let o = tape.sigmoid(gates[2]);
            let u = tape.tanh(gates[3]);
            let written = tape.mul(i, u)?;
            let c = match state {
                Some((_, c_prev)) => {
                    let kept = tape.mul(f, c_prev)?;
                    tape.add(kept, written)?
                }
                None => written,
            };
            let squashed = tape.tanh(c);
            let h = tape.mul(o, squashed)?;
            state = Some((h, c));
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    w: ParamId,
    b: ParamId,
}

impl Head {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, d: usize, classes: usize, rng: &mut R) -> Self {
        Head {
            w: store.add_uniform(format!("head.{name}.W"), d, classes, rng),
            b: store.add_constant(format!("head.{name}.b"), 1, classes, 0.0),
        }
    }

    fn apply(&self, tape: &mut Tape, feature: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let z = tape.matmul(feature, w)?;
        tape.add(z, b)
    }
}

/// Everything one forward pass records.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Per layer, per step attention columns (`N x 1`); empty without attention.
    pub alphas: Vec<Vec<Var>>,
    /// Steps seen by each layer.
    pub layer_lengths: Vec<usize>,
    /// Hidden states of the top layer.
    pub top_hidden: Vec<Var>,
    pub global_features: Vec<Var>,
    pub local_features: Vec<Var>,
    pub global_logits: Vec<Var>,
    pub local_logits: Vec<Var>,
}

/// Loss value split by term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub global_xent: f64,
    pub local_xent: f64,
    pub balance: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub global_xent: Var,
    pub local_xent: Var,
    pub balance: Option<Var>,
    pub sparsity: Option<Var>,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        LossTerms {
            total: tape.scalar(self.total),
            global_xent: tape.scalar(self.global_xent),
            local_xent: tape.scalar(self.local_xent),
            balance: self.balance.map_or(0.0, |v| tape.scalar(v)),
            sparsity: self.sparsity.map_or(0.0, |v| tape.scalar(v)),
        }
    }
}

/// Fused class decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Average of the two heads' probabilities.
    pub probabilities: Vec<f64>,
}

/// First index of the maximum; ties go to the lowest class.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The full network together with the parameters it owns.
#[derive(Debug, Clone)]
pub struct AgcLstmNetwork {
    config: NetworkConfig,
    stream: Stream,
    skeleton: SkeletonGraph,
    graph: SkeletonGraph,
    adjacency: AdjacencyStack,
    params: ParamStore,
    augmenter: FeatureAugmenter,
    layers: Vec<AgcLstmCellParams>,
    global_head: Head,
    local_head: Head,
}

impl AgcLstmNetwork {
    /// Builds and initializes a network over `skeleton` (joints) or over the
    /// part graph induced by a part map.
    pub fn new(config: NetworkConfig, skeleton: &SkeletonGraph, stream: Stream, seed: u64) -> Result<Self> {
        config.validate()?;
        let (graph, input_width) = match &stream {
            Stream::Joints => (skeleton.clone(), 3),
            Stream::Parts(parts) => (skeleton.part_graph(parts)?, 3 * parts.max_part_size()),
        };
        let adjacency = graph.adjacency_stack()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let augmenter = FeatureAugmenter::new(&mut params, input_width, &config, &mut rng);
        let layers = (0..config.layers)
            .map(|l| {
                let shape = CellShape {
                    kind: config.variant.cell,
                    nodes: graph.joint_count(),
                    d_in: if l == 0 { config.augment_width } else { config.hidden_width },
                    d_hidden: config.hidden_width,
                    d_att: config.variant.attention.then_some(config.attention_width),
                    subsets: graph.subsets(),
                    forget_bias: config.forget_bias,
                };
                AgcLstmCellParams::new(&mut params, &format!("layer{}", l + 1), shape, &mut rng)
            })
            .collect();
        let global_head = Head::new(&mut params, "global", config.hidden_width, config.classes, &mut rng);
        let local_head = Head::new(&mut params, "local", config.hidden_width, config.classes, &mut rng);
        Ok(AgcLstmNetwork {
            config,
            stream,
            skeleton: skeleton.clone(),
            graph,
            adjacency,
            params,
            augmenter,
            layers,
            global_head,
            local_head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stream(&self) -> &Stream {
        &self.stream
    }

    /// Graph the recurrent layers run on (the part graph for part streams).
    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    /// Skeleton of the input sequences.
    pub fn skeleton(&self) -> &SkeletonGraph {
        &self.skeleton
    }

    /// Root joint of the input skeleton (used for centering).
    pub fn graph_root(&self) -> usize {
        self.skeleton.root()
    }

    /// Joints per input frame.
    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn augmenter(&self) -> &FeatureAugmenter {
        &self.augmenter
    }

    pub fn layers(&self) -> &[AgcLstmCellParams] {
        &self.layers
    }

    pub fn adjacency(&self) -> &AdjacencyStack {
        &self.adjacency
    }

    /// Per-frame node inputs: `N x 3` for joints, `P x 3m` for parts.
    pub fn inputs(&self, seq: &SkeletonSequence) -> Result<Vec<Tensor>> {
        seq.validate(Some(self.joint_count()))?;
        match &self.stream {
            Stream::Joints => seq
                .frames
                .iter()
                .map(|f| Tensor::matrix(f.len(), 3, f.iter().flatten().copied().collect()))
                .collect(),
            Stream::Parts(parts) => part_inputs(seq, parts),
        }
    }

    /// Runs the whole network. Dropout is applied between layers only when
    /// `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        seq: &SkeletonSequence,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let frames = self.inputs(seq)?;
        self.forward_inputs(tape, &frames, dropout_rng)
    }

    pub fn forward_inputs(
        &self,
        tape: &mut Tape,
        frames: &[Tensor],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput> {
        let layer_lengths = self.config.layer_lengths(frames.len())?;
        let (window, stride) = self.config.pooling_for_layers();
        let mut seq = self.augmenter.forward(tape, frames)?;
        let mut alphas = Vec::new();
        let mut top = None;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    seq = seq
                        .into_iter()
                        .map(|h| tape.dropout(h, self.config.dropout, rng))
                        .collect::<Result<_>>()?;
                }
                seq = temporal_avg_pool(tape, &seq, window, stride)?;
            }
            let out = layer_forward(tape, &seq, layer, &self.adjacency)?;
            if let Some(a) = out.alphas() {
                alphas.push(a);
            }
            seq = out.hidden();
            top = Some(out);
        }
        let top = top.expect("at least one layer");

        let mut global_features = Vec::with_capacity(top.len());
        let mut local_features = Vec::with_capacity(top.len());
        let mut global_logits = Vec::with_capacity(top.len());
        let mut local_logits = Vec::with_capacity(top.len());
        for s in &top.states {
            let fg = tape.sum_rows(s.hidden);
            let fl = match s.alpha {
                Some(a) => {
                    let weighted = tape.mul_col(s.hidden_pre, a)?;
                    tape.sum_rows(weighted)
                }
                None => fg,
            };
            global_logits.push(self.global_head.apply(tape, fg)?);
            local_logits.push(self.local_head.apply(tape, fl)?);
            global_features.push(fg);
            local_features.push(fl);
        }
        Ok(ForwardOutput {
            alphas,
            layer_lengths,
            top_hidden: top.hidden(),
            global_features,
            local_features,
            global_logits,
            local_logits,
        })
    }

    /// Eval-mode forward pass followed by [`predict`].
    pub fn predict_sequence(&self, seq: &SkeletonSequence) -> Result<Prediction> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, seq, None)?;
        predict(&tape, &out)
    }

    /// Attention scores of every layer as `T_j x N` matrices.
    pub fn attention_maps(&self, seq: &SkeletonSequence) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, seq, None)?;
        out.alphas
            .iter()
            .map(|layer| {
                let n = self.graph.joint_count();
                let data = layer.iter().flat_map(|&a| tape.value(a).data().to_vec()).collect();
                Tensor::matrix(layer.len(), n, data)
            })
            .collect()
    }
}

/// Concatenated coordinates of each part's joints, zero-padded to the
/// largest part: one `P x 3m` matrix per frame.
pub fn part_inputs(seq: &SkeletonSequence, parts: &PartMap) -> Result<Vec<Tensor>> {
    parts.owners(seq.joints())?;
    let width = 3 * parts.max_part_size();
    seq.frames
        .iter()
        .map(|f| {
            let mut data = Vec::with_capacity(parts.len() * width);
            for (_, joints) in parts.parts() {
                for &j in joints {
                    data.extend_from_slice(&f[j]);
                }
                data.resize(data.len() + 3 * (parts.max_part_size() - joints.len()), 0.0);
            }
            Tensor::matrix(parts.len(), width, data)
        })
        .collect()
}

/// Cross-entropy of both heads over every top-layer step plus the two
/// attention regularizers.
pub fn loss(tape: &mut Tape, out: &ForwardOutput, label: usize, w: LossWeights) -> Result<LossVars> {
    let classes = tape.value(out.global_logits[0]).cols();
    if label >= classes {
        return Err(Error::Data(format!("label {label} outside {classes} classes")));
    }
    let xent = |tape: &mut Tape, logits: &[Var]| -> Result<Var> {
        let terms = logits
            .iter()
            .map(|&o| tape.softmax_xent(o, label))
            .collect::<Result<Vec<_>>>()?;
        tape.sum_of(&terms)
    };
    let global_xent = xent(tape, &out.global_logits)?;
    let local_xent = xent(tape, &out.local_logits)?;
    let mut total = tape.add(global_xent, local_xent)?;

    let (mut balance, mut sparsity) = (None, None);
    if !out.alphas.is_empty() {
        let mut balance_terms = Vec::new();
        let mut sparsity_terms = Vec::new();
        for layer in &out.alphas {
            let steps = layer.len() as f64;
            // sum_n (1 - mean_t alpha_tn)^2
            let summed = tape.sum_of(layer)?;
            let mean = tape.scale(summed, -1.0 / steps);
            let gap = tape.add_scalar(mean, 1.0);
            let sq = tape.square(gap);
            balance_terms.push(tape.sum_all(sq));
            // (1/T_j) sum_t (sum_n alpha_tn)^2
            let per_step = layer
                .iter()
                .map(|&a| {
                    let s = tape.sum_all(a);
                    tape.square(s)
                })
                .collect::<Vec<_>>();
            let s = tape.sum_of(&per_step)?;
            sparsity_terms.push(tape.scale(s, 1.0 / steps));
        }
        let b = tape.sum_of(&balance_terms)?;
        let b = tape.scale(b, w.lambda);
        let s = tape.sum_of(&sparsity_terms)?;
        let s = tape.scale(s, w.beta);
        total = tape.add(total, b)?;
        total = tape.add(total, s)?;
        balance = Some(b);
        sparsity = Some(s);
    }
    Ok(LossVars {
        total,
        global_xent,
        local_xent,
        balance,
        sparsity,
    })
}

/// Sums the two heads' probabilities at the last step; reports half the sum.
pub fn predict(tape: &Tape, out: &ForwardOutput) -> Result<Prediction> {
    let (Some(&g), Some(&l)) = (out.global_logits.last(), out.local_logits.last()) else {
        return Err(Error::Data("forward pass produced no steps".into()));
    };
    let pg = softmax_rows(tape.value(g));
    let pl = softmax_rows(tape.value(l));
    Ok(fuse(pg.data(), pl.data()))
}

fn fuse(a: &[f64], b: &[f64]) -> Prediction {
    let sum: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    Prediction {
        class: argmax(&sum),
        probabilities: sum.iter().map(|v| v / 2.0).collect(),
    }
}

/// Fuses two predictions by summing their probability vectors.
pub fn fuse_predictions(a: &Prediction, b: &Prediction) -> Result<Prediction> {
    if a.probabilities.len() != b.probabilities.len() {
        return Err(Error::Data(format!(
            "class counts differ: {} vs {}",
            a.probabilities.len(),
            b.probabilities.len()
        )));
    }
    Ok(fuse(&a.probabilities, &b.probabilities))
}

/// Decision of the joint and part streams combined.
pub fn hybrid_predict(
    joint_net: &AgcLstmNetwork,
    part_net: &AgcLstmNetwork,
    seq: &SkeletonSequence,
) -> Result<Prediction> {
    if joint_net.config.classes != part_net.config.classes {
        return Err(Error::Data(format!(
            "class counts differ: joint stream {} vs part stream {}",
            joint_net.config.classes, part_net.config.classes
        )));
    }
    let a = joint_net.predict_sequence(seq)?;
    let b = part_net.predict_sequence(seq)?;
    fuse_predictions(&a, &b)
}
