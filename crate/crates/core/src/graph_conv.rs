//! Spatial graph convolution `Y = sum_k Â_k X W_k`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::AdjacencyStack;
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// One weight matrix per adjacency subset, all `d_in x d_out`.
#[derive(Debug, Clone)]
pub struct GraphConvWeights {
    name: String,
    weights: Vec<ParamId>,
    d_in: usize,
    d_out: usize,
}

impl GraphConvWeights {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        subsets: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let weights = (0..subsets)
            .map(|k| store.add_uniform(format!("{name}.W{}", k + 1), d_in, d_out, rng))
            .collect();
        GraphConvWeights {
            name: name.to_string(),
            weights,
            d_in,
            d_out,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }
}

/// `[Â_1 X, ..., Â_K X]`, shared by every convolution of the same input.
pub fn propagate(tape: &mut Tape, x: Var, adj: &AdjacencyStack) -> Result<Vec<Var>> {
    let n = adj.joint_count();
    let shape = tape.value(x).shape().to_vec();
    if shape[0] != n {
        return Err(Error::dim("graph_conv(nodes)", &shape, &[n, n]));
    }
    (0..adj.subsets())
        .map(|k| tape.left_const(adj.normalized(k), x))
        .collect()
}

/// Finishes a convolution from already-propagated inputs.
pub fn apply_propagated(tape: &mut Tape, propagated: &[Var], w: &GraphConvWeights) -> Result<Var> {
    if propagated.len() != w.weights.len() {
        return Err(Error::dim(
            format!("{}(subsets)", w.name),
            &[propagated.len()],
            &[w.weights.len()],
        ));
    }
    let mut terms = Vec::with_capacity(propagated.len());
    for (&p, &wk) in propagated.iter().zip(&w.weights) {
        let cols = tape.value(p).cols();
        if cols != w.d_in {
            let shape = tape.value(p).shape().to_vec();
            return Err(Error::dim(format!("{}(d_in)", w.name), &shape, &[w.d_in, w.d_out]));
        }
        let wv = tape.param(wk);
        terms.push(tape.matmul(p, wv)?);
    }
    tape.sum_of(&terms)
}

/// Graph convolution of node features `x` (`N x d_in`).
pub fn graph_conv(tape: &mut Tape, x: Var, w: &GraphConvWeights, adj: &AdjacencyStack) -> Result<Var> {
    let propagated = propagate(tape, x, adj)?;
    apply_propagated(tape, &propagated, w)
}
