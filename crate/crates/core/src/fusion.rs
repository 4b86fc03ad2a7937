//! Cross-layer and cross-encoder fusion.
//!
//! [`hierarchical_fuse`] contextualizes each token's per-layer states with a
//! BiLSTM run along the layer axis, scores every layer with a learned
//! vector, softmax-normalizes the scores per token and takes the weighted
//! sum of the layer states. [`gated_fuse`] blends two encoders' sequences
//! with an elementwise sigmoid gate.

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::encoder::LayerStack;
use crate::error::{shape_err, Result};
use crate::nn::{bilstm_steps, linear, BiLstmParams, Init, LinearParams};

#[derive(Clone, Debug)]
pub struct LayerFusionParams {
    pub bilstm: BiLstmParams,
    /// Scoring vector of length `2 * hidden`.
    pub score: ParamId,
}

impl LayerFusionParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, init: &mut Init) -> Self {
        let bilstm = BiLstmParams::new(store, &format!("{name}.bilstm"), dim, hidden, init);
        let width = bilstm.output_width();
        let score = store.add(format!("{name}.score"), init.fan_in(&[width], width));
        Self { bilstm, score }
    }
}

/// Output of [`hierarchical_fuse`].
#[derive(Clone, Copy, Debug)]
pub struct FusedSequence {
    /// `T×d`.
    pub values: Var,
    /// `T×L`, each row a softmax over layers.
    pub layer_weights: Var,
}

pub fn hierarchical_fuse(
    g: &mut Graph,
    store: &ParamStore,
    p: &LayerFusionParams,
    stack: &LayerStack,
) -> Result<FusedSequence> {
    let first = *stack
        .layers
        .first()
        .ok_or_else(|| shape_err("hierarchical_fuse", "empty layer stack"))?;
    let [tokens, dim] = *g.shape(first) else {
        return Err(shape_err("hierarchical_fuse", "layer states must be matrices"));
    };
    if dim != p.bilstm.input {
        return Err(shape_err(
            "hierarchical_fuse",
            format!("hidden width {dim} does not match BiLSTM input {}", p.bilstm.input),
        ));
    }
    let contextual = bilstm_steps(g, store, &p.bilstm, &stack.layers)?;
    let w = g.param(store, p.score);
    let w = g.reshape(w, &[p.bilstm.output_width(), 1])?;
    let scores = contextual
        .iter()
        .map(|&u| g.matmul(u, w))
        .collect::<Result<Vec<_>>>()?;
    let scores = g.concat_cols(&scores)?;
    let weights = g.softmax(scores)?;
    let mut acc: Option<Var> = None;
    for (l, &h) in stack.layers.iter().enumerate() {
        let alpha = g.slice_cols(weights, l, 1)?;
        let term = g.mul(h, alpha)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    let values = acc.expect("non-empty stack");
    debug_assert_eq!(g.shape(values), [tokens, dim]);
    Ok(FusedSequence {
        values,
        layer_weights: weights,
    })
}

#[derive(Clone, Debug)]
pub struct GateParams {
    /// Maps `[h_a; c_b]` (width `2d`) to `d` gate logits.
    pub proj: LinearParams,
}

impl GateParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, init: &mut Init) -> Self {
        Self {
            proj: LinearParams::new(store, &format!("{name}.proj"), 2 * dim, dim, init),
        }
    }
}

/// `gate = σ(W[h_a; c_b] + b)`, `fused = gate ⊙ h_a + (1 − gate) ⊙ c_b`.
///
/// Returns `(fused, gate)`.
pub fn gated_fuse(g: &mut Graph, store: &ParamStore, p: &GateParams, h_a: Var, c_b: Var) -> Result<(Var, Var)> {
    if g.shape(h_a) != g.shape(c_b) {
        return Err(shape_err(
            "gated_fuse",
            format!("{:?} vs {:?}", g.shape(h_a), g.shape(c_b)),
        ));
    }
    let joined = g.concat_cols(&[h_a, c_b])?;
    let logits = linear(g, store, &p.proj, joined)?;
    let gate = g.sigmoid(logits)?;
    let from_a = g.mul(gate, h_a)?;
    let rest = g.one_minus(gate)?;
    let from_b = g.mul(rest, c_b)?;
    Ok((g.add(from_a, from_b)?, gate))
}

/// Unparameterized stand-in for the gate: `(h_a + c_b) / 2`.
pub fn mean_fuse(g: &mut Graph, h_a: Var, c_b: Var) -> Result<Var> {
    let sum = g.add(h_a, c_b)?;
    g.scale(sum, 0.5)
}

/// Global average pooling over the token axis: `T×d → d`.
pub fn gap_pool(g: &mut Graph, x: Var) -> Result<Var> {
    match *g.shape(x) {
        [t, _] if t >= 1 => g.mean(x, 0),
        ref s => Err(shape_err("gap_pool", format!("expected a non-empty T×d matrix, got {s:?}"))),
    }
}
