//! Differentiable building blocks: linear, layer norm, embeddings,
//! single-head self-attention, feed-forward and a bidirectional LSTM.
//!
//! Parameters live in a [`ParamStore`]; each block holds [`ParamId`]s and
//! its forward function records onto a [`Graph`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Seeded parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("uniform: invalid shape")
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.uniform(shape, 1.0 / (fan_in as f64).sqrt())
    }
}

/// Inverted dropout driven by its own seeded stream.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.shape(x).to_vec();
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = g.constant(Tensor::new(shape, mask)?);
        g.mul(x, mask)
    }
}

/// Applies dropout when a stream is present, otherwise passes `x` through.
pub fn maybe_dropout(g: &mut Graph, x: Var, dropout: Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

#[derive(Clone, Debug)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearParams {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, init: &mut Init) -> Self {
        let weight = store.add(format!("{name}.weight"), init.fan_in(&[out_dim, in_dim], in_dim));
        let bias = store.add(format!("{name}.bias"), init.fan_in(&[out_dim], in_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }
}

/// `x · Wᵀ + b` over the last axis of a rank-1 or rank-2 `x`.
pub fn linear(g: &mut Graph, store: &ParamStore, p: &LinearParams, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if *shape.last().unwrap() != p.in_dim || shape.len() > 2 {
        return Err(shape_err(
            "linear",
            format!("input {shape:?} does not end in width {}", p.in_dim),
        ));
    }
    let x2 = if shape.len() == 1 {
        g.reshape(x, &[1, p.in_dim])?
    } else {
        x
    };
    let w = g.param(store, p.weight);
    let wt = g.transpose(w)?;
    let xw = g.matmul(x2, wt)?;
    let b = g.param(store, p.bias);
    let y = g.add_row(xw, b)?;
    if shape.len() == 1 {
        g.reshape(y, &[p.out_dim])
    } else {
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[dim])),
        }
    }
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, p: &LayerNormParams, x: Var) -> Result<Var> {
    let gain = g.param(store, p.gain);
    let shift = g.param(store, p.shift);
    g.layer_norm(x, gain, shift, LAYER_NORM_EPS)
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, init: &mut Init) -> Self {
        Self {
            query: LinearParams::new(store, &format!("{name}.query"), dim, dim, init),
            key: LinearParams::new(store, &format!("{name}.key"), dim, dim, init),
            value: LinearParams::new(store, &format!("{name}.value"), dim, dim, init),
            output: LinearParams::new(store, &format!("{name}.output"), dim, dim, init),
        }
    }
}

/// Single-head scaled dot-product self-attention over `x[T×d]`.
///
/// Returns the projected output and the `T×T` attention matrix.
pub fn self_attention(g: &mut Graph, store: &ParamStore, p: &AttentionParams, x: Var) -> Result<(Var, Var)> {
    let d = p.query.in_dim;
    match *g.shape(x) {
        [_, w] if w == d => {}
        ref s => return Err(shape_err("self_attention", format!("expected [T, {d}], got {s:?}"))),
    }
    let q = linear(g, store, &p.query, x)?;
    let k = linear(g, store, &p.key, x)?;
    let v = linear(g, store, &p.value, x)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = g.softmax(scores)?;
    let mixed = g.matmul(weights, v)?;
    let out = linear(g, store, &p.output, mixed)?;
    Ok((out, weights))
}

#[derive(Clone, Debug)]
pub struct FeedForwardParams {
    pub up: LinearParams,
    pub down: LinearParams,
}

impl FeedForwardParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, init: &mut Init) -> Self {
        Self {
            up: LinearParams::new(store, &format!("{name}.up"), dim, hidden, init),
            down: LinearParams::new(store, &format!("{name}.down"), hidden, dim, init),
        }
    }
}

pub fn feed_forward(g: &mut Graph, store: &ParamStore, p: &FeedForwardParams, x: Var) -> Result<Var> {
    let h = linear(g, store, &p.up, x)?;
    let h = g.relu(h)?;
    linear(g, store, &p.down, h)
}

/// Gate weights of one LSTM direction, each mapping `[x; h]` to `h`.
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub input_gate: LinearParams,
    pub forget_gate: LinearParams,
    pub cell_gate: LinearParams,
    pub output_gate: LinearParams,
}

impl LstmCellParams {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, init: &mut Init) -> Self {
        let width = input + hidden;
        let cell = Self {
            input_gate: LinearParams::new(store, &format!("{name}.input_gate"), width, hidden, init),
            forget_gate: LinearParams::new(store, &format!("{name}.forget_gate"), width, hidden, init),
            cell_gate: LinearParams::new(store, &format!("{name}.cell_gate"), width, hidden, init),
            output_gate: LinearParams::new(store, &format!("{name}.output_gate"), width, hidden, init),
        };
        store
            .get_mut(cell.forget_gate.bias)
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = 1.0);
        cell
    }

    fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let z = g.concat_cols(&[x, h])?;
        let i = linear(g, store, &self.input_gate, z)?;
        let i = g.sigmoid(i)?;
        let f = linear(g, store, &self.forget_gate, z)?;
        let f = g.sigmoid(f)?;
        let cand = linear(g, store, &self.cell_gate, z)?;
        let cand = g.tanh(cand)?;
        let o = linear(g, store, &self.output_gate, z)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next)?;
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmParams {
    pub forward: LstmCellParams,
    pub backward: LstmCellParams,
    pub input: usize,
    pub hidden: usize,
}

impl BiLstmParams {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, init: &mut Init) -> Self {
        Self {
            forward: LstmCellParams::new(store, &format!("{name}.forward"), input, hidden, init),
            backward: LstmCellParams::new(store, &format!("{name}.backward"), input, hidden, init),
            input,
            hidden,
        }
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }
}

/// Runs a bidirectional LSTM over `steps`, each a `B×input` batch of rows
/// that are processed as independent sequences.
///
/// Output `l` is `[forward_h_l ; backward_h_l]` with shape `B×2h`. Initial
/// hidden and cell states are zero.
pub fn bilstm_steps(g: &mut Graph, store: &ParamStore, p: &BiLstmParams, steps: &[Var]) -> Result<Vec<Var>> {
    let first = *steps.first().ok_or_else(|| shape_err("bilstm", "empty sequence"))?;
    let batch = g.shape(first)[0];
    for &s in steps {
        if g.shape(s) != [batch, p.input] {
            return Err(shape_err(
                "bilstm",
                format!("step shape {:?} differs from [{batch}, {}]", g.shape(s), p.input),
            ));
        }
    }
    let zeros = Tensor::zeros(&[batch, p.hidden]);
    let mut run = |cell: &LstmCellParams, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Var)>> {
        let mut h = g.constant(zeros.clone());
        let mut c = g.constant(zeros.clone());
        let mut out = Vec::with_capacity(steps.len());
        for l in order {
            (h, c) = cell.step(g, store, steps[l], h, c)?;
            out.push((l, h));
        }
        Ok(out)
    };
    let fwd = run(&p.forward, &mut (0..steps.len()))?;
    let mut bwd = run(&p.backward, &mut (0..steps.len()).rev())?;
    bwd.reverse();
    fwd.into_iter()
        .zip(bwd)
        .map(|((_, hf), (_, hb))| g.concat_cols(&[hf, hb]))
        .collect()
}

/// Bidirectional LSTM over the rows of `seq[L×input]`, giving `L×2h`.
pub fn bilstm(g: &mut Graph, store: &ParamStore, p: &BiLstmParams, seq: Var) -> Result<Var> {
    let rows = match *g.shape(seq) {
        [r, w] if w == p.input => r,
        ref s => return Err(shape_err("bilstm", format!("expected [L, {}], got {s:?}", p.input))),
    };
    let steps = (0..rows)
        .map(|l| g.slice_rows(seq, l, 1))
        .collect::<Result<Vec<_>>>()?;
    let outs = bilstm_steps(g, store, p, &steps)?;
    g.concat_rows(&outs)
}

#[derive(Clone, Debug)]
pub struct EmbeddingParams {
    pub token_table: ParamId,
    pub position_table: ParamId,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
}

impl EmbeddingParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        dim: usize,
        init: &mut Init,
    ) -> Self {
        Self {
            token_table: store.add(format!("{name}.token"), init.fan_in(&[vocab_size, dim], dim)),
            position_table: store.add(format!("{name}.position"), init.fan_in(&[max_len, dim], dim)),
            vocab_size,
            max_len,
            dim,
        }
    }
}

/// `token_table[id] + position_table[pos]` for every position.
pub fn embed(g: &mut Graph, store: &ParamStore, p: &EmbeddingParams, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(shape_err("embed", "empty sequence"));
    }
    if ids.len() > p.max_len {
        return Err(shape_err(
            "embed",
            format!("sequence length {} exceeds {}", ids.len(), p.max_len),
        ));
    }
    let tokens = g.param(store, p.token_table);
    let tok = g.gather_rows(tokens, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let table = g.param(store, p.position_table);
    let pos = g.gather_rows(table, &positions)?;
    g.add(tok, pos)
}
