//! Toy transformer encoders that expose every layer's hidden states.

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Result};
use crate::nn::{
    embed, feed_forward, layer_norm, maybe_dropout, self_attention, AttentionParams, Dropout, EmbeddingParams,
    FeedForwardParams, Init, LayerNormParams,
};

/// One post-norm block: `x = LN(x + Attn(x)); x = LN(x + FFN(x))`.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub attention: AttentionParams,
    pub attention_norm: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub ffn_norm: LayerNormParams,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: EmbeddingParams,
    pub blocks: Vec<BlockParams>,
    pub dim: usize,
    pub max_len: usize,
}

impl EncoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        dim: usize,
        layers: usize,
        ffn_hidden: usize,
        init: &mut Init,
    ) -> Self {
        assert!(layers >= 1, "an encoder needs at least one block");
        let embedding = EmbeddingParams::new(store, &format!("{name}.embedding"), vocab_size, max_len, dim, init);
        let blocks = (0..layers)
            .map(|l| {
                let prefix = format!("{name}.block{l}");
                BlockParams {
                    attention: AttentionParams::new(store, &format!("{prefix}.attention"), dim, init),
                    attention_norm: LayerNormParams::new(store, &format!("{prefix}.attention_norm"), dim),
                    ffn: FeedForwardParams::new(store, &format!("{prefix}.ffn"), dim, ffn_hidden, init),
                    ffn_norm: LayerNormParams::new(store, &format!("{prefix}.ffn_norm"), dim),
                }
            })
            .collect();
        Self {
            embedding,
            blocks,
            dim,
            max_len,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }
}

/// Hidden states `H^(1) … H^(L)` of one encoder, each `T×d`.
#[derive(Clone, Debug)]
pub struct LayerStack {
    pub layers: Vec<Var>,
    pub len: usize,
}

impl LayerStack {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn last(&self) -> Var {
        *self.layers.last().expect("layer stack is never empty")
    }
}

/// Encodes `ids` and returns the output of every block.
pub fn encode(
    g: &mut Graph,
    store: &ParamStore,
    p: &EncoderParams,
    ids: &[usize],
    mut dropout: Option<&mut Dropout>,
) -> Result<LayerStack> {
    if ids.is_empty() {
        return Err(shape_err("encode", "empty sequence"));
    }
    if ids.len() > p.max_len {
        return Err(shape_err(
            "encode",
            format!("sequence length {} exceeds maximum {}", ids.len(), p.max_len),
        ));
    }
    let mut x = embed(g, store, &p.embedding, ids)?;
    x = maybe_dropout(g, x, dropout.as_deref_mut())?;
    let mut layers = Vec::with_capacity(p.blocks.len());
    for block in &p.blocks {
        let (attn, _) = self_attention(g, store, &block.attention, x)?;
        let res = g.add(x, attn)?;
        x = layer_norm(g, store, &block.attention_norm, res)?;
        let ff = feed_forward(g, store, &block.ffn, x)?;
        let ff = maybe_dropout(g, ff, dropout.as_deref_mut())?;
        let res = g.add(x, ff)?;
        x = layer_norm(g, store, &block.ffn_norm, res)?;
        layers.push(x);
    }
    Ok(LayerStack {
        layers,
        len: ids.len(),
    })
}
