//! The dual-encoder multi-task model.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::data::PAD_ID;
use crate::encoder::{encode, EncoderParams, LayerStack};
use crate::error::{Error, Result};
use crate::fusion::{gap_pool, gated_fuse, hierarchical_fuse, mean_fuse, GateParams, LayerFusionParams};
use crate::heads::{heads_forward, HeadOutputs, HeadParams};
use crate::metrics::argmax;
use crate::nn::{Dropout, Init};
use crate::training::LossWeights;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Rows of the token embedding table (vocabulary size including specials).
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub layers_a: usize,
    pub layers_b: usize,
    pub ffn_hidden: usize,
    /// BiLSTM hidden size of layer fusion; `dim / 2` when unset.
    pub fusion_hidden: Option<usize>,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 52,
            max_len: 64,
            dim: 32,
            layers_a: 4,
            layers_b: 4,
            ffn_hidden: 64,
            fusion_hidden: None,
            seed: 7,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 12,
            max_len: 4,
            dim: 8,
            layers_a: 2,
            layers_b: 2,
            ffn_hidden: 16,
            fusion_hidden: None,
            seed: 3,
        }
    }

    pub fn fusion_hidden(&self) -> usize {
        self.fusion_hidden.unwrap_or((self.dim / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("dim", self.dim),
            ("layers_a", self.layers_a),
            ("layers_b", self.layers_b),
            ("ffn_hidden", self.ffn_hidden),
            ("fusion_hidden", self.fusion_hidden()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!("model.{name} must be positive")));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidInput("model.vocab_size must cover <pad> and <unk>".into()));
        }
        Ok(())
    }
}

/// Which of the optional components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationToggles {
    pub use_gated_fusion: bool,
    pub use_hierarchical_guidance: bool,
    pub use_dynamic_loss: bool,
    pub use_layer_fusion: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl AblationToggles {
    pub const fn all() -> Self {
        Self {
            use_gated_fusion: true,
            use_hierarchical_guidance: true,
            use_dynamic_loss: true,
            use_layer_fusion: true,
        }
    }
}

/// The four ablation rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "wo-dl")]
    WithoutDl,
    #[serde(rename = "wo-hg-dl")]
    WithoutHgDl,
    #[serde(rename = "wo-gf-hg-dl")]
    WithoutGfHgDl,
}

impl Variant {
    /// In ablation-table order: most components removed first, full model last.
    pub const ALL: [Variant; 4] = [Self::WithoutGfHgDl, Self::WithoutHgDl, Self::WithoutDl, Self::Full];

    pub fn toggles(self) -> AblationToggles {
        let all = AblationToggles::all();
        match self {
            Self::Full => all,
            Self::WithoutDl => AblationToggles {
                use_dynamic_loss: false,
                ..all
            },
            Self::WithoutHgDl => AblationToggles {
                use_dynamic_loss: false,
                use_hierarchical_guidance: false,
                ..all
            },
            Self::WithoutGfHgDl => AblationToggles {
                use_dynamic_loss: false,
                use_hierarchical_guidance: false,
                use_gated_fusion: false,
                ..all
            },
        }
    }

    /// Flag spelling, e.g. `wo-hg-dl`.
    pub fn key(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::WithoutDl => "wo-dl",
            Self::WithoutHgDl => "wo-hg-dl",
            Self::WithoutGfHgDl => "wo-gf-hg-dl",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "full model",
            Self::WithoutDl => "w/o DL",
            Self::WithoutHgDl => "w/o HG+DL",
            Self::WithoutGfHgDl => "w/o GF+HG+DL",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant `{s}`")))
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    pub heads: HeadOutputs,
    /// GAP-pooled fused feature `h`, shape `[d]`.
    pub pooled: Var,
    /// Cross-encoder gate, `T×d`, when gated fusion is on.
    pub gate: Option<Var>,
    /// Per-token layer weights (`T×L`) of encoders A and B when layer fusion is on.
    pub layer_weights: Option<(Var, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub coarse: usize,
    pub fine: usize,
    pub intensity: f64,
    pub coarse_logits: Vec<f64>,
    pub fine_logits: Vec<f64>,
}

/// Parameters of the whole model in one store.
#[derive(Clone, Debug)]
pub struct DualEncoderModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder_a: EncoderParams,
    pub encoder_b: EncoderParams,
    pub fusion_a: LayerFusionParams,
    pub fusion_b: LayerFusionParams,
    pub gate: GateParams,
    pub heads: HeadParams,
    pub loss_weights: LossWeights,
}

/// Independent stream seed derived from a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Drops trailing padding (keeping at least one token) and truncates to `max_len`.
pub fn effective_ids(ids: &[usize], max_len: usize) -> Vec<usize> {
    let end = ids.iter().rposition(|&t| t != PAD_ID).map_or(1, |p| p + 1).min(ids.len().max(1));
    let mut out: Vec<usize> = ids.iter().take(end.min(max_len)).copied().collect();
    if out.is_empty() {
        out.push(PAD_ID);
    }
    out
}

impl DualEncoderModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let mut init_a = Init::new(derive_seed(c.seed, 1));
        let mut init_b = Init::new(derive_seed(c.seed, 2));
        let mut init_rest = Init::new(derive_seed(c.seed, 3));
        let encoder_a = EncoderParams::new(
            &mut store,
            "encoder_a",
            c.vocab_size,
            c.max_len,
            c.dim,
            c.layers_a,
            c.ffn_hidden,
            &mut init_a,
        );
        let encoder_b = EncoderParams::new(
            &mut store,
            "encoder_b",
            c.vocab_size,
            c.max_len,
            c.dim,
            c.layers_b,
            c.ffn_hidden,
            &mut init_b,
        );
        let fusion_a = LayerFusionParams::new(&mut store, "fusion_a", c.dim, c.fusion_hidden(), &mut init_a);
        let fusion_b = LayerFusionParams::new(&mut store, "fusion_b", c.dim, c.fusion_hidden(), &mut init_b);
        let gate = GateParams::new(&mut store, "gate", c.dim, &mut init_rest);
        let heads = HeadParams::new(&mut store, "heads", c.dim, &mut init_rest);
        let loss_weights = LossWeights::new(&mut store, "loss_weights");
        Ok(Self {
            config,
            store,
            encoder_a,
            encoder_b,
            fusion_a,
            fusion_b,
            gate,
            heads,
            loss_weights,
        })
    }

    fn fuse_layers(
        &self,
        g: &mut Graph,
        fusion: &LayerFusionParams,
        stack: &LayerStack,
        toggles: &AblationToggles,
    ) -> Result<(Var, Option<Var>)> {
        if toggles.use_layer_fusion {
            let fused = hierarchical_fuse(g, &self.store, fusion, stack)?;
            Ok((fused.values, Some(fused.layer_weights)))
        } else {
            Ok((stack.last(), None))
        }
    }

    /// Records one forward pass. `ids` may carry trailing padding.
    pub fn forward(
        &self,
        g: &mut Graph,
        ids: &[usize],
        toggles: &AblationToggles,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<ModelOutputs> {
        let ids = effective_ids(ids, self.config.max_len);
        let stack_a = encode(g, &self.store, &self.encoder_a, &ids, dropout.as_deref_mut())?;
        let stack_b = encode(g, &self.store, &self.encoder_b, &ids, dropout)?;
        let (seq_a, weights_a) = self.fuse_layers(g, &self.fusion_a, &stack_a, toggles)?;
        let (seq_b, weights_b) = self.fuse_layers(g, &self.fusion_b, &stack_b, toggles)?;
        let (fused, gate) = if toggles.use_gated_fusion {
            let (f, gate) = gated_fuse(g, &self.store, &self.gate, seq_a, seq_b)?;
            (f, Some(gate))
        } else {
            (mean_fuse(g, seq_a, seq_b)?, None)
        };
        let pooled = gap_pool(g, fused)?;
        let heads = heads_forward(g, &self.store, &self.heads, pooled, toggles.use_hierarchical_guidance)?;
        Ok(ModelOutputs {
            heads,
            pooled,
            gate,
            layer_weights: weights_a.zip(weights_b),
        })
    }

    /// Inference without dropout; argmax ties go to the lowest class.
    pub fn predict(&self, ids: &[usize], toggles: &AblationToggles) -> Result<Prediction> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, ids, toggles, None)?;
        let coarse_logits = g.value(out.heads.coarse_logits).data().to_vec();
        let fine_logits = g.value(out.heads.fine_logits).data().to_vec();
        Ok(Prediction {
            coarse: argmax(&coarse_logits),
            fine: argmax(&fine_logits),
            intensity: g.value(out.heads.intensity).item(),
            coarse_logits,
            fine_logits,
        })
    }
}
