//! Experiment configuration, run manifests, the ablation runner and the
//! gradient-check suite.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gradcheck, gradcheck_params, gradcheck_params_by_name, Graph, ParamStore, Var, DEFAULT_STEP};
use crate::data::{
    generate_synthetic, read_record_file, split_holdout, synthetic_vocabulary, LabelScheme, Record, RecordFile,
    SYNTH_MAX_LEN,
};
use crate::encoder::{encode, EncoderParams, LayerStack};
use crate::error::{Error, Result};
use crate::fusion::{gated_fuse, hierarchical_fuse, GateParams, LayerFusionParams};
use crate::heads::{heads_forward, HeadParams};
use crate::metrics::{evaluate, MetricsReport, METRICS_CSV_HEADER};
use crate::model::{derive_seed, AblationToggles, DualEncoderModel, ModelConfig, Variant};
use crate::nn::{
    bilstm, embed, feed_forward, layer_norm, linear, self_attention, AttentionParams, BiLstmParams, EmbeddingParams,
    FeedForwardParams, Init, LayerNormParams, LinearParams,
};
use crate::tensor::Tensor;
use crate::training::{
    combine_losses, cross_entropy, record_loss, squared_error, sum_losses, task_losses, train, uncertainty_weighted,
    TrainConfig, TrainReport,
};

/// Where records come from and how they are split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Record file written by `preprocess` or `synth`; synthetic data is
    /// generated on the fly when unset.
    pub records: Option<PathBuf>,
    pub synthetic_count: usize,
    pub synthetic_vocab: usize,
    pub synthetic_seed: u64,
    pub holdout_fraction: f64,
    pub min_frequency: usize,
    pub max_vocab: usize,
    pub max_len: usize,
    pub labels: LabelScheme,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            records: None,
            synthetic_count: 2000,
            synthetic_vocab: 50,
            synthetic_seed: 7,
            holdout_fraction: 0.2,
            min_frequency: 1,
            max_vocab: 20_000,
            max_len: 64,
            labels: LabelScheme::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Variant used by `train` and `eval`.
    pub variant: Variant,
    pub use_layer_fusion: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            use_layer_fusion: true,
        }
    }
}

impl AblationConfig {
    pub fn toggles_for(&self, variant: Variant) -> AblationToggles {
        AblationToggles {
            use_layer_fusion: self.use_layer_fusion,
            ..variant.toggles()
        }
    }

    pub fn toggles(&self) -> AblationToggles {
        self.toggles_for(self.variant)
    }
}

/// The single JSON config file. Missing keys take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Sets every seed (initialization, shuffling, dropout, synthetic data).
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.synthetic_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.data.holdout_fraction) {
            return Err(Error::InvalidInput("data.holdout_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Records plus the vocabulary size they were tokenized against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Dataset {
    pub fn synthetic(n: usize, vocab: usize, seed: u64) -> Self {
        Self {
            records: generate_synthetic(n, vocab, seed),
            vocab_size: synthetic_vocabulary(vocab).len(),
            max_len: SYNTH_MAX_LEN,
        }
    }

    pub fn from_record_file(file: RecordFile) -> Self {
        Self {
            vocab_size: file.vocabulary.len(),
            max_len: file.max_len,
            records: file.records,
        }
    }

    pub fn load(cfg: &DataConfig) -> Result<Self> {
        match &cfg.records {
            Some(path) => Ok(Self::from_record_file(read_record_file(path)?)),
            None => Ok(Self::synthetic(cfg.synthetic_count, cfg.synthetic_vocab, cfg.synthetic_seed)),
        }
    }
}

/// Model config with the embedding table sized to the dataset vocabulary.
pub fn model_config_for(cfg: &ExperimentConfig, data: &Dataset) -> ModelConfig {
    ModelConfig {
        vocab_size: data.vocab_size,
        ..cfg.model.clone()
    }
}

/// `(train, holdout)` split driven by the training seed.
pub fn split(cfg: &ExperimentConfig, data: &Dataset) -> Result<(Vec<Record>, Vec<Record>)> {
    let (train_set, holdout) = split_holdout(&data.records, cfg.data.holdout_fraction, cfg.train.seed);
    if train_set.is_empty() || holdout.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} records cannot be split into non-empty train and holdout sets",
            data.records.len()
        )));
    }
    Ok((train_set, holdout))
}

/// Outcome of training and evaluating one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub toggles: AblationToggles,
    pub metrics: MetricsReport,
    pub epoch_losses: Vec<f64>,
    /// Combined loss on the first training record at initialization.
    pub initial_loss: f64,
    /// Plain sum of the three task losses on the same record.
    pub initial_task_sum: f64,
    /// `(s_coarse, s_fine, s_intensity)` after training.
    pub final_log_weights: [f64; 3],
}

/// Combined loss and plain task-loss sum on one record, without dropout.
pub fn initial_losses(model: &DualEncoderModel, record: &Record, toggles: &AblationToggles) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &record.token_ids, toggles, None)?;
    let losses = task_losses(&mut g, &out.heads, record)?;
    let combined = combine_losses(&mut g, &model.store, &model.loss_weights, &losses, toggles)?;
    let plain = sum_losses(&mut g, &losses.as_array())?;
    Ok((g.value(combined).item(), g.value(plain).item()))
}

/// Fresh model, trained on `train_set` and scored on `holdout`.
pub fn run_variant(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    toggles: AblationToggles,
    variant: Variant,
    train_set: &[Record],
    holdout: &[Record],
) -> Result<(DualEncoderModel, TrainReport, VariantRun)> {
    let mut model = DualEncoderModel::new(model_cfg.clone())?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::InvalidInput("training set is empty".into()))?;
    let (initial_loss, initial_task_sum) = initial_losses(&model, first, &toggles)?;
    let report = train(&mut model, train_set, train_cfg, &toggles)?;
    let metrics = evaluate(&model, holdout, &toggles)?;
    let run = VariantRun {
        variant,
        toggles,
        metrics,
        epoch_losses: report.epoch_losses.clone(),
        initial_loss,
        initial_task_sum,
        final_log_weights: model.loss_weights.values(&model.store),
    };
    Ok((model, report, run))
}

/// Retrains every ablation variant from scratch with identical settings.
pub fn run_ablation(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<VariantRun>> {
    cfg.validate()?;
    let model_cfg = model_config_for(cfg, data);
    let (train_set, holdout) = split(cfg, data)?;
    Variant::ALL
        .iter()
        .map(|&v| {
            log::info!("ablation: training {}", v.label());
            run_variant(&model_cfg, &cfg.train, cfg.ablation.toggles_for(v), v, &train_set, &holdout).map(|r| r.2)
        })
        .collect()
}

/// Combined CSV with one row per variant, header included.
pub fn ablation_csv(run_id: &str, runs: &[VariantRun]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for r in runs {
        out.push_str(&r.metrics.csv_row(run_id, r.variant.key()));
        out.push('\n');
    }
    out
}

/// Accuracy differences (full minus variant) for every ablated row.
pub fn ablation_gaps(runs: &[VariantRun]) -> Vec<(Variant, f64, f64)> {
    let Some(full) = runs.iter().find(|r| r.variant == Variant::Full) else {
        return Vec::new();
    };
    runs.iter()
        .filter(|r| r.variant != Variant::Full)
        .map(|r| {
            (
                r.variant,
                full.metrics.coarse_acc - r.metrics.coarse_acc,
                full.metrics.fine_acc - r.metrics.fine_acc,
            )
        })
        .collect()
}

/// What a command did and what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub toggles: AblationToggles,
    pub outputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_losses: Option<Vec<f64>>,
    pub started_unix_secs: u64,
    pub duration_secs: f64,
}

/// Run id derived from the command and seed only, so repeated runs agree.
pub fn run_id(command: &str, variant: Option<Variant>, seed: u64) -> String {
    match variant {
        Some(v) => format!("{command}-{}-seed{seed}", v.key()),
        None => format!("{command}-seed{seed}"),
    }
}

pub const GRADCHECK_BLOCK_TOLERANCE: f64 = 1e-6;
pub const GRADCHECK_END_TO_END_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub component: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("valid shape")
}

fn block_check(name: &str, store: &ParamStore, f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> GradcheckEntry {
    GradcheckEntry {
        component: name.to_string(),
        max_rel_error: gradcheck_params(store, f, DEFAULT_STEP),
        tolerance: GRADCHECK_BLOCK_TOLERANCE,
    }
}

/// A record whose ids fit `cfg` and use every position.
pub fn tiny_record(cfg: &ModelConfig) -> Record {
    Record {
        raw_text: String::new(),
        clean_text: String::new(),
        token_ids: (0..cfg.max_len).map(|i| 2 + (i * 3) % (cfg.vocab_size - 2).max(1)).collect(),
        coarse_label: 2,
        fine_label: 3,
        intensity: 0.88,
        score: 8.8,
        year: None,
    }
}

/// Finite-difference checks of every parameterized block at width `d`,
/// followed by the full model loss on `cfg` (one entry per top-level module).
pub fn gradcheck_suite(cfg: &ModelConfig) -> Result<Vec<GradcheckEntry>> {
    cfg.validate()?;
    let (t, d) = (cfg.max_len, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 99));
    let x = random_tensor(&mut rng, &[t, d]);
    let mut entries = Vec::new();
    let fresh = |k: u64| (ParamStore::new(), Init::new(derive_seed(cfg.seed, 100 + k)));

    let (mut store, mut init) = fresh(0);
    let p = LinearParams::new(&mut store, "linear", d, d, &mut init);
    entries.push(block_check("linear", &store, |g, s| {
        let x = g.constant(x.clone());
        linear(g, s, &p, x)
    }));

    let (mut store, mut init) = fresh(1);
    let p = LayerNormParams::new(&mut store, "layer_norm", d);
    // Move gain and shift away from their trivial initial values.
    for id in [p.gain, p.shift] {
        *store.get_mut(id) = init.uniform(&[d], 1.0).with_requires_grad(true);
    }
    entries.push(block_check("layer_norm", &store, |g, s| {
        let x = g.constant(x.clone());
        layer_norm(g, s, &p, x)
    }));

    let (mut store, mut init) = fresh(2);
    let p = AttentionParams::new(&mut store, "self_attention", d, &mut init);
    entries.push(block_check("self_attention", &store, |g, s| {
        let x = g.constant(x.clone());
        self_attention(g, s, &p, x).map(|r| r.0)
    }));

    let (mut store, mut init) = fresh(3);
    let p = FeedForwardParams::new(&mut store, "feed_forward", d, cfg.ffn_hidden, &mut init);
    entries.push(block_check("feed_forward", &store, |g, s| {
        let x = g.constant(x.clone());
        feed_forward(g, s, &p, x)
    }));

    let (mut store, mut init) = fresh(4);
    let p = BiLstmParams::new(&mut store, "bilstm", d, cfg.fusion_hidden(), &mut init);
    entries.push(block_check("bilstm", &store, |g, s| {
        let x = g.constant(x.clone());
        bilstm(g, s, &p, x)
    }));

    let ids = tiny_record(cfg).token_ids;
    let (mut store, mut init) = fresh(5);
    let p = EmbeddingParams::new(&mut store, "embedding", cfg.vocab_size, cfg.max_len, d, &mut init);
    entries.push(block_check("embedding", &store, |g, s| embed(g, s, &p, &ids)));

    let (mut store, mut init) = fresh(6);
    let depth = cfg.layers_a;
    let p = EncoderParams::new(&mut store, "encoder", cfg.vocab_size, cfg.max_len, d, depth, cfg.ffn_hidden, &mut init);
    entries.push(block_check("encoder", &store, |g, s| {
        let stack = encode(g, s, &p, &ids, None)?;
        g.concat_cols(&stack.layers)
    }));

    let layers: Vec<Tensor> = (0..depth).map(|_| random_tensor(&mut rng, &[t, d])).collect();
    let (mut store, mut init) = fresh(7);
    let p = LayerFusionParams::new(&mut store, "layer_fusion", d, cfg.fusion_hidden(), &mut init);
    entries.push(block_check("layer_fusion", &store, |g, s| {
        let stack = LayerStack {
            layers: layers.iter().map(|l| g.constant(l.clone())).collect(),
            len: t,
        };
        hierarchical_fuse(g, s, &p, &stack).map(|f| f.values)
    }));

    let other = random_tensor(&mut rng, &[t, d]);
    let (mut store, mut init) = fresh(8);
    let p = GateParams::new(&mut store, "gated_fusion", d, &mut init);
    entries.push(block_check("gated_fusion", &store, |g, s| {
        let (a, b) = (g.constant(x.clone()), g.constant(other.clone()));
        gated_fuse(g, s, &p, a, b).map(|r| r.0)
    }));

    let h = random_tensor(&mut rng, &[d]);
    let (mut store, mut init) = fresh(9);
    let p = HeadParams::new(&mut store, "heads", d, &mut init);
    entries.push(block_check("heads", &store, |g, s| {
        let h = g.constant(h.clone());
        let out = heads_forward(g, s, &p, h, true)?;
        let lc = cross_entropy(g, out.coarse_logits, 2)?;
        let lf = cross_entropy(g, out.fine_logits, 3)?;
        let li = squared_error(g, out.intensity, 0.88)?;
        sum_losses(g, &[lc, lf, li])
    }));

    let losses = Tensor::from_vec(vec![1.1, 0.4, 0.05]);
    let log_weights = random_tensor(&mut rng, &[3]);
    entries.push(GradcheckEntry {
        component: "dynamic_loss".into(),
        max_rel_error: gradcheck(
            |g, v| {
                let l: Vec<Var> = (0..3).map(|i| g.pick(v[0], i)).collect::<Result<_>>()?;
                let s: Vec<Var> = (0..3).map(|i| g.pick(v[1], i)).collect::<Result<_>>()?;
                uncertainty_weighted(g, &l, &s)
            },
            &[losses, log_weights.clone()],
        ),
        tolerance: GRADCHECK_BLOCK_TOLERANCE,
    });

    let mut model = DualEncoderModel::new(cfg.clone())?;
    // Nonzero log-weights so their gradients are not trivially 1 - L.
    for (id, v) in model.loss_weights.ids().into_iter().zip(log_weights.data()) {
        model.store.get_mut(id).data_mut()[0] = 0.5 * v;
    }
    let record = tiny_record(cfg);
    let toggles = AblationToggles::all();
    let per_param = gradcheck_params_by_name(
        &model.store,
        |g, s| {
            let m = DualEncoderModel {
                store: s.clone(),
                ..model.clone()
            };
            record_loss(g, &m, &record, &toggles, None)
        },
        DEFAULT_STEP,
    );
    let mut modules: Vec<(String, f64)> = Vec::new();
    for (name, err) in per_param {
        let module = name.split('.').next().unwrap_or(&name).to_string();
        match modules.iter_mut().find(|(m, _)| *m == module) {
            Some((_, worst)) => *worst = worst.max(err),
            None => modules.push((module, err)),
        }
    }
    let overall = modules.iter().map(|m| m.1).fold(0.0, f64::max);
    for (module, err) in modules {
        entries.push(GradcheckEntry {
            component: format!("end_to_end/{module}"),
            max_rel_error: err,
            tolerance: GRADCHECK_END_TO_END_TOLERANCE,
        });
    }
    entries.push(GradcheckEntry {
        component: "end_to_end".into(),
        max_rel_error: overall,
        tolerance: GRADCHECK_END_TO_END_TOLERANCE,
    });
    Ok(entries)
}
