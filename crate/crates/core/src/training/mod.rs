//! Losses, dynamic loss weighting, the optimizer, the training loop and
//! checkpoint persistence.

mod checkpoint;
mod loss;
mod noise;
mod optim;

pub use checkpoint::{blob_path, load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{combine_losses, cross_entropy, squared_error, sum_losses, task_losses, uncertainty_weighted, LossWeights, TaskLosses};
pub use noise::{noise_experiment, NoiseExperimentConfig, NoiseOutcome};
pub use optim::{clip_grad_norm, Adam, AdamConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Record;
use crate::error::{Error, Result};
use crate::model::{derive_seed, AblationToggles, DualEncoderModel};
use crate::nn::Dropout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drives the shuffle order and dropout masks.
    pub seed: u64,
    pub adam: AdamConfig,
    pub dropout: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Fail on the first op that produces NaN or infinity (slower).
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 6,
            seed: 7,
            adam: AdamConfig::default(),
            dropout: 0.1,
            clip_norm: Some(5.0),
            check_finite: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("train.{what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-record training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Records the forward pass and combined loss of one example.
pub fn record_loss(
    g: &mut Graph,
    model: &DualEncoderModel,
    record: &Record,
    toggles: &AblationToggles,
    dropout: Option<&mut Dropout>,
) -> Result<crate::autodiff::Var> {
    let out = model.forward(g, &record.token_ids, toggles, dropout)?;
    let losses = task_losses(g, &out.heads, record)?;
    combine_losses(g, &model.store, &model.loss_weights, &losses, toggles)
}

/// Mini-batch training with batch-averaged gradients. Deterministic for a
/// fixed `cfg.seed`.
pub fn train(
    model: &mut DualEncoderModel,
    data: &[Record],
    cfg: &TrainConfig,
    toggles: &AblationToggles,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if cfg.batch_size > data.len() {
        return Err(Error::InvalidInput(format!(
            "batch size {} exceeds the {} training records",
            cfg.batch_size,
            data.len()
        )));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 11));
    let mut dropout = Dropout::new(cfg.dropout, derive_seed(cfg.seed, 12));
    let mut adam = Adam::new(&model.store, cfg.learning_rate, cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    model.store.zero_grad();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            report.steps += 1;
            for &i in batch {
                let mut g = Graph::with_finite_checks(cfg.check_finite);
                let loss = record_loss(&mut g, model, &data[i], toggles, Some(&mut dropout))?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step: report.steps,
                        loss: value,
                    });
                }
                total += value;
                g.backward(loss)?;
                g.accumulate_into(&mut model.store);
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            if let Some(max) = cfg.clip_norm {
                clip_grad_norm(&mut model.store, max);
            }
            adam.step(&mut model.store);
            model.store.zero_grad();
        }
        let mean = total / data.len() as f64;
        log::info!("epoch {epoch}/{}: mean loss {mean:.6}", cfg.epochs);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, synthetic_vocabulary, SYNTH_MAX_LEN};
    use crate::model::ModelConfig;

    fn small_setup() -> (DualEncoderModel, Vec<Record>) {
        let data = generate_synthetic(48, 20, 5);
        let cfg = ModelConfig {
            vocab_size: synthetic_vocabulary(20).len(),
            max_len: SYNTH_MAX_LEN,
            dim: 8,
            layers_a: 2,
            layers_b: 2,
            ffn_hidden: 16,
            fusion_hidden: None,
            seed: 1,
        };
        (DualEncoderModel::new(cfg).unwrap(), data)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise_unchanged() {
        let (mut model, data) = small_setup();
        let before = model.store.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg, &AblationToggles::all()).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(model.store.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn same_seed_same_curve() {
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut model, data) = small_setup();
            let r = train(&mut model, &data, &cfg, &AblationToggles::all()).unwrap();
            (r, model.store)
        };
        let (r1, s1) = run();
        let (r2, s2) = run();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
        assert_eq!(r1.steps, 6);
    }

    #[test]
    fn without_dynamic_loss_weights_stay_at_zero() {
        let (mut model, data) = small_setup();
        let toggles = AblationToggles {
            use_dynamic_loss: false,
            ..AblationToggles::all()
        };
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg, &toggles).unwrap();
        assert_eq!(model.loss_weights.values(&model.store), [0.0; 3]);
    }

    #[test]
    fn preconditions_are_enforced() {
        let (mut model, data) = small_setup();
        let all = AblationToggles::all();
        assert!(train(&mut model, &[], &TrainConfig::default(), &all).is_err());
        let big = TrainConfig {
            batch_size: 49,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &data, &big, &all).is_err());
        let neg = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &data, &neg, &all).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (mut model, data) = small_setup();
        let id = model.heads.intensity.bias;
        model.store.get_mut(id).data_mut()[0] = f64::NAN;
        let err = train(&mut model, &data, &TrainConfig::default(), &AblationToggles::all()).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1, step: 1, .. }), "{err}");
    }
}
