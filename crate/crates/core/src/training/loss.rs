use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::data::Record;
use crate::error::{Error, Result};
use crate::heads::{HeadOutputs, COARSE_CLASSES, FINE_CLASSES};
use crate::model::AblationToggles;
use crate::tensor::Tensor;

/// Learnable log-scale task weights `s_t`, one per task, initialized to 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossWeights {
    pub coarse: ParamId,
    pub fine: ParamId,
    pub intensity: ParamId,
}

impl LossWeights {
    pub fn new(store: &mut ParamStore, name: &str) -> Self {
        let mut add = |task: &str| store.add(format!("{name}.{task}"), Tensor::scalar(0.0));
        Self {
            coarse: add("coarse"),
            fine: add("fine"),
            intensity: add("intensity"),
        }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.coarse, self.fine, self.intensity]
    }

    /// Current `(s_coarse, s_fine, s_intensity)`.
    pub fn values(&self, store: &ParamStore) -> [f64; 3] {
        self.ids().map(|id| store.get(id).item())
    }
}

/// Per-task scalar losses of one record.
#[derive(Clone, Copy, Debug)]
pub struct TaskLosses {
    pub coarse: Var,
    pub fine: Var,
    pub intensity: Var,
}

impl TaskLosses {
    pub fn as_array(&self) -> [Var; 3] {
        [self.coarse, self.fine, self.intensity]
    }
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let classes = g.value(logits).len();
    if label >= classes {
        return Err(Error::InvalidInput(format!("label {label} out of range for {classes} classes")));
    }
    let log_probs = g.log_softmax(logits)?;
    let picked = g.pick(log_probs, label)?;
    g.scale(picked, -1.0)
}

/// `(prediction - target)^2` for a single-element prediction.
pub fn squared_error(g: &mut Graph, prediction: Var, target: f64) -> Result<Var> {
    let target = g.constant(Tensor::scalar(target));
    let diff = g.sub(prediction, target)?;
    g.mul(diff, diff)
}

pub fn task_losses(g: &mut Graph, outputs: &HeadOutputs, record: &Record) -> Result<TaskLosses> {
    if record.coarse_label >= COARSE_CLASSES || record.fine_label >= FINE_CLASSES {
        return Err(Error::InvalidInput(format!(
            "labels (coarse {}, fine {}) out of range",
            record.coarse_label, record.fine_label
        )));
    }
    Ok(TaskLosses {
        coarse: cross_entropy(g, outputs.coarse_logits, record.coarse_label)?,
        fine: cross_entropy(g, outputs.fine_logits, record.fine_label)?,
        intensity: squared_error(g, outputs.intensity, record.intensity)?,
    })
}

/// `Σ_t exp(-s_t) L_t + s_t`, summed left to right.
pub fn uncertainty_weighted(g: &mut Graph, losses: &[Var], log_weights: &[Var]) -> Result<Var> {
    if losses.is_empty() || losses.len() != log_weights.len() {
        return Err(Error::Contract(format!(
            "{} losses against {} log-weights",
            losses.len(),
            log_weights.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&loss, &s) in losses.iter().zip(log_weights) {
        let neg = g.scale(s, -1.0)?;
        let precision = g.exp(neg)?;
        let weighted = g.mul(precision, loss)?;
        let term = g.add(weighted, s)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Plain left-to-right sum.
pub fn sum_losses(g: &mut Graph, losses: &[Var]) -> Result<Var> {
    let (&first, rest) = losses
        .split_first()
        .ok_or_else(|| Error::Contract("no losses to sum".into()))?;
    rest.iter().try_fold(first, |acc, &l| g.add(acc, l))
}

/// Total training loss; learned weighting with DL on, the plain sum otherwise.
pub fn combine_losses(
    g: &mut Graph,
    store: &ParamStore,
    weights: &LossWeights,
    losses: &TaskLosses,
    toggles: &AblationToggles,
) -> Result<Var> {
    if toggles.use_dynamic_loss {
        let s = weights.ids().map(|id| g.param(store, id));
        uncertainty_weighted(g, &losses.as_array(), &s)
    } else {
        sum_losses(g, &losses.as_array())
    }
}
