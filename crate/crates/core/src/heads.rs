//! Coarse, intensity and fine prediction heads with guidance recalibration.
//!
//! The coarse and intensity heads read the pooled feature `h` directly. Their
//! outputs feed a guidance projection whose sigmoid output rescales `h`
//! before the fine head, so the fine loss also trains the other two heads.

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{shape_err, Result};
use crate::nn::{linear, Init, LinearParams};

pub const COARSE_CLASSES: usize = 3;
pub const FINE_CLASSES: usize = 5;

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub coarse: LinearParams,
    pub intensity: LinearParams,
    /// Maps `[softmax(coarse); intensity]` (4 values) to `d` guidance logits.
    pub guidance: LinearParams,
    pub fine: LinearParams,
    pub dim: usize,
}

impl HeadParams {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, init: &mut Init) -> Self {
        Self {
            coarse: LinearParams::new(store, &format!("{name}.coarse"), dim, COARSE_CLASSES, init),
            intensity: LinearParams::new(store, &format!("{name}.intensity"), dim, 1, init),
            guidance: LinearParams::new(store, &format!("{name}.guidance"), COARSE_CLASSES + 1, dim, init),
            fine: LinearParams::new(store, &format!("{name}.fine"), dim, FINE_CLASSES, init),
            dim,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[3]`.
    pub coarse_logits: Var,
    /// `[1]`, in (0, 1).
    pub intensity: Var,
    /// `[d]` in (0, 1); `None` when guidance is disabled.
    pub guidance: Option<Var>,
    /// `h ⊙ guidance`; `None` when guidance is disabled.
    pub recalibrated: Option<Var>,
    /// `[5]`.
    pub fine_logits: Var,
}

/// Runs the three heads on the pooled feature `h[d]`.
///
/// With `use_guidance == false` the fine head reads `h` directly.
pub fn heads_forward(g: &mut Graph, store: &ParamStore, p: &HeadParams, h: Var, use_guidance: bool) -> Result<HeadOutputs> {
    if g.shape(h) != [p.dim] {
        return Err(shape_err(
            "heads_forward",
            format!("expected feature of width {}, got {:?}", p.dim, g.shape(h)),
        ));
    }
    let coarse_logits = linear(g, store, &p.coarse, h)?;
    let raw_intensity = linear(g, store, &p.intensity, h)?;
    let intensity = g.sigmoid(raw_intensity)?;
    if !use_guidance {
        let fine_logits = linear(g, store, &p.fine, h)?;
        return Ok(HeadOutputs {
            coarse_logits,
            intensity,
            guidance: None,
            recalibrated: None,
            fine_logits,
        });
    }
    let coarse_probs = g.softmax(coarse_logits)?;
    let coarse_row = g.reshape(coarse_probs, &[1, COARSE_CLASSES])?;
    let intensity_row = g.reshape(intensity, &[1, 1])?;
    let signal = g.concat_cols(&[coarse_row, intensity_row])?;
    let signal = g.reshape(signal, &[COARSE_CLASSES + 1])?;
    let guidance_logits = linear(g, store, &p.guidance, signal)?;
    let guidance = g.sigmoid(guidance_logits)?;
    let recalibrated = g.mul(h, guidance)?;
    let fine_logits = linear(g, store, &p.fine, recalibrated)?;
    Ok(HeadOutputs {
        coarse_logits,
        intensity,
        guidance: Some(guidance),
        recalibrated: Some(recalibrated),
        fine_logits,
    })
}
