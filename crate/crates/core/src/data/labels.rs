use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COARSE_NAMES: [&str; 3] = ["negative", "neutral", "positive"];
pub const FINE_NAMES: [&str; 5] = [
    "strongly negative",
    "negative",
    "neutral",
    "positive",
    "very positive",
];

/// Half-open score thresholds; the top band includes 10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScheme {
    /// Lower edges of fine classes 1..=4.
    pub fine_cuts: [f64; 4],
    /// Lower edges of coarse classes 1..=2.
    pub coarse_cuts: [f64; 2],
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self {
            fine_cuts: [3.0, 5.0, 7.0, 9.0],
            coarse_cuts: [5.0, 7.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Labels {
    pub coarse: usize,
    pub fine: usize,
    pub intensity: f64,
}

impl LabelScheme {
    pub fn labels(&self, score: f64) -> Result<Labels> {
        if !(0.0..=10.0).contains(&score) {
            return Err(Error::Domain {
                op: "build_labels",
                detail: format!("score {score} outside [0, 10]"),
            });
        }
        let band = |cuts: &[f64]| cuts.iter().take_while(|&&c| score >= c).count();
        Ok(Labels {
            coarse: band(&self.coarse_cuts),
            fine: band(&self.fine_cuts),
            intensity: score / 10.0,
        })
    }
}

/// Labels under the default threshold table.
pub fn build_labels(score: f64) -> Result<Labels> {
    LabelScheme::default().labels(score)
}
