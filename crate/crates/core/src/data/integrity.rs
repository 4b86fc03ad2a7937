use serde::{Deserialize, Serialize};

use super::{LabelScheme, Record};

/// Outcome of a corpus integrity pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub records: usize,
    pub empty_text: usize,
    pub out_of_range_scores: usize,
    pub label_inconsistencies: usize,
    /// Input rows dropped before record construction (missing text or score).
    pub dropped_rows: usize,
}

impl IntegrityReport {
    /// Violations that make a dataset unfit for training.
    pub fn violations(&self) -> usize {
        self.empty_text + self.out_of_range_scores + self.label_inconsistencies
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }
}

/// Counts empty texts, out-of-range scores and labels that disagree with the
/// ones re-derived from each record's score.
pub fn integrity_check(records: &[Record], scheme: &LabelScheme) -> IntegrityReport {
    let mut report = IntegrityReport {
        records: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.clean_text.trim().is_empty() {
            report.empty_text += 1;
        }
        match scheme.labels(r.score) {
            Err(_) => report.out_of_range_scores += 1,
            Ok(l) => {
                if l.coarse != r.coarse_label || l.fine != r.fine_label || l.intensity != r.intensity {
                    report.label_inconsistencies += 1;
                }
            }
        }
    }
    report
}
