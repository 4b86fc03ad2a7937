//! Review preprocessing: cleaning, labeling, tokenization, statistics,
//! integrity checks, CSV adapters and a synthetic corpus generator.

mod clean;
mod integrity;
mod io;
mod labels;
mod stats;
mod synth;
mod vocab;

pub use clean::clean_text;
pub use integrity::{integrity_check, IntegrityReport};
pub use io::{
    preprocess_csv, read_record_file, write_histogram_csv, write_record_file, write_stats_csv, CsvSchema,
    Preprocessed, RecordFile, RECORD_FILE_VERSION,
};
pub use labels::{build_labels, LabelScheme, Labels, COARSE_NAMES, FINE_NAMES};
pub use stats::{dataset_stats, quantile, DatasetStats, GroupStats};
pub use synth::{generate_synthetic, synthetic_vocabulary, SYNTH_CLASS_MIX, SYNTH_MAX_LEN};
pub use vocab::{build_vocab, tokenize, Vocabulary, PAD_ID, UNK_ID};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One review with its derived labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub raw_text: String,
    pub clean_text: String,
    pub token_ids: Vec<usize>,
    /// 0 = negative, 1 = neutral, 2 = positive.
    pub coarse_label: usize,
    /// 0 = strongly negative … 4 = very positive.
    pub fine_label: usize,
    /// Reviewer score divided by 10.
    pub intensity: f64,
    /// Reviewer score on the 0–10 scale.
    pub score: f64,
    pub year: Option<i32>,
}

/// Deterministic shuffled split; returns `(train, holdout)` with
/// `round(len * holdout_fraction)` records held out.
pub fn split_holdout(records: &[Record], holdout_fraction: f64, seed: u64) -> (Vec<Record>, Vec<Record>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((records.len() as f64) * holdout_fraction).round() as usize;
    let cut = records.len() - held.min(records.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    (pick(&order[..cut]), pick(&order[cut..]))
}
