//! Fixtures shared by the criterion benches.

use duosent_core::data::{generate_synthetic, synthetic_vocabulary, Record};
use duosent_core::{DualEncoderModel, ModelConfig};

pub const BENCH_VOCAB: usize = 50;

/// The default desk-scale model sized for the synthetic vocabulary.
pub fn desk_model() -> DualEncoderModel {
    DualEncoderModel::new(ModelConfig {
        vocab_size: synthetic_vocabulary(BENCH_VOCAB).len(),
        ..ModelConfig::default()
    })
    .expect("default config is valid")
}

pub fn synthetic_records(n: usize) -> Vec<Record> {
    generate_synthetic(n, BENCH_VOCAB, 7)
}
