//! Seeded synthetic review corpus.
//!
//! Vocabulary words are split into five groups of sentiment words (one per
//! fine class) and a pool of filler words. A review of fine class `c`
//! carries two or three words from group `c`, sometimes one word from a
//! neighbouring class, and several filler words. Class counts follow
//! [`SYNTH_CLASS_MIX`] exactly (largest-remainder rounding); scores are
//! drawn in tenths inside the class's score band.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_labels, clean_text, tokenize, Record, Vocabulary};
use crate::heads::FINE_CLASSES;

/// Target share of each fine class.
pub const SYNTH_CLASS_MIX: [f64; FINE_CLASSES] = [0.10, 0.15, 0.20, 0.30, 0.25];

/// Token-id length of generated records (longest review is 12 words).
pub const SYNTH_MAX_LEN: usize = 16;

/// Score band of each fine class in tenths, inclusive.
const BANDS: [(u32, u32); FINE_CLASSES] = [(0, 29), (30, 49), (50, 69), (70, 89), (90, 100)];
const YEARS: [i32; 3] = [2015, 2016, 2017];

struct Lexicon {
    sentiment: Vec<Vec<String>>,
    filler: Vec<String>,
}

impl Lexicon {
    fn new(vocab_size: usize) -> Self {
        assert!(vocab_size >= 10, "synthetic vocabulary needs at least 10 words");
        let per_class = (vocab_size * 3 / 5 / FINE_CLASSES).max(1);
        let sentiment = (0..FINE_CLASSES)
            .map(|c| (0..per_class).map(|k| format!("s{c}w{k}")).collect())
            .collect();
        let filler = (0..vocab_size - per_class * FINE_CLASSES)
            .map(|k| format!("f{k}"))
            .collect();
        Self { sentiment, filler }
    }

    fn words(&self) -> impl Iterator<Item = String> + '_ {
        self.sentiment.iter().flatten().chain(&self.filler).cloned()
    }
}

/// The fixed vocabulary used for generated records: specials, sentiment
/// words, then filler words.
pub fn synthetic_vocabulary(vocab_size: usize) -> Vocabulary {
    Vocabulary::from_words(Lexicon::new(vocab_size).words())
}

fn class_quota(n: usize) -> Vec<usize> {
    let raw: Vec<f64> = SYNTH_CLASS_MIX.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..FINE_CLASSES).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &c in order.iter().take(missing) {
        counts[c] += 1;
    }
    counts
}

/// Generates `n` labeled, tokenized reviews. Deterministic in `seed`.
pub fn generate_synthetic(n: usize, vocab_size: usize, seed: u64) -> Vec<Record> {
    let lex = Lexicon::new(vocab_size);
    let vocab = synthetic_vocabulary(vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = class_quota(n)
        .into_iter()
        .enumerate()
        .flat_map(|(c, k)| std::iter::repeat_n(c, k))
        .collect();
    classes.shuffle(&mut rng);

    classes
        .into_iter()
        .map(|class| {
            let mut words: Vec<String> = Vec::new();
            let own = rng.gen_range(2..=3);
            for _ in 0..own {
                words.push(lex.sentiment[class].choose(&mut rng).unwrap().clone());
            }
            if rng.gen_bool(0.3) {
                let neighbour = if class == 0 {
                    1
                } else if class == FINE_CLASSES - 1 || rng.gen_bool(0.5) {
                    class - 1
                } else {
                    class + 1
                };
                words.push(lex.sentiment[neighbour].choose(&mut rng).unwrap().clone());
            }
            if !lex.filler.is_empty() {
                for _ in 0..rng.gen_range(3..=8) {
                    words.push(lex.filler.choose(&mut rng).unwrap().clone());
                }
            }
            words.shuffle(&mut rng);

            let mut raw = words.join(" ");
            if let Some(first) = raw.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            match rng.gen_range(0..4) {
                0 => raw.push('!'),
                1 => raw.push_str(" @guest"),
                2 => raw.insert(0, '#'),
                _ => raw.push('.'),
            }

            let (lo, hi) = BANDS[class];
            let score = rng.gen_range(lo..=hi) as f64 / 10.0;
            let labels = build_labels(score).expect("band scores are in range");
            debug_assert_eq!(labels.fine, class);
            let clean = clean_text(&raw);
            Record {
                token_ids: tokenize(&vocab, &clean, SYNTH_MAX_LEN),
                raw_text: raw,
                clean_text: clean,
                coarse_label: labels.coarse,
                fine_label: labels.fine,
                intensity: labels.intensity,
                score,
                year: Some(*YEARS.choose(&mut rng).unwrap()),
            }
        })
        .collect()
}
