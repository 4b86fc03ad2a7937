use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Dense token ids with `<pad>` = 0 and `<unk>` = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Vocabulary holding the specials followed by `words` in order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let tokens = [PAD.to_string(), UNK.to_string()].into_iter().chain(words).collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Whitespace tokens with count ≥ `min_frequency`, ranked by count then
/// token, capped at `max_size` entries including the two specials.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_frequency: usize, max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("cannot build a vocabulary from an empty corpus".into()));
    }
    if max_size < 2 {
        return Err(Error::InvalidInput(format!("max_size {max_size} leaves no room for <pad>/<unk>")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in corpus {
        for tok in line.as_ref().split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_frequency).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(max_size - 2);
    Ok(Vocabulary::from_words(ranked.into_iter().map(|(t, _)| t.to_string())))
}

/// Maps whitespace tokens to ids, truncating and padding to exactly `max_len`.
pub fn tokenize(vocab: &Vocabulary, clean: &str, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = clean.split_whitespace().take(max_len).map(|t| vocab.id(t)).collect();
    ids.resize(max_len, PAD_ID);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_examples() {
        let v = build_vocab(&["a a b"], 1, 100).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        let v2 = build_vocab(&["a a b"], 2, 100).unwrap();
        assert_eq!(v2.tokens(), &["<pad>", "<unk>", "a"]);
        assert_eq!(build_vocab(&["a a b"], 1, 100).unwrap(), v);
        assert!(build_vocab::<&str>(&[], 1, 10).is_err());
    }

    #[test]
    fn ties_broken_by_token_and_size_capped() {
        let v = build_vocab(&["c b a", "d"], 1, 4).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
    }

    #[test]
    fn tokenize_examples() {
        let v = build_vocab(&["a a b"], 1, 100).unwrap();
        assert_eq!(tokenize(&v, "a b", 4), vec![2, 3, 0, 0]);
        assert_eq!(tokenize(&v, "", 4), vec![0, 0, 0, 0]);
        assert_eq!(tokenize(&v, "zzz a", 4), vec![1, 2, 0, 0]);
        assert_eq!(tokenize(&v, "a b a b a b", 4), vec![2, 3, 2, 3]);
    }

    #[test]
    fn serde_keeps_order() {
        let v = build_vocab(&["x y y z z z"], 1, 10).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("z"), 2);
    }

    proptest! {
        #[test]
        fn tokenize_length_is_fixed(s in "[a-c ]{0,40}", max_len in 1usize..20) {
            let v = build_vocab(&["a b"], 1, 10).unwrap();
            prop_assert_eq!(tokenize(&v, &s, max_len).len(), max_len);
        }
    }
}
