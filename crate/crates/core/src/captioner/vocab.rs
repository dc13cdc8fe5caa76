//! Token vocabulary with reserved sentinels and frequency filtering.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token table. Indices 0..4 are the reserved sentinels; everything after is
/// a corpus token that appeared at least `min_frequency` times in the
/// training captions, in lexicographic order so that builds are
/// deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    min_frequency: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const SOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;

    const RESERVED: [&'static str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

    /// Build from training captions, dropping tokens rarer than
    /// `min_frequency`.
    pub fn build<S: AsRef<str>>(captions: &[Vec<S>], min_frequency: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for caption in captions {
            for word in caption {
                *counts.entry(word.as_ref()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<&str> = counts
            .iter()
            .filter(|(_, &c)| c >= min_frequency)
            .map(|(&w, _)| w)
            .collect();
        kept.sort_unstable();
        let mut tokens: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(str::to_string));
        Vocabulary {
            tokens,
            min_frequency,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn sos(&self) -> usize {
        Self::SOS
    }

    pub fn eos(&self) -> usize {
        Self::EOS
    }

    pub fn pad(&self) -> usize {
        Self::PAD
    }

    pub fn unk(&self) -> usize {
        Self::UNK
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Map words to indices, sending out-of-vocabulary words to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words
            .iter()
            .map(|w| {
                self.tokens
                    .iter()
                    .position(|t| t == w.as_ref())
                    .unwrap_or(Self::UNK)
            })
            .collect()
    }

    /// Encode a caption and terminate it with EOS.
    pub fn encode_terminated<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        let mut ids = self.encode(words);
        ids.push(Self::EOS);
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Structural sanity for vocabularies read from files.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() < Self::RESERVED.len() {
            return Err(Error::Format("vocabulary smaller than reserved set".into()));
        }
        for (i, expect) in Self::RESERVED.iter().enumerate() {
            if self.tokens[i] != *expect {
                return Err(Error::Format(format!(
                    "reserved token {i} is {:?}, expected {expect:?}",
                    self.tokens[i]
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn caps(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn reserved_indices_are_distinct_and_first() {
        let v = Vocabulary::build(&caps(&["a b", "a b", "a b", "a b", "a b"]), 5);
        assert_eq!(v.sos(), 1);
        assert_eq!(v.eos(), 2);
        assert!(v.sos() < v.size() && v.eos() < v.size());
        assert_eq!(v.token(0), "<pad>");
        assert_eq!(v.token(3), "<unk>");
        v.validate().unwrap();
    }

    #[test]
    fn frequency_filter_drops_rare_tokens() {
        let corpus = caps(&[
            "cat sat", "cat sat", "cat sat", "cat ran", "cat sat", "cat sat",
        ]);
        let v = Vocabulary::build(&corpus, 5);
        // "cat" appears 6 times, "sat" 5, "ran" once.
        assert_eq!(v.size(), 6);
        assert_eq!(v.encode(&["ran"]), vec![Vocabulary::UNK]);
        assert_ne!(v.encode(&["cat"]), vec![Vocabulary::UNK]);
    }

    #[test]
    fn encode_terminated_ends_with_eos() {
        let v = Vocabulary::build(&caps(&["a a a a a"]), 5);
        let ids = v.encode_terminated(&["a", "zzz"]);
        assert_eq!(*ids.last().unwrap(), Vocabulary::EOS);
        assert_eq!(ids[1], Vocabulary::UNK);
    }

    #[test]
    fn build_is_deterministic() {
        let corpus = caps(&["b a c", "c a b", "a b c", "c b a", "a c b"]);
        let v1 = Vocabulary::build(&corpus, 5);
        let v2 = Vocabulary::build(&corpus, 5);
        assert_eq!(v1, v2);
    }
}
