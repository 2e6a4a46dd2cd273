//! Character vocabulary, synthetic corpora and batching.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScrError};
use crate::model::TokenId;

/// Symbol decoded for id 0.
pub const UNKNOWN: char = '\u{FFFD}';

/// Default symbol noise of the pattern corpus.
pub const PATTERN_NOISE: f64 = 0.01;

/// Symbols available to topic templates, four per topic.
pub const TOPIC_POOL: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
pub const SYMBOLS_PER_TOPIC: usize = 4;
const TEMPLATE_LEN: usize = 8;

/// An `(input, target)` pair; `target[i] == input[i + 1]` within the window.
pub type Example = (Vec<TokenId>, Vec<TokenId>);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<char>,
    ids: BTreeMap<char, TokenId>,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    /// Characters outside the vocabulary map to id 0.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.chars().map(|c| self.ids.get(&c).copied().unwrap_or(0)).collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.symbols.get(t).copied().unwrap_or(UNKNOWN)).collect()
    }

    pub fn symbol(&self, id: TokenId) -> Option<char> {
        self.symbols.get(id).copied()
    }
}

/// Character-level vocabulary: id 0 is reserved for unknown symbols, the
/// remaining ids follow codepoint order.
pub fn build_vocab(text: &str) -> Result<Vocab> {
    if text.is_empty() {
        return Err(ScrError::Input("cannot build a vocabulary from empty text".into()));
    }
    let distinct: BTreeSet<char> = text.chars().filter(|&c| c != UNKNOWN).collect();
    let mut symbols = vec![UNKNOWN];
    symbols.extend(distinct);
    let ids = symbols.iter().enumerate().skip(1).map(|(i, &c)| (c, i)).collect();
    Ok(Vocab { symbols, ids })
}

/// Repeats `pattern` up to `length` characters, then replaces each position
/// with probability `noise` by a different symbol of the pattern's alphabet.
pub fn synth_pattern_corpus(pattern: &str, length: usize, noise: f64, seed: u64) -> Result<String> {
    if pattern.is_empty() {
        return Err(ScrError::Input("pattern must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(ScrError::Input(format!("noise rate must lie in [0, 1], got {noise}")));
    }
    let cycle: Vec<char> = pattern.chars().collect();
    let alphabet: Vec<char> = cycle.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(length);
    for i in 0..length {
        let clean = cycle[i % cycle.len()];
        let c = if noise > 0.0 && alphabet.len() > 1 && rng.random::<f64>() < noise {
            let pick = rng.random_range(0..alphabet.len() - 1);
            let others: Vec<char> = alphabet.iter().copied().filter(|&a| a != clean).collect();
            others[pick]
        } else {
            clean
        };
        out.push(c);
    }
    Ok(out)
}

/// Text made of consecutive topic spans with recorded boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCorpus {
    pub text: String,
    /// Character offsets where a new topic starts, strictly increasing.
    pub boundaries: Vec<usize>,
    /// Topic id of each span; one more entry than `boundaries`.
    pub topics: Vec<usize>,
}

impl ShiftCorpus {
    pub fn len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics.len() != self.boundaries.len() + 1 {
            return Err(ScrError::Input(format!(
                "{} topics do not tag {} boundaries",
                self.topics.len(),
                self.boundaries.len()
            )));
        }
        let n = self.len();
        let mut last = 0;
        for &b in &self.boundaries {
            if b <= last || b >= n {
                return Err(ScrError::Input(format!("boundary {b} is out of order or outside 0..{n}")));
            }
            last = b;
        }
        Ok(())
    }

    /// `(start, end)` character range of each topic span.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut starts = vec![0];
        starts.extend(&self.boundaries);
        let mut ends = self.boundaries.clone();
        ends.push(self.len());
        starts.into_iter().zip(ends).collect()
    }
}

/// The symbols owned by topic `topic`.
pub fn topic_symbols(topic: usize) -> Vec<char> {
    TOPIC_POOL.chars().skip(topic * SYMBOLS_PER_TOPIC).take(SYMBOLS_PER_TOPIC).collect()
}

pub fn max_topics() -> usize {
    TOPIC_POOL.chars().count() / SYMBOLS_PER_TOPIC
}

/// `k_shifts + 1` spans of `span_len` characters, each cycling a seeded
/// template over its own disjoint symbol set.
pub fn synth_shift_corpus(k_shifts: usize, span_len: usize, segment_len: usize, seed: u64) -> Result<ShiftCorpus> {
    if segment_len == 0 || span_len < 2 * segment_len {
        return Err(ScrError::Input(format!(
            "span length {span_len} must cover at least two segments of {segment_len}"
        )));
    }
    let n_topics = k_shifts + 1;
    if n_topics > max_topics() {
        return Err(ScrError::Input(format!("at most {} shifts are supported", max_topics() - 1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..max_topics()).collect();
    order.shuffle(&mut rng);
    let topics: Vec<usize> = order[..n_topics].to_vec();
    let mut text = String::with_capacity(n_topics * span_len);
    let mut boundaries = Vec::with_capacity(k_shifts);
    for (i, &topic) in topics.iter().enumerate() {
        if i > 0 {
            boundaries.push(i * span_len);
        }
        let symbols = topic_symbols(topic);
        let template: Vec<char> = (0..TEMPLATE_LEN).map(|_| symbols[rng.random_range(0..symbols.len())]).collect();
        text.extend((0..span_len).map(|j| template[j % TEMPLATE_LEN]));
    }
    Ok(ShiftCorpus { text, boundaries, topics })
}

/// Random contiguous windows of `seq_len + 1` tokens split into input and
/// next-token target.
pub fn batch(tokens: &[TokenId], seq_len: usize, batch_size: usize, seed: u64) -> Result<Vec<Example>> {
    if seq_len == 0 {
        return Err(ScrError::Input("window length must be positive".into()));
    }
    if tokens.len() <= seq_len {
        return Err(ScrError::Input(format!(
            "corpus of {} tokens is shorter than one window of {}",
            tokens.len(),
            seq_len + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last_start = tokens.len() - seq_len - 1;
    Ok((0..batch_size)
        .map(|_| {
            let s = rng.random_range(0..=last_start);
            (tokens[s..s + seq_len].to_vec(), tokens[s + 1..s + seq_len + 1].to_vec())
        })
        .collect())
}

/// JSON sidecar stored next to a persisted corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSidecar {
    pub generator: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub boundaries: Vec<usize>,
    pub topics: Vec<usize>,
}

/// Writes `<stem>.txt` and `<stem>.json`.
pub fn save_corpus(stem: &Path, text: &str, sidecar: &CorpusSidecar) -> Result<()> {
    std::fs::write(stem.with_extension("txt"), text)?;
    std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn load_corpus(stem: &Path) -> Result<(String, CorpusSidecar)> {
    let text = std::fs::read_to_string(stem.with_extension("txt"))?;
    let sidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    Ok((text, sidecar))
}

pub fn load_shift_corpus(stem: &Path) -> Result<ShiftCorpus> {
    let (text, side) = load_corpus(stem)?;
    let c = ShiftCorpus { text, boundaries: side.boundaries, topics: side.topics };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_layout() {
        let v = build_vocab("aba").unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.encode("ab"), vec![1, 2]);
        assert_eq!(v.encode("z"), vec![0]);
        assert_eq!(v.decode(&[0]), UNKNOWN.to_string());
        assert!(build_vocab("").is_err());
    }

    #[test]
    fn clean_pattern() {
        assert_eq!(synth_pattern_corpus("abc", 7, 0.0, 1).unwrap(), "abcabca");
        assert!(synth_pattern_corpus("", 7, 0.0, 1).is_err());
    }

    #[test]
    fn shift_corpus_construction() {
        let c = synth_shift_corpus(2, 100, 16, 5).unwrap();
        assert_eq!(c.len(), 300);
        assert_eq!(c.boundaries, vec![100, 200]);
        assert_eq!(c.topics.len(), 3);
        c.validate().unwrap();
        let single = synth_shift_corpus(0, 40, 16, 5).unwrap();
        assert!(single.boundaries.is_empty());
        assert!(synth_shift_corpus(1, 20, 16, 5).is_err());
    }

    #[test]
    fn untagged_corpus_fails_validation() {
        let mut c = synth_shift_corpus(2, 40, 8, 1).unwrap();
        c.topics.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn batch_windows() {
        let b = batch(&[1, 2, 3, 4], 3, 2, 0).unwrap();
        for (x, y) in &b {
            assert_eq!(x, &vec![1, 2, 3]);
            assert_eq!(y, &vec![2, 3, 4]);
        }
        assert!(batch(&[1, 2, 3], 3, 1, 0).is_err());
    }

    #[test]
    fn corpus_persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = synth_shift_corpus(3, 32, 8, 2).unwrap();
        let side = CorpusSidecar {
            generator: "shift".into(),
            params: BTreeMap::from([("k_shifts".to_string(), serde_json::json!(3))]),
            boundaries: c.boundaries.clone(),
            topics: c.topics.clone(),
        };
        let stem = dir.path().join("shift");
        save_corpus(&stem, &c.text, &side).unwrap();
        assert_eq!(load_shift_corpus(&stem).unwrap(), c);
    }
}
