//! Vocabulary with per-token language tags.
//!
//! Every token belongs to exactly one language (`L1`, `L2`) or is one of the
//! three special tokens (`<unk>`, `<bos>`, `<eos>`), which are tagged
//! `Special`. Ids are contiguous `0..V` with the specials pinned at the front.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

/// Language membership of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LangTag {
    L1,
    L2,
    Special,
}

impl LangTag {
    pub fn is_language(self) -> bool {
        matches!(self, LangTag::L1 | LangTag::L2)
    }
}

/// Token/id bijection with language tags and training-corpus frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    tags: Vec<LangTag>,
    freqs: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const UNK: u32 = 0;
    pub const BOS: u32 = 1;
    pub const EOS: u32 = 2;

    fn with_entries(entries: Vec<(String, LangTag, u64)>) -> Self {
        let mut tokens = vec![
            UNK_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
        ];
        let mut tags = vec![LangTag::Special; 3];
        let mut freqs = vec![0u64; 3];
        for (token, tag, freq) in entries {
            tokens.push(token);
            tags.push(tag);
            freqs.push(freq);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            tags,
            freqs,
            index,
        }
    }

    /// Number of entries, including the three specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unk id when out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tag(&self, id: u32) -> LangTag {
        self.tags[id as usize]
    }

    pub fn freq(&self, id: u32) -> u64 {
        self.freqs[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids tagged with the given language, ascending.
    pub fn ids_with_tag(&self, tag: LangTag) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|&id| self.tags[id as usize] == tag)
            .collect()
    }

    /// SHA-256 over the full entry list; identifies the vocabulary in
    /// checkpoints so a model is never paired with the wrong id mapping.
    pub fn hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for id in 0..self.len() {
            hasher.update(self.tokens[id].as_bytes());
            hasher.update([0u8]);
            let tag = match self.tags[id] {
                LangTag::L1 => 1u8,
                LangTag::L2 => 2u8,
                LangTag::Special => 0u8,
            };
            hasher.update([tag]);
            hasher.update(self.freqs[id].to_le_bytes());
        }
        hasher.finalize().into()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let data = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("vocabulary serialization failed: {e}")))?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab: Vocabulary = serde_json::from_str(&data)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if vocab.tokens.len() < 3
            || vocab.tokens[0] != UNK_TOKEN
            || vocab.tokens[1] != BOS_TOKEN
            || vocab.tokens[2] != EOS_TOKEN
        {
            return Err(Error::Config(format!(
                "vocabulary file {} lacks the special-token prefix",
                path.display()
            )));
        }
        vocab.index = vocab
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(vocab)
    }
}

/// Builds a vocabulary from tagged sentences.
///
/// Tokens seen fewer than `min_freq` times are dropped (they map to unk at
/// encoding time). Ordering is frequency-descending with lexicographic
/// tie-breaks, so identical input always yields an identical vocabulary.
/// A surface form observed with two different language tags is an error.
pub fn build_vocabulary(sentences: &[Vec<(String, LangTag)>], min_freq: u64) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, (LangTag, u64)> = HashMap::new();
    for sentence in sentences {
        for (token, tag) in sentence {
            match counts.get_mut(token.as_str()) {
                Some((seen_tag, n)) => {
                    if *seen_tag != *tag {
                        return Err(Error::ConflictingTag {
                            token: token.clone(),
                        });
                    }
                    *n += 1;
                }
                None => {
                    counts.insert(token, (*tag, 1));
                }
            }
        }
    }
    let mut entries: Vec<(String, LangTag, u64)> = counts
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_freq)
        .map(|(token, (tag, n))| (token.to_string(), tag, n))
        .collect();
    entries.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::with_entries(entries))
}

/// Builds a vocabulary from an explicit token list, in the order given.
///
/// Used by the synthetic generator, where the surface inventory is known up
/// front and even zero-frequency words must keep their ids. Frequencies are
/// counted over `sentences` (untagged raw token sequences).
pub fn vocabulary_from_inventory(
    l1_tokens: &[String],
    l2_tokens: &[String],
    sentences: &[Vec<String>],
) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for token in sentence {
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut seen: HashMap<&str, LangTag> = HashMap::new();
    let mut entries = Vec::with_capacity(l1_tokens.len() + l2_tokens.len());
    for (tokens, tag) in [(l1_tokens, LangTag::L1), (l2_tokens, LangTag::L2)] {
        for token in tokens {
            if seen.insert(token.as_str(), tag).is_some() {
                return Err(Error::ConflictingTag {
                    token: token.clone(),
                });
            }
            let freq = counts.get(token.as_str()).copied().unwrap_or(0);
            entries.push((token.clone(), tag, freq));
        }
    }
    Ok(Vocabulary::with_entries(entries))
}

/// One-token-per-line language wordlist, used to tag corpus files.
pub fn load_wordlist(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        if token.split_whitespace().count() > 1 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("wordlist line holds more than one token: {token:?}"),
            ));
        }
        tokens.push(token.to_string());
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(items: &[(&str, LangTag)]) -> Vec<(String, LangTag)> {
        items.iter().map(|(t, g)| (t.to_string(), *g)).collect()
    }

    #[test]
    fn min_freq_threshold_drops_rare_tokens() {
        let sentences = vec![tagged(&[
            ("a", LangTag::L1),
            ("a", LangTag::L1),
            ("a", LangTag::L1),
            ("a", LangTag::L1),
            ("a", LangTag::L1),
            ("b", LangTag::L2),
        ])];
        let vocab = build_vocabulary(&sentences, 2).unwrap();
        assert_eq!(vocab.len(), 4); // 3 specials + "a"
        assert!(vocab.id_of("a").is_some());
        assert_eq!(vocab.id_of("b"), None);
        assert_eq!(vocab.id_or_unk("b"), Vocabulary::UNK);
    }

    #[test]
    fn empty_input_yields_specials_only() {
        let vocab = build_vocabulary(&[], 1).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.token(Vocabulary::UNK), UNK_TOKEN);
        assert_eq!(vocab.token(Vocabulary::BOS), BOS_TOKEN);
        assert_eq!(vocab.token(Vocabulary::EOS), EOS_TOKEN);
        for id in 0..3 {
            assert_eq!(vocab.tag(id), LangTag::Special);
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let sentences = vec![
            tagged(&[("z", LangTag::L1), ("m", LangTag::L2), ("z", LangTag::L1)]),
            tagged(&[("m", LangTag::L2), ("q", LangTag::L1), ("k", LangTag::L2)]),
        ];
        let a = build_vocabulary(&sentences, 1).unwrap();
        let b = build_vocabulary(&sentences, 1).unwrap();
        assert_eq!(a.tokens(), b.tokens());
        assert_eq!(a.hash(), b.hash());
        // frequency desc, then lexicographic
        assert_eq!(a.token(3), "m");
        assert_eq!(a.token(4), "z");
        assert_eq!(a.token(5), "k");
        assert_eq!(a.token(6), "q");
    }

    #[test]
    fn conflicting_tags_error() {
        let sentences = vec![tagged(&[("x", LangTag::L1), ("x", LangTag::L2)])];
        let err = build_vocabulary(&sentences, 1).unwrap_err();
        assert!(matches!(err, Error::ConflictingTag { token } if token == "x"));
    }

    #[test]
    fn ids_are_contiguous_and_bijective() {
        let sentences = vec![tagged(&[
            ("a", LangTag::L1),
            ("b", LangTag::L1),
            ("c", LangTag::L2),
        ])];
        let vocab = build_vocabulary(&sentences, 1).unwrap();
        for id in 0..vocab.len() as u32 {
            assert_eq!(vocab.id_of(vocab.token(id)), Some(id));
        }
    }

    #[test]
    fn json_roundtrip_preserves_hash() {
        let sentences = vec![tagged(&[("a", LangTag::L1), ("b", LangTag::L2)])];
        let vocab = build_vocabulary(&sentences, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        vocab.save_json(&path).unwrap();
        let loaded = Vocabulary::load_json(&path).unwrap();
        assert_eq!(loaded.hash(), vocab.hash());
        assert_eq!(loaded.id_of("b"), vocab.id_of("b"));
    }
}
