//! Corpora, vocabularies, bilingual dictionaries, synthetic data, and
//! pseudo-code-switching generators.

pub mod dict;
pub mod pseudo;
pub mod synth;
pub mod vocab;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use vocab::{LangTag, Vocabulary};

/// Class of a sentence, derived from the language tags of its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SentenceClass {
    MonoL1,
    MonoL2,
    Cs,
}

/// A sentence as token ids, without bos/eos (those are added at consumption).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub ids: Vec<u32>,
    pub class: SentenceClass,
}

impl Sentence {
    pub fn new(ids: Vec<u32>, vocab: &Vocabulary) -> Self {
        let class = classify(&ids, vocab);
        Sentence { ids, class }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Derives the sentence class from vocabulary tags.
///
/// A sentence with tokens from both languages is `Cs`; all-L1 is `MonoL1`
/// and symmetrically for L2. Sentences with no language-tagged token at all
/// (for example all-unk lines) fall into the residual `Cs` class, which keeps
/// the three classes a partition of every corpus.
pub fn classify(ids: &[u32], vocab: &Vocabulary) -> SentenceClass {
    let mut has_l1 = false;
    let mut has_l2 = false;
    for &id in ids {
        match vocab.tag(id) {
            LangTag::L1 => has_l1 = true,
            LangTag::L2 => has_l2 = true,
            LangTag::Special => {}
        }
    }
    match (has_l1, has_l2) {
        (true, false) => SentenceClass::MonoL1,
        (false, true) => SentenceClass::MonoL2,
        _ => SentenceClass::Cs,
    }
}

/// An ordered collection of sentences sharing one vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        Corpus { sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.ids.len()).sum()
    }

    /// Concatenates corpora in order.
    pub fn union(parts: &[&Corpus]) -> Corpus {
        let mut sentences = Vec::new();
        for part in parts {
            sentences.extend(part.sentences.iter().cloned());
        }
        Corpus { sentences }
    }
}

/// Options for [`load_corpus`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Hard cap on tokens per line; longer lines are an error.
    pub max_line_tokens: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_line_tokens: 1024,
        }
    }
}

/// Statistics reported by [`load_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub sentences: usize,
    pub skipped_empty_lines: usize,
    pub unk_tokens: usize,
    pub total_tokens: usize,
}

/// Loads a one-sentence-per-line, whitespace-tokenized UTF-8 corpus file.
///
/// Out-of-vocabulary tokens map to unk. Empty lines are skipped and counted.
pub fn load_corpus(
    path: &Path,
    vocab: &Vocabulary,
    opts: &LoadOptions,
) -> Result<(Corpus, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    let mut sentences = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            report.skipped_empty_lines += 1;
            continue;
        }
        if tokens.len() > opts.max_line_tokens {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!(
                    "line has {} tokens, exceeding the configured maximum of {}",
                    tokens.len(),
                    opts.max_line_tokens
                ),
            ));
        }
        let ids: Vec<u32> = tokens
            .iter()
            .map(|t| {
                let id = vocab.id_or_unk(t);
                if id == Vocabulary::UNK {
                    report.unk_tokens += 1;
                }
                id
            })
            .collect();
        report.total_tokens += ids.len();
        sentences.push(Sentence::new(ids, vocab));
    }
    report.sentences = sentences.len();
    Ok((Corpus::new(sentences), report))
}

/// Writes a corpus back to one-sentence-per-line text.
pub fn save_corpus(path: &Path, corpus: &Corpus, vocab: &Vocabulary) -> Result<()> {
    let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
    for sentence in &corpus.sentences {
        let line: Vec<&str> = sentence.ids.iter().map(|&id| vocab.token(id)).collect();
        writeln!(out, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads a corpus file into tagged token sequences using per-language
/// wordlists. Tokens in neither wordlist are replaced by the literal unk
/// token (they would be out of vocabulary anyway) and counted.
pub fn read_tagged_corpus(
    path: &Path,
    l1_words: &[String],
    l2_words: &[String],
) -> Result<(Vec<Vec<(String, LangTag)>>, usize)> {
    let l1: HashSet<&str> = l1_words.iter().map(|s| s.as_str()).collect();
    let l2: HashSet<&str> = l2_words.iter().map(|s| s.as_str()).collect();
    if let Some(shared) = l1.intersection(&l2).next() {
        return Err(Error::ConflictingTag {
            token: shared.to_string(),
        });
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let mut untagged = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut sentence = Vec::new();
        for token in line.split_whitespace() {
            if l1.contains(token) {
                sentence.push((token.to_string(), LangTag::L1));
            } else if l2.contains(token) {
                sentence.push((token.to_string(), LangTag::L2));
            } else {
                untagged += 1;
                sentence.push((vocab::UNK_TOKEN.to_string(), LangTag::Special));
            }
        }
        if !sentence.is_empty() {
            sentences.push(sentence);
        }
    }
    Ok((sentences, untagged))
}
