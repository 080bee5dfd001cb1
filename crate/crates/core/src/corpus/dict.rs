//! Bilingual dictionaries in the two-column whitespace format used by MUSE.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::vocab::{LangTag, Vocabulary};
use crate::error::{Error, Result};

/// Ordered, deduplicated translation pairs between the two languages.
///
/// Pairs are directional: `(source id, target id)` with the source tagged
/// `src_tag` and the target `tgt_tag`. Many-to-many mappings are allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualDict {
    pairs: Vec<(u32, u32)>,
    src_tag: LangTag,
    tgt_tag: LangTag,
}

/// Outcome of loading a dictionary file against a vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DictLoadReport {
    pub retained: usize,
    pub dropped_oov: usize,
    pub dropped_duplicate: usize,
}

impl BilingualDict {
    /// Validates that every pair's sides exist in the vocabulary with the
    /// expected language tags.
    pub fn new(
        pairs: Vec<(u32, u32)>,
        src_tag: LangTag,
        tgt_tag: LangTag,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        if !src_tag.is_language() || !tgt_tag.is_language() || src_tag == tgt_tag {
            return Err(Error::Config(
                "dictionary sides must be the two distinct languages".into(),
            ));
        }
        for &(src, tgt) in &pairs {
            if src as usize >= vocab.len() || tgt as usize >= vocab.len() {
                return Err(Error::Config(format!(
                    "dictionary pair ({src}, {tgt}) out of vocabulary range"
                )));
            }
            if vocab.tag(src) != src_tag || vocab.tag(tgt) != tgt_tag {
                return Err(Error::Config(format!(
                    "dictionary pair ({:?}, {:?}) has mismatched language tags",
                    vocab.token(src),
                    vocab.token(tgt)
                )));
            }
        }
        Ok(BilingualDict {
            pairs,
            src_tag,
            tgt_tag,
        })
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn src_tag(&self) -> LangTag {
        self.src_tag
    }

    pub fn tgt_tag(&self) -> LangTag {
        self.tgt_tag
    }

    /// Swaps source and target sides.
    pub fn reversed(&self) -> BilingualDict {
        BilingualDict {
            pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect(),
            src_tag: self.tgt_tag,
            tgt_tag: self.src_tag,
        }
    }

    /// Source id -> target ids, in pair order.
    pub fn source_map(&self) -> HashMap<u32, Vec<u32>> {
        let mut map: HashMap<u32, Vec<u32>> = HashMap::new();
        for &(src, tgt) in &self.pairs {
            map.entry(src).or_default().push(tgt);
        }
        map
    }

    pub fn save_tsv(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        let mut out = File::create(path).map_err(|e| Error::io(path, e))?;
        for &(src, tgt) in &self.pairs {
            writeln!(out, "{}\t{}", vocab.token(src), vocab.token(tgt))
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Loads a two-column dictionary file. Pairs with either side out of
/// vocabulary are dropped and counted; duplicates are dropped and counted.
/// The source column must be `src_tag`-language tokens.
pub fn load_bilingual_dict(
    path: &Path,
    vocab: &Vocabulary,
    src_tag: LangTag,
) -> Result<(BilingualDict, DictLoadReport)> {
    let tgt_tag = match src_tag {
        LangTag::L1 => LangTag::L2,
        LangTag::L2 => LangTag::L1,
        LangTag::Special => {
            return Err(Error::Config(
                "dictionary source side must be a language, not specials".into(),
            ))
        }
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = DictLoadReport::default();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split_whitespace();
        let (src, tgt) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected two whitespace-separated columns, got {line:?}"),
                ))
            }
        };
        let (src_id, tgt_id) = match (vocab.id_of(src), vocab.id_of(tgt)) {
            (Some(s), Some(t)) if vocab.tag(s) == src_tag && vocab.tag(t) == tgt_tag => (s, t),
            _ => {
                report.dropped_oov += 1;
                continue;
            }
        };
        if !seen.insert((src_id, tgt_id)) {
            report.dropped_duplicate += 1;
            continue;
        }
        pairs.push((src_id, tgt_id));
    }
    report.retained = pairs.len();
    let dict = BilingualDict::new(pairs, src_tag, tgt_tag, vocab)?;
    Ok((dict, report))
}
