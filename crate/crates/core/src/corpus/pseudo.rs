//! Pseudo-code-switching data generators: dictionary word substitution and
//! cross-language sentence concatenation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::dict::BilingualDict;
use crate::corpus::vocab::Vocabulary;
use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

/// Replaces each dictionary source-side token independently with probability
/// `p` by one of its translations (uniform choice when there are several).
/// Tokens absent from the dictionary are untouched; sentence lengths never
/// change. Sentences are relabeled afterwards. Deterministic given the seed.
pub fn word_substitution(
    corpus: &Corpus,
    dict: &BilingualDict,
    p: f64,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "substitution probability must be in [0, 1], got {p}"
        )));
    }
    let map = dict.source_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(corpus.len());
    for sentence in &corpus.sentences {
        let mut ids = sentence.ids.clone();
        for id in ids.iter_mut() {
            if let Some(targets) = map.get(id) {
                if rng.random::<f64>() < p {
                    let pick = if targets.len() == 1 {
                        targets[0]
                    } else {
                        targets[rng.random_range(0..targets.len())]
                    };
                    *id = pick;
                }
            }
        }
        sentences.push(Sentence::new(ids, vocab));
    }
    Ok(Corpus::new(sentences))
}

/// Builds `n` pseudo-CS sentences by sampling one sentence from each corpus
/// (uniform, with replacement) and concatenating them in random order with no
/// separator. The result is the union of both inputs plus the generated
/// sentences. Deterministic given the seed.
pub fn sentence_concatenation(
    c1: &Corpus,
    c2: &Corpus,
    n: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Config(
            "sentence concatenation needs a positive sentence count".into(),
        ));
    }
    if c1.is_empty() || c2.is_empty() {
        return Err(Error::Config(
            "sentence concatenation needs two non-empty corpora".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Corpus::union(&[c1, c2]);
    for _ in 0..n {
        let s1 = &c1.sentences[rng.random_range(0..c1.len())].ids;
        let s2 = &c2.sentences[rng.random_range(0..c2.len())].ids;
        let (first, second) = if rng.random::<f64>() < 0.5 {
            (s1, s2)
        } else {
            (s2, s1)
        };
        let mut ids = Vec::with_capacity(first.len() + second.len());
        ids.extend_from_slice(first);
        ids.extend_from_slice(second);
        out.sentences.push(Sentence::new(ids, vocab));
    }
    Ok(out)
}
