//! Evaluation suite: five perplexity variants, CS-point detection,
//! unsupervised bilingual word translation, PCA overlap, and generation.

pub mod generate;
pub mod pca;
pub mod translate;

pub use generate::{generate, GenStrategy};
pub use pca::{pca_project, pca_top_k, separability_score, Projection2D};
pub use translate::{translate_eval, Direction, TranslationReport};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{LangTag, Vocabulary};
use crate::corpus::{Corpus, SentenceClass};
use crate::error::{Error, Result};
use crate::model::{sigmoid, ModelParams};

/// Positions whose target token sits right after a language switch: the
/// language of token `t` differs from the previous language-tagged token.
/// Special tokens are transparent (skipped) and never switch points.
pub fn cs_points(tags: &[LangTag]) -> Vec<usize> {
    let mut points = Vec::new();
    let mut prev: Option<LangTag> = None;
    for (t, &tag) in tags.iter().enumerate() {
        if !tag.is_language() {
            continue;
        }
        if let Some(p) = prev {
            if p != tag {
                points.push(t);
            }
        }
        prev = Some(tag);
    }
    points
}

/// Target sets for the five perplexity variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PplSelector {
    /// All targets of monolingual L1 sentences.
    MonoL1,
    /// All targets of monolingual L2 sentences.
    MonoL2,
    /// All targets of code-switched sentences.
    Cs,
    /// Only the switch-point targets within code-switched sentences.
    CsPoints,
    /// Every target in the corpus.
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityEntry {
    pub ppl: f64,
    /// Number of prediction targets underlying the value.
    pub tokens: usize,
}

/// The five perplexities of one corpus. Selectors with no targets are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<PerplexityEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<PerplexityEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cs: Option<PerplexityEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csp: Option<PerplexityEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall: Option<PerplexityEntry>,
}

/// Batched eval-mode scoring: per-sentence log probabilities of each target
/// (the sentence tokens followed by eos). Deterministic.
pub fn score_log_probs(
    params: &ModelParams,
    sentences: &[&[u32]],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let v = params.vocab_size();
    let z = params.hidden_size();
    for s in sentences {
        for &id in *s {
            if id as usize >= v {
                return Err(Error::DimMismatch {
                    expected: format!("token ids < {v}"),
                    got: format!("{id}"),
                });
            }
        }
    }
    let batch_size = batch_size.max(1);
    let mut out: Vec<Vec<f64>> = sentences.iter().map(|s| Vec::with_capacity(s.len() + 1)).collect();
    for (chunk_idx, chunk) in sentences.chunks(batch_size).enumerate() {
        let b = chunk.len();
        let steps = chunk.iter().map(|s| s.len()).max().unwrap_or(0) + 1;
        let mut h = DMatrix::zeros(z, b);
        let mut c = DMatrix::zeros(z, b);
        let mut xh = DMatrix::zeros(2 * z, b);
        let mut pre = DMatrix::zeros(4 * z, b);
        let mut logits = DMatrix::zeros(v, b);
        for t in 0..steps {
            for (col, s) in chunk.iter().enumerate() {
                let id = if t == 0 {
                    Vocabulary::BOS
                } else if t <= s.len() {
                    s[t - 1]
                } else {
                    Vocabulary::UNK
                } as usize;
                for k in 0..z {
                    xh[(k, col)] = params.embed[(id, k)];
                    xh[(z + k, col)] = h[(k, col)];
                }
            }
            pre.gemm(1.0, &params.w_gates, &xh, 0.0);
            for col in 0..b {
                for k in 0..z {
                    let i = sigmoid(pre[(k, col)] + params.b_gates[k]);
                    let f = sigmoid(pre[(z + k, col)] + params.b_gates[z + k]);
                    let g = (pre[(2 * z + k, col)] + params.b_gates[2 * z + k]).tanh();
                    let o = sigmoid(pre[(3 * z + k, col)] + params.b_gates[3 * z + k]);
                    let cv = f * c[(k, col)] + i * g;
                    c[(k, col)] = cv;
                    h[(k, col)] = o * cv.tanh();
                }
            }
            logits.gemm(1.0, &params.w_out, &h, 0.0);
            for (col, s) in chunk.iter().enumerate() {
                let target = if t < s.len() {
                    Some(s[t])
                } else if t == s.len() {
                    Some(Vocabulary::EOS)
                } else {
                    None
                };
                let Some(target) = target else { continue };
                let column = logits.column(col);
                let max = column.max();
                let mut sum = 0.0;
                for r in 0..v {
                    sum += (column[r] - max).exp();
                }
                let lp = column[target as usize] - max - sum.ln();
                out[chunk_idx * batch_size + col].push(lp);
            }
        }
    }
    Ok(out)
}

const EVAL_BATCH: usize = 64;

/// Perplexity of one target selector: exp of the mean negative log
/// probability. `None` when the selector has no targets in the corpus.
pub fn perplexity(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocabulary,
    selector: PplSelector,
) -> Result<Option<PerplexityEntry>> {
    let sentences: Vec<&[u32]> = corpus.sentences.iter().map(|s| s.ids.as_slice()).collect();
    let scored = score_log_probs(params, &sentences, EVAL_BATCH)?;
    Ok(collect_selector(corpus, vocab, &scored, selector))
}

/// All five perplexities from a single scoring pass.
pub fn perplexity_report(
    params: &ModelParams,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Result<PerplexityReport> {
    let sentences: Vec<&[u32]> = corpus.sentences.iter().map(|s| s.ids.as_slice()).collect();
    let scored = score_log_probs(params, &sentences, EVAL_BATCH)?;
    Ok(PerplexityReport {
        l1: collect_selector(corpus, vocab, &scored, PplSelector::MonoL1),
        l2: collect_selector(corpus, vocab, &scored, PplSelector::MonoL2),
        cs: collect_selector(corpus, vocab, &scored, PplSelector::Cs),
        csp: collect_selector(corpus, vocab, &scored, PplSelector::CsPoints),
        overall: collect_selector(corpus, vocab, &scored, PplSelector::Overall),
    })
}

fn collect_selector(
    corpus: &Corpus,
    vocab: &Vocabulary,
    scored: &[Vec<f64>],
    selector: PplSelector,
) -> Option<PerplexityEntry> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (sentence, lps) in corpus.sentences.iter().zip(scored) {
        match selector {
            PplSelector::Overall => {
                sum += lps.iter().sum::<f64>();
                count += lps.len();
            }
            PplSelector::MonoL1 if sentence.class == SentenceClass::MonoL1 => {
                sum += lps.iter().sum::<f64>();
                count += lps.len();
            }
            PplSelector::MonoL2 if sentence.class == SentenceClass::MonoL2 => {
                sum += lps.iter().sum::<f64>();
                count += lps.len();
            }
            PplSelector::Cs if sentence.class == SentenceClass::Cs => {
                sum += lps.iter().sum::<f64>();
                count += lps.len();
            }
            PplSelector::CsPoints if sentence.class == SentenceClass::Cs => {
                let tags: Vec<LangTag> = sentence.ids.iter().map(|&id| vocab.tag(id)).collect();
                for point in cs_points(&tags) {
                    sum += lps[point];
                    count += 1;
                }
            }
            _ => {}
        }
    }
    if count == 0 {
        None
    } else {
        Some(PerplexityEntry {
            ppl: (-sum / count as f64).exp(),
            tokens: count,
        })
    }
}
