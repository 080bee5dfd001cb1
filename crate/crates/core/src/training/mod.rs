//! End-to-end training: cross-entropy plus constraint loss, BPTT, Adam,
//! optional post-step unit-norm projection, early stopping, multi-seed runs.

pub mod bptt;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::vocab::Vocabulary;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{perplexity, PplSelector};
use crate::model::{
    checkpoint, init_params, normalize_rows, partition_output, ModelParams, PartitionView,
};
use crate::regularizers::RegularizerConfig;
use bptt::{backward, DropoutSpec, Gradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden size z, shared by the input projection and the LSTM cells.
    pub hidden: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub reg: RegularizerConfig,
    /// Project non-special output-projection rows to unit norm after every
    /// optimizer step.
    pub normalize: bool,
    /// Global-norm gradient clip threshold.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 300,
            learning_rate: 1e-3,
            dropout: 0.3,
            patience: 10,
            max_epochs: 200,
            batch_size: 32,
            seeds: vec![1, 2, 3],
            reg: RegularizerConfig::none(),
            normalize: false,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 1 {
            return Err(Error::Config("hidden size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config(
                "max_epochs and batch_size must be >= 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must not be empty".into()));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    /// Short content hash of the configuration; names run directories.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Adam accumulators; one slot per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(vocab_size: usize, hidden: usize) -> Self {
        AdamState {
            m: Gradients::zeros(vocab_size, hidden),
            v: Gradients::zeros(vocab_size, hidden),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.embed.shape() != params.embed.shape()
        || grads.w_gates.shape() != params.w_gates.shape()
        || grads.b_gates.len() != params.b_gates.len()
        || grads.w_out.shape() != params.w_out.shape()
    {
        return Err(Error::DimMismatch {
            expected: "gradient shapes matching parameters".into(),
            got: "mismatched gradient tensors".into(),
        });
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let mut update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    update(
        params.embed.as_mut_slice(),
        grads.embed.as_slice(),
        state.m.embed.as_mut_slice(),
        state.v.embed.as_mut_slice(),
    );
    update(
        params.w_gates.as_mut_slice(),
        grads.w_gates.as_slice(),
        state.m.w_gates.as_mut_slice(),
        state.v.w_gates.as_mut_slice(),
    );
    update(
        params.b_gates.as_mut_slice(),
        grads.b_gates.as_slice(),
        state.m.b_gates.as_mut_slice(),
        state.v.b_gates.as_mut_slice(),
    );
    update(
        params.w_out.as_mut_slice(),
        grads.w_out.as_slice(),
        state.m.w_out.as_mut_slice(),
        state.v.w_out.as_mut_slice(),
    );
    Ok(())
}

/// Projects the non-special output-projection rows back to unit norm.
pub fn project_normalize(params: &mut ModelParams, partition: &PartitionView) -> Result<()> {
    let rows: Vec<usize> = partition.language_rows().collect();
    normalize_rows(&mut params.w_out, &rows)
}

/// Largest deviation of the selected row norms from 1.
pub fn max_unit_norm_deviation(params: &ModelParams, partition: &PartitionView) -> f64 {
    partition
        .language_rows()
        .map(|r| (params.w_out.row(r).norm() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Tracks the best validation value and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_improvement: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            StopDecision::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Per-epoch log record. `seconds` is wall clock and is excluded from any
/// deterministic summary output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub skld: f64,
    pub cd: f64,
    pub total: f64,
    pub valid_ppl: f64,
    pub seconds: f64,
    pub clipped_steps: usize,
    /// Max post-projection deviation of row norms from 1, when normalizing.
    pub max_norm_dev: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_ppl: f64,
}

/// Outcome of training one seed: the best-validation parameters and the log.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Trains one model per seed and returns the best-validation parameters and
/// logs, in seed order. When `artifact_root` is given, each seed writes a run
/// directory `<hash>-s<seed>` with its config, per-epoch JSONL log, best
/// checkpoint, and vocabulary.
pub fn train(
    train_corpus: &Corpus,
    valid_corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    artifact_root: Option<&Path>,
) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    if train_corpus.is_empty() || valid_corpus.is_empty() {
        return Err(Error::Config(
            "training and validation corpora must be non-empty".into(),
        ));
    }
    let partition = partition_output(vocab)?;
    let runs: Vec<Result<SeedRun>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_seed(train_corpus, valid_corpus, vocab, cfg, &partition, seed, artifact_root))
        .collect();
    runs.into_iter().collect()
}

fn train_seed(
    train_corpus: &Corpus,
    valid_corpus: &Corpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    partition: &PartitionView,
    seed: u64,
    artifact_root: Option<&Path>,
) -> Result<SeedRun> {
    let run_dir = match artifact_root {
        Some(root) => {
            let dir = root.join(format!("{}-s{}", cfg.hash(), seed));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let cfg_json = serde_json::to_string_pretty(cfg)
                .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
            std::fs::write(dir.join("config.json"), cfg_json)
                .map_err(|e| Error::io(dir.join("config.json"), e))?;
            vocab.save_json(&dir.join("vocab.json"))?;
            // fresh log for this run
            File::create(dir.join("log.jsonl")).map_err(|e| Error::io(dir.join("log.jsonl"), e))?;
            Some(dir)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(vocab.len(), cfg.hidden, seed)?;
    if cfg.normalize {
        project_normalize(&mut params, partition)?;
    }
    let mut adam = AdamState::new(vocab.len(), cfg.hidden);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_corpus.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0); // ce, skld, cd, total
        let mut steps = 0usize;
        let mut clipped_steps = 0usize;
        let mut max_norm_dev: Option<f64> = None;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[u32]> = chunk
                .iter()
                .map(|&i| train_corpus.sentences[i].ids.as_slice())
                .collect();
            let dropout = if cfg.dropout > 0.0 {
                Some(DropoutSpec {
                    rate: cfg.dropout,
                    seed: rng.random::<u64>(),
                })
            } else {
                None
            };
            let (loss, mut grads) = backward(&params, &batch, partition, &cfg.reg, dropout)?;
            let norm = grads.global_norm();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
                clipped_steps += 1;
            }
            adam_step(&mut params, &grads, &mut adam, cfg.learning_rate)?;
            if cfg.normalize {
                project_normalize(&mut params, partition)?;
                let dev = max_unit_norm_deviation(&params, partition);
                max_norm_dev = Some(max_norm_dev.map_or(dev, |d| d.max(dev)));
            }
            sums.0 += loss.ce;
            sums.1 += loss.skld;
            sums.2 += loss.cd;
            sums.3 += loss.total;
            steps += 1;
        }
        let valid_ppl = perplexity(&params, valid_corpus, vocab, PplSelector::Overall)?
            .ok_or_else(|| Error::Config("validation corpus has no targets".into()))?
            .ppl;
        let record = EpochRecord {
            epoch,
            ce: sums.0 / steps as f64,
            skld: sums.1 / steps as f64,
            cd: sums.2 / steps as f64,
            total: sums.3 / steps as f64,
            valid_ppl,
            seconds: started.elapsed().as_secs_f64(),
            clipped_steps,
            max_norm_dev,
        };
        if let Some(dir) = &run_dir {
            append_jsonl(&dir.join("log.jsonl"), &record)?;
        }
        log.epochs.push(record);
        match stopper.observe(epoch, valid_ppl) {
            StopDecision::Improved => {
                best_params = params.clone();
                if let Some(dir) = &run_dir {
                    checkpoint::save(&dir.join("best.ckpt"), &best_params, vocab)?;
                }
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let (best_epoch, best_valid_ppl) = stopper.best();
    log.best_epoch = best_epoch;
    log.best_valid_ppl = best_valid_ppl;
    Ok(SeedRun {
        seed,
        params: best_params,
        log,
    })
}

fn append_jsonl<T: Serialize>(path: &PathBuf, record: &T) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record)
        .map_err(|e| Error::Config(format!("log serialization failed: {e}")))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}
