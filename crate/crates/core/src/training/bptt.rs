//! Batched loss and gradient computation for the LSTM LM.
//!
//! Sentences in a batch are unrolled together; columns whose sentence has
//! already ended contribute nothing to the loss or the gradients. The
//! gradient path is full backprop through time plus the constraint gradient
//! on the output projection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{sigmoid, ModelParams, PartitionView};
use crate::regularizers::{constraint_loss, RegularizerConfig};

/// Gradient tensors mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed: DMatrix<f64>,
    pub w_gates: DMatrix<f64>,
    pub b_gates: DVector<f64>,
    pub w_out: DMatrix<f64>,
}

impl Gradients {
    pub fn zeros(vocab_size: usize, hidden: usize) -> Self {
        Gradients {
            embed: DMatrix::zeros(vocab_size, hidden),
            w_gates: DMatrix::zeros(4 * hidden, 2 * hidden),
            b_gates: DVector::zeros(4 * hidden),
            w_out: DMatrix::zeros(vocab_size, hidden),
        }
    }

    pub fn global_norm(&self) -> f64 {
        (self.embed.norm_squared()
            + self.w_gates.norm_squared()
            + self.b_gates.norm_squared()
            + self.w_out.norm_squared())
        .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.embed *= factor;
        self.w_gates *= factor;
        self.b_gates *= factor;
        self.w_out *= factor;
    }
}

/// Dropout on the LSTM output before the projection. Masks are a pure
/// function of the seed, so a loss evaluation and its gradient (or a finite
/// difference of two evaluations) see identical masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub seed: u64,
}

/// Loss components for one batch. `total = ce + weighted constraints`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub skld: f64,
    pub cd: f64,
    pub target_count: usize,
}

/// Mean per-token cross-entropy over the batch plus weighted constraint
/// terms, with the components reported separately.
pub fn total_loss(
    params: &ModelParams,
    batch: &[&[u32]],
    partition: &PartitionView,
    reg: &RegularizerConfig,
    dropout: Option<DropoutSpec>,
) -> Result<LossBreakdown> {
    let (loss, _) = run(params, batch, partition, reg, dropout, false)?;
    Ok(loss)
}

/// Loss plus gradients for every parameter tensor.
pub fn backward(
    params: &ModelParams,
    batch: &[&[u32]],
    partition: &PartitionView,
    reg: &RegularizerConfig,
    dropout: Option<DropoutSpec>,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = run(params, batch, partition, reg, dropout, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

struct StepCache {
    inputs: Vec<u32>,
    targets: Vec<Option<u32>>,
    gate_i: DMatrix<f64>,
    gate_f: DMatrix<f64>,
    gate_g: DMatrix<f64>,
    gate_o: DMatrix<f64>,
    tanh_c: DMatrix<f64>,
    /// concatenated [x; h_prev], kept for the gate-weight gradient
    xh: DMatrix<f64>,
    /// post-dropout hidden state fed to the projection
    hd: DMatrix<f64>,
    mask: Option<DMatrix<f64>>,
    /// softmax columns; inactive columns are left at zero
    probs: DMatrix<f64>,
}

fn run(
    params: &ModelParams,
    batch: &[&[u32]],
    partition: &PartitionView,
    reg: &RegularizerConfig,
    dropout: Option<DropoutSpec>,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let v = params.vocab_size();
    let z = params.hidden_size();
    let b = batch.len();
    for sentence in batch {
        for &id in *sentence {
            if id as usize >= v {
                return Err(Error::DimMismatch {
                    expected: format!("token ids < {v}"),
                    got: format!("{id}"),
                });
            }
        }
    }
    let mut rng = match dropout {
        Some(spec) => {
            if !(0.0..1.0).contains(&spec.rate) {
                return Err(Error::Config(format!(
                    "dropout must be in [0, 1), got {}",
                    spec.rate
                )));
            }
            if spec.rate > 0.0 {
                Some((spec.rate, ChaCha8Rng::seed_from_u64(spec.seed)))
            } else {
                None
            }
        }
        None => None,
    };

    let steps = batch.iter().map(|s| s.len()).max().unwrap() + 1;
    let target_count: usize = batch.iter().map(|s| s.len() + 1).sum();
    let inv_n = 1.0 / target_count as f64;

    let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
    let mut h_prev = DMatrix::zeros(z, b);
    let mut c_states: Vec<DMatrix<f64>> = Vec::with_capacity(steps + 1);
    c_states.push(DMatrix::zeros(z, b));
    let mut ce_sum = 0.0;

    for t in 0..steps {
        let inputs: Vec<u32> = batch
            .iter()
            .map(|s| {
                if t == 0 {
                    Vocabulary::BOS
                } else if t <= s.len() {
                    s[t - 1]
                } else {
                    Vocabulary::UNK // padding; masked out below
                }
            })
            .collect();
        let targets: Vec<Option<u32>> = batch
            .iter()
            .map(|s| {
                if t < s.len() {
                    Some(s[t])
                } else if t == s.len() {
                    Some(Vocabulary::EOS)
                } else {
                    None
                }
            })
            .collect();

        let mut xh = DMatrix::zeros(2 * z, b);
        for (col, &id) in inputs.iter().enumerate() {
            for k in 0..z {
                xh[(k, col)] = params.embed[(id as usize, k)];
                xh[(z + k, col)] = h_prev[(k, col)];
            }
        }
        let mut pre = DMatrix::zeros(4 * z, b);
        pre.gemm(1.0, &params.w_gates, &xh, 0.0);
        for col in 0..b {
            for k in 0..4 * z {
                pre[(k, col)] += params.b_gates[k];
            }
        }
        let mut gate_i = DMatrix::zeros(z, b);
        let mut gate_f = DMatrix::zeros(z, b);
        let mut gate_g = DMatrix::zeros(z, b);
        let mut gate_o = DMatrix::zeros(z, b);
        let mut c_new = DMatrix::zeros(z, b);
        let mut tanh_c = DMatrix::zeros(z, b);
        let mut h_new = DMatrix::zeros(z, b);
        let c_prev = &c_states[t];
        for col in 0..b {
            for k in 0..z {
                let i = sigmoid(pre[(k, col)]);
                let f = sigmoid(pre[(z + k, col)]);
                let g = pre[(2 * z + k, col)].tanh();
                let o = sigmoid(pre[(3 * z + k, col)]);
                let c = f * c_prev[(k, col)] + i * g;
                let tc = c.tanh();
                gate_i[(k, col)] = i;
                gate_f[(k, col)] = f;
                gate_g[(k, col)] = g;
                gate_o[(k, col)] = o;
                c_new[(k, col)] = c;
                tanh_c[(k, col)] = tc;
                h_new[(k, col)] = o * tc;
            }
        }
        let (hd, mask) = match rng.as_mut() {
            Some((rate, rng)) => {
                let keep = 1.0 - *rate;
                let mut mask = DMatrix::zeros(z, b);
                for col in 0..b {
                    for k in 0..z {
                        mask[(k, col)] = if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        };
                    }
                }
                (h_new.component_mul(&mask), Some(mask))
            }
            None => (h_new.clone(), None),
        };

        let mut logits = DMatrix::zeros(v, b);
        logits.gemm(1.0, &params.w_out, &hd, 0.0);
        let mut probs = DMatrix::zeros(v, b);
        for (col, target) in targets.iter().enumerate() {
            let Some(target) = target else { continue };
            let column = logits.column(col);
            let max = column.max();
            let mut sum = 0.0;
            for r in 0..v {
                let e = (column[r] - max).exp();
                probs[(r, col)] = e;
                sum += e;
            }
            let inv_sum = 1.0 / sum;
            for r in 0..v {
                probs[(r, col)] *= inv_sum;
            }
            ce_sum -= column[*target as usize] - max - sum.ln();
        }

        caches.push(StepCache {
            inputs,
            targets,
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            tanh_c,
            xh,
            hd,
            mask,
            probs,
        });
        h_prev = h_new;
        c_states.push(c_new);
    }

    let ce = ce_sum * inv_n;
    let constraint = if reg.is_none() {
        None
    } else {
        Some(constraint_loss(&params.w_out, partition, reg)?)
    };
    let (skld_val, cd_val, reg_loss) = constraint
        .as_ref()
        .map(|c| (c.skld, c.cd, c.loss))
        .unwrap_or((0.0, 0.0, 0.0));
    let breakdown = LossBreakdown {
        total: ce + reg_loss,
        ce,
        skld: skld_val,
        cd: cd_val,
        target_count,
    };
    if !want_grads {
        return Ok((breakdown, None));
    }

    let mut grads = Gradients::zeros(v, z);
    if let Some(c) = constraint {
        grads.w_out += c.grad;
    }
    let mut dh_next = DMatrix::zeros(z, b);
    let mut dc_next = DMatrix::zeros(z, b);
    for t in (0..steps).rev() {
        let cache = &caches[t];
        let c_prev = &c_states[t];

        // d loss / d logits = (p - onehot) / N on active columns
        let mut dlogits = cache.probs.clone();
        dlogits *= inv_n;
        for (col, target) in cache.targets.iter().enumerate() {
            if let Some(target) = target {
                dlogits[(*target as usize, col)] -= inv_n;
            }
        }
        let hd_t = cache.hd.transpose();
        grads.w_out.gemm(1.0, &dlogits, &hd_t, 1.0);
        let mut dhd = DMatrix::zeros(z, b);
        dhd.gemm_tr(1.0, &params.w_out, &dlogits, 0.0);

        let dh = match &cache.mask {
            Some(mask) => dhd.component_mul(mask) + &dh_next,
            None => dhd + &dh_next,
        };
        let mut da = DMatrix::zeros(4 * z, b);
        let mut dc = DMatrix::zeros(z, b);
        for col in 0..b {
            for k in 0..z {
                let o = cache.gate_o[(k, col)];
                let tc = cache.tanh_c[(k, col)];
                let dh_kc = dh[(k, col)];
                let dcv = dh_kc * o * (1.0 - tc * tc) + dc_next[(k, col)];
                dc[(k, col)] = dcv;
                let i = cache.gate_i[(k, col)];
                let f = cache.gate_f[(k, col)];
                let g = cache.gate_g[(k, col)];
                da[(k, col)] = dcv * g * i * (1.0 - i);
                da[(z + k, col)] = dcv * c_prev[(k, col)] * f * (1.0 - f);
                da[(2 * z + k, col)] = dcv * i * (1.0 - g * g);
                da[(3 * z + k, col)] = dh_kc * tc * o * (1.0 - o);
            }
        }
        let xh_t = cache.xh.transpose();
        grads.w_gates.gemm(1.0, &da, &xh_t, 1.0);
        for col in 0..b {
            for k in 0..4 * z {
                grads.b_gates[k] += da[(k, col)];
            }
        }
        let mut dxh = DMatrix::zeros(2 * z, b);
        dxh.gemm_tr(1.0, &params.w_gates, &da, 0.0);
        for (col, sentence) in batch.iter().enumerate() {
            // skip padded columns; their da is zero anyway
            if t <= sentence.len() {
                let id = cache.inputs[col] as usize;
                for k in 0..z {
                    grads.embed[(id, k)] += dxh[(k, col)];
                }
            }
        }
        for col in 0..b {
            for k in 0..z {
                dh_next[(k, col)] = dxh[(z + k, col)];
                dc_next[(k, col)] = dc[(k, col)] * cache.gate_f[(k, col)];
            }
        }
    }
    Ok((breakdown, Some(grads)))
}
