//! Single-layer LSTM language model with a partitioned, optionally
//! unit-normalized output projection.
//!
//! The output projection `W` (V x z, no bias) maps the hidden state to
//! vocabulary logits; row `j` of `W` is the output embedding of token `j`.

pub mod checkpoint;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::vocab::{LangTag, Vocabulary};
use crate::error::{Error, Result};

const INIT_SCALE: f64 = 0.08;

/// All trainable parameters. Gate rows in `w_gates`/`b_gates` are stacked in
/// the order input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Input embedding, V x z (row per token).
    pub embed: DMatrix<f64>,
    /// Gate weights over the concatenated [x; h], 4z x 2z.
    pub w_gates: DMatrix<f64>,
    /// Gate biases, 4z.
    pub b_gates: DVector<f64>,
    /// Output projection W, V x z (row per token, no bias).
    pub w_out: DMatrix<f64>,
}

impl ModelParams {
    pub fn vocab_size(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_out.ncols()
    }
}

/// LSTM recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl LstmState {
    /// Initial state: both vectors zero.
    pub fn zero(hidden: usize) -> Self {
        LstmState {
            h: DVector::zeros(hidden),
            c: DVector::zeros(hidden),
        }
    }
}

/// Row index sets of the output projection, split by language. Special
/// tokens belong to neither block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionView {
    pub l1_rows: Vec<usize>,
    pub l2_rows: Vec<usize>,
    pub special_rows: Vec<usize>,
}

impl PartitionView {
    /// All language rows (the rows subject to normalization / constraints).
    pub fn language_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.l1_rows.iter().chain(self.l2_rows.iter()).copied()
    }
}

/// Uniform init in [-0.08, 0.08] for all weights; biases zero except the
/// forget gate, which starts at 1. Deterministic given the seed.
pub fn init_params(vocab_size: usize, hidden: usize, seed: u64) -> Result<ModelParams> {
    if vocab_size < 3 || hidden < 1 {
        return Err(Error::Config(format!(
            "model needs V >= 3 and z >= 1, got V={vocab_size}, z={hidden}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-INIT_SCALE..INIT_SCALE))
    };
    let embed = uniform(vocab_size, hidden);
    let w_gates = uniform(4 * hidden, 2 * hidden);
    let w_out = uniform(vocab_size, hidden);
    let mut b_gates = DVector::zeros(4 * hidden);
    for i in hidden..2 * hidden {
        b_gates[i] = 1.0;
    }
    Ok(ModelParams {
        embed,
        w_gates,
        b_gates,
        w_out,
    })
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM recurrence step for a single embedded input.
pub fn lstm_step(params: &ModelParams, x: &DVector<f64>, state: &LstmState) -> Result<LstmState> {
    let z = params.hidden_size();
    if x.len() != z || state.h.len() != z || state.c.len() != z {
        return Err(Error::DimMismatch {
            expected: format!("vectors of length {z}"),
            got: format!("x={}, h={}, c={}", x.len(), state.h.len(), state.c.len()),
        });
    }
    let mut xh = DVector::zeros(2 * z);
    xh.rows_mut(0, z).copy_from(x);
    xh.rows_mut(z, z).copy_from(&state.h);
    let a = &params.w_gates * xh + &params.b_gates;
    let mut h = DVector::zeros(z);
    let mut c = DVector::zeros(z);
    for k in 0..z {
        let i = sigmoid(a[k]);
        let f = sigmoid(a[z + k]);
        let g = a[2 * z + k].tanh();
        let o = sigmoid(a[3 * z + k]);
        c[k] = f * state.c[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    Ok(LstmState { h, c })
}

/// How [`forward`] treats dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    /// Deterministic; no dropout.
    Eval,
    /// Inverted dropout on the LSTM output, before the projection.
    Train { dropout: f64, seed: u64 },
}

/// Runs the model over `input_ids` and returns one probability vector per
/// position: entry `t` is the next-token distribution after consuming
/// `input_ids[..=t]`. Callers prepend bos themselves.
pub fn forward(
    params: &ModelParams,
    input_ids: &[u32],
    mode: ForwardMode,
) -> Result<Vec<DVector<f64>>> {
    if input_ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let v = params.vocab_size();
    let z = params.hidden_size();
    for &id in input_ids {
        if id as usize >= v {
            return Err(Error::DimMismatch {
                expected: format!("token ids < {v}"),
                got: format!("{id}"),
            });
        }
    }
    let (dropout, mut rng) = match mode {
        ForwardMode::Eval => (0.0, None),
        ForwardMode::Train { dropout, seed } => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::Config(format!(
                    "dropout must be in [0, 1), got {dropout}"
                )));
            }
            (dropout, Some(ChaCha8Rng::seed_from_u64(seed)))
        }
    };
    let mut state = LstmState::zero(z);
    let mut outputs = Vec::with_capacity(input_ids.len());
    for &id in input_ids {
        let x = params.embed.row(id as usize).transpose();
        state = lstm_step(params, &x, &state)?;
        let mut h = state.h.clone();
        if let Some(rng) = rng.as_mut() {
            if dropout > 0.0 {
                let keep = 1.0 - dropout;
                for k in 0..z {
                    h[k] = if rng.random::<f64>() < keep {
                        h[k] / keep
                    } else {
                        0.0
                    };
                }
            }
        }
        let logits = &params.w_out * h;
        outputs.push(softmax(&logits));
    }
    Ok(outputs)
}

pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut out = logits.map(|x| (x - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// Per-target log probabilities of a sentence: inputs are bos + tokens,
/// targets are tokens + eos. The sum is the sentence log-likelihood.
pub fn log_prob_sequence(
    params: &ModelParams,
    sentence: &[u32],
    vocab: &Vocabulary,
) -> Result<Vec<f64>> {
    let mut inputs = Vec::with_capacity(sentence.len() + 1);
    inputs.push(Vocabulary::BOS);
    inputs.extend_from_slice(sentence);
    let probs = forward(params, &inputs, ForwardMode::Eval)?;
    let mut targets = Vec::with_capacity(sentence.len() + 1);
    targets.extend_from_slice(sentence);
    targets.push(Vocabulary::EOS);
    Ok(probs
        .iter()
        .zip(&targets)
        .map(|(y, &t)| y[t as usize].ln())
        .collect())
}

/// Rescales the selected rows of `w` to unit l2 norm in place. Idempotent;
/// a zero row is an error.
pub fn normalize_rows(w: &mut DMatrix<f64>, rows: &[usize]) -> Result<()> {
    for &r in rows {
        let norm = w.row(r).norm();
        if norm == 0.0 {
            return Err(Error::ZeroRow { row: r });
        }
        let mut row = w.row_mut(r);
        row /= norm;
    }
    Ok(())
}

/// Splits output-projection rows by vocabulary language tag. Both languages
/// must be non-empty for the partition (and the constraints on it) to be
/// meaningful.
pub fn partition_output(vocab: &Vocabulary) -> Result<PartitionView> {
    let mut view = PartitionView {
        l1_rows: Vec::new(),
        l2_rows: Vec::new(),
        special_rows: Vec::new(),
    };
    for id in 0..vocab.len() as u32 {
        match vocab.tag(id) {
            LangTag::L1 => view.l1_rows.push(id as usize),
            LangTag::L2 => view.l2_rows.push(id as usize),
            LangTag::Special => view.special_rows.push(id as usize),
        }
    }
    if view.l1_rows.is_empty() {
        return Err(Error::EmptyLanguage("L1"));
    }
    if view.l2_rows.is_empty() {
        return Err(Error::EmptyLanguage("L2"));
    }
    Ok(view)
}

/// Copies the given rows of `w` into a dense block (row order preserved).
pub fn gather_rows(w: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut block = DMatrix::zeros(rows.len(), w.ncols());
    for (i, &r) in rows.iter().enumerate() {
        block.row_mut(i).copy_from(&w.row(r));
    }
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocabulary;
    use approx::assert_abs_diff_eq;

    fn tiny_vocab(l1: &[&str], l2: &[&str]) -> Vocabulary {
        let sentence: Vec<(String, LangTag)> = l1
            .iter()
            .map(|t| (t.to_string(), LangTag::L1))
            .chain(l2.iter().map(|t| (t.to_string(), LangTag::L2)))
            .collect();
        build_vocabulary(&[sentence], 1).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params(10, 4, 3).unwrap();
        let b = init_params(10, 4, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.embed.shape(), (10, 4));
        assert_eq!(a.w_out.shape(), (10, 4));
        assert_eq!(a.w_gates.shape(), (16, 8));
        assert_eq!(a.b_gates.len(), 16);
        let c = init_params(10, 4, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let params = init_params(5, 3, 0).unwrap();
        for k in 0..3 {
            assert_eq!(params.b_gates[k], 0.0); // input gate
            assert_eq!(params.b_gates[3 + k], 1.0); // forget gate
            assert_eq!(params.b_gates[6 + k], 0.0); // cell candidate
            assert_eq!(params.b_gates[9 + k], 0.0); // output gate
        }
    }

    #[test]
    fn zero_params_give_zero_hidden() {
        let z = 3;
        let params = ModelParams {
            embed: DMatrix::zeros(4, z),
            w_gates: DMatrix::zeros(4 * z, 2 * z),
            b_gates: DVector::zeros(4 * z),
            w_out: DMatrix::zeros(4, z),
        };
        let state = lstm_step(&params, &DVector::zeros(z), &LstmState::zero(z)).unwrap();
        assert_eq!(state.h, DVector::zeros(z));
        assert_eq!(state.c, DVector::zeros(z));
    }

    /// Plain scalar re-implementation of one LSTM step, kept deliberately
    /// separate from the production path.
    fn scalar_step_oracle(
        params: &ModelParams,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let z = x.len();
        let mut h = vec![0.0; z];
        let mut c = vec![0.0; z];
        for k in 0..z {
            let mut ai = params.b_gates[k];
            let mut af = params.b_gates[z + k];
            let mut ag = params.b_gates[2 * z + k];
            let mut ao = params.b_gates[3 * z + k];
            for j in 0..z {
                ai += params.w_gates[(k, j)] * x[j] + params.w_gates[(k, z + j)] * h_prev[j];
                af += params.w_gates[(z + k, j)] * x[j]
                    + params.w_gates[(z + k, z + j)] * h_prev[j];
                ag += params.w_gates[(2 * z + k, j)] * x[j]
                    + params.w_gates[(2 * z + k, z + j)] * h_prev[j];
                ao += params.w_gates[(3 * z + k, j)] * x[j]
                    + params.w_gates[(3 * z + k, z + j)] * h_prev[j];
            }
            let i = 1.0 / (1.0 + (-ai).exp());
            let f = 1.0 / (1.0 + (-af).exp());
            let g = ag.tanh();
            let o = 1.0 / (1.0 + (-ao).exp());
            c[k] = f * c_prev[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        (h, c)
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let params = init_params(4, 2, 9).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let state = LstmState {
            h: DVector::from_vec(vec![0.1, 0.2]),
            c: DVector::from_vec(vec![-0.4, 0.5]),
        };
        let next = lstm_step(&params, &x, &state).unwrap();
        let (h, c) = scalar_step_oracle(
            &params,
            x.as_slice(),
            state.h.as_slice(),
            state.c.as_slice(),
        );
        for k in 0..2 {
            assert_abs_diff_eq!(next.h[k], h[k], epsilon = 1e-14);
            assert_abs_diff_eq!(next.c[k], c[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        let z = 2;
        let mut params = ModelParams {
            embed: DMatrix::zeros(4, z),
            w_gates: DMatrix::zeros(4 * z, 2 * z),
            b_gates: DVector::zeros(4 * z),
            w_out: DMatrix::zeros(4, z),
        };
        for k in 0..z {
            params.b_gates[z + k] = 40.0; // forget gate ~ 1
            params.b_gates[k] = -40.0; // input gate ~ 0
        }
        let state = LstmState {
            h: DVector::zeros(z),
            c: DVector::from_vec(vec![0.8, -0.3]),
        };
        let next = lstm_step(&params, &DVector::zeros(z), &state).unwrap();
        for k in 0..z {
            assert_abs_diff_eq!(next.c[k], state.c[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn step_rejects_dimension_mismatch() {
        let params = init_params(4, 3, 0).unwrap();
        let err = lstm_step(&params, &DVector::zeros(2), &LstmState::zero(3)).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { .. }));
    }

    #[test]
    fn zero_projection_gives_uniform_distributions() {
        let mut params = init_params(6, 3, 1).unwrap();
        params.w_out.fill(0.0);
        let probs = forward(&params, &[0, 3, 5], ForwardMode::Eval).unwrap();
        for y in &probs {
            for k in 0..6 {
                assert_abs_diff_eq!(y[k], 1.0 / 6.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_normalized() {
        let params = init_params(7, 4, 5).unwrap();
        let a = forward(&params, &[1, 2, 3, 4], ForwardMode::Eval).unwrap();
        let b = forward(&params, &[1, 2, 3, 4], ForwardMode::Eval).unwrap();
        assert_eq!(a, b);
        for y in &a {
            assert_abs_diff_eq!(y.sum(), 1.0, epsilon = 1e-9);
        }
    }

    /// Independent dense-matrix oracle: explicit scalar loops for the whole
    /// unrolled sequence, no shared code with `forward`.
    #[test]
    fn forward_matches_dense_oracle() {
        let v = 5;
        let z = 3;
        let params = init_params(v, z, 13).unwrap();
        let ids = [1u32, 4, 0, 2];
        let got = forward(&params, &ids, ForwardMode::Eval).unwrap();

        let mut h_prev = vec![0.0; z];
        let mut c_prev = vec![0.0; z];
        for (t, &id) in ids.iter().enumerate() {
            let x: Vec<f64> = (0..z).map(|j| params.embed[(id as usize, j)]).collect();
            let (h, c) = scalar_step_oracle(&params, &x, &h_prev, &c_prev);
            let logits: Vec<f64> = (0..v)
                .map(|r| (0..z).map(|j| params.w_out[(r, j)] * h[j]).sum())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for r in 0..v {
                assert_abs_diff_eq!(got[t][r], exps[r] / sum, epsilon = 1e-12);
            }
            h_prev = h;
            c_prev = c;
        }
    }

    #[test]
    fn forward_rejects_empty_sequence() {
        let params = init_params(4, 2, 0).unwrap();
        assert!(matches!(
            forward(&params, &[], ForwardMode::Eval).unwrap_err(),
            Error::EmptySequence
        ));
    }

    #[test]
    fn train_mode_dropout_is_seed_deterministic() {
        let params = init_params(6, 4, 2).unwrap();
        let mode = ForwardMode::Train {
            dropout: 0.5,
            seed: 77,
        };
        let a = forward(&params, &[1, 2, 3], mode).unwrap();
        let b = forward(&params, &[1, 2, 3], mode).unwrap();
        assert_eq!(a, b);
        let c = forward(
            &params,
            &[1, 2, 3],
            ForwardMode::Train {
                dropout: 0.5,
                seed: 78,
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_model_log_probs_are_log_v() {
        let vocab = tiny_vocab(&["a", "b"], &["x", "y"]);
        let v = vocab.len();
        let mut params = init_params(v, 3, 1).unwrap();
        params.w_out.fill(0.0);
        let ids = [vocab.id_of("a").unwrap(), vocab.id_of("x").unwrap()];
        let lps = log_prob_sequence(&params, &ids, &vocab).unwrap();
        assert_eq!(lps.len(), 3); // two tokens + eos
        for lp in lps {
            assert_abs_diff_eq!(lp, -(v as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn log_prob_matches_forward_indexing() {
        let vocab = tiny_vocab(&["a", "b", "c"], &["x"]);
        let params = init_params(vocab.len(), 3, 4).unwrap();
        let ids = [vocab.id_of("b").unwrap(), vocab.id_of("x").unwrap()];
        let lps = log_prob_sequence(&params, &ids, &vocab).unwrap();
        let mut inputs = vec![Vocabulary::BOS];
        inputs.extend_from_slice(&ids);
        let probs = forward(&params, &inputs, ForwardMode::Eval).unwrap();
        assert_eq!(lps[0], probs[0][ids[0] as usize].ln());
        assert_eq!(lps[1], probs[1][ids[1] as usize].ln());
        assert_eq!(lps[2], probs[2][Vocabulary::EOS as usize].ln());
    }

    #[test]
    fn normalize_rows_three_four_five() {
        let mut w = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 1.0, 0.0]);
        normalize_rows(&mut w, &[0, 1]).unwrap();
        assert_abs_diff_eq!(w[(0, 0)], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(w[(0, 1)], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(w[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_rows_is_idempotent() {
        let mut w = DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 + 0.5);
        let rows = [0usize, 1, 2, 3, 4];
        normalize_rows(&mut w, &rows).unwrap();
        let once = w.clone();
        normalize_rows(&mut w, &rows).unwrap();
        for (a, b) in w.iter().zip(once.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_rows_rejects_zero_row() {
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 0)] = 1.0;
        let err = normalize_rows(&mut w, &[0, 1]).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { row: 1 }));
    }

    #[test]
    fn partition_counts_and_coverage() {
        let vocab = tiny_vocab(&["a", "b", "c"], &["x", "y"]);
        let view = partition_output(&vocab).unwrap();
        assert_eq!(view.l1_rows.len(), 3);
        assert_eq!(view.l2_rows.len(), 2);
        assert_eq!(view.special_rows.len(), 3);
        let mut all: Vec<usize> = view
            .l1_rows
            .iter()
            .chain(&view.l2_rows)
            .chain(&view.special_rows)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..vocab.len()).collect::<Vec<_>>());
    }

    #[test]
    fn partition_rejects_missing_language() {
        let sentence = vec![("a".to_string(), LangTag::L1)];
        let vocab = build_vocabulary(&[sentence], 1).unwrap();
        assert!(matches!(
            partition_output(&vocab).unwrap_err(),
            Error::EmptyLanguage("L2")
        ));
    }

    #[test]
    fn gathered_rows_alias_values() {
        let vocab = tiny_vocab(&["a", "b"], &["x"]);
        let params = init_params(vocab.len(), 2, 8).unwrap();
        let view = partition_output(&vocab).unwrap();
        let block = gather_rows(&params.w_out, &view.l1_rows);
        for (i, &r) in view.l1_rows.iter().enumerate() {
            assert_eq!(block.row(i), params.w_out.row(r));
        }
    }

    /// Proportional rows get equal probability once normalized, for any
    /// hidden state.
    #[test]
    fn normalization_equalizes_proportional_rows() {
        let v = 9;
        let z = 5;
        let mut params = init_params(v, z, 21).unwrap();
        let row_k = params.w_out.row(4).clone_owned();
        params.w_out.set_row(2, &(row_k * 2.5));
        let rows: Vec<usize> = (0..v).collect();
        normalize_rows(&mut params.w_out, &rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let h = DVector::from_fn(z, |_, _| rng.random_range(-3.0..3.0));
            let y = softmax(&(&params.w_out * &h));
            assert!(
                (y[2] - y[4]).abs() < 1e-9,
                "probabilities differ: {} vs {}",
                y[2],
                y[4]
            );
        }
    }

    /// Relabeling equivariance: permuting vocabulary ids together with all
    /// id-indexed parameter rows permutes the outputs identically.
    #[test]
    fn forward_is_permutation_equivariant() {
        let v = 6;
        let z = 3;
        let params = init_params(v, z, 31).unwrap();
        let perm: Vec<usize> = vec![2, 0, 5, 1, 4, 3]; // new id of old id i
        let mut permuted = params.clone();
        for old in 0..v {
            permuted.embed.set_row(perm[old], &params.embed.row(old));
            permuted.w_out.set_row(perm[old], &params.w_out.row(old));
        }
        let ids = [0u32, 3, 1, 5];
        let mapped: Vec<u32> = ids.iter().map(|&i| perm[i as usize] as u32).collect();
        let base = forward(&params, &ids, ForwardMode::Eval).unwrap();
        let moved = forward(&permuted, &mapped, ForwardMode::Eval).unwrap();
        for (yb, ym) in base.iter().zip(&moved) {
            for old in 0..v {
                assert_abs_diff_eq!(yb[old], ym[perm[old]], epsilon = 1e-12);
            }
        }
    }
}
