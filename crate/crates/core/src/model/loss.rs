use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::encoder::{encode_raw, normalize_backward};
use super::{Gradient, ModelError, ModelParams};
use crate::linalg::{self, accum_rows, accum_xt_dy, dy_wt, matmul};
use crate::tokenize::TokenSequence;

/// How a negative tuple (`interactive = -1`) enters the pair loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeLoss {
    /// `-I·ln σ(s)` with `I = -1`, i.e. `+ln σ(s)`.
    #[default]
    Literal,
    /// `-ln(1 − σ(s)) = -ln σ(−s)` for negatives; positives unchanged.
    Complement,
}

/// A tokenized training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub a: TokenSequence,
    pub b: TokenSequence,
    pub interactive: f64,
}

/// Loss and `d loss / d s` for a dot product `s`.
fn pair_terms(s: f64, interactive: f64, negative: NegativeLoss) -> (f64, f64) {
    if interactive < 0.0 && negative == NegativeLoss::Complement {
        // -ln σ(−s), derivative σ(s)
        return (-linalg::log_sigmoid(-s), linalg::sigmoid(s));
    }
    (
        -interactive * linalg::log_sigmoid(s),
        -interactive * (1.0 - linalg::sigmoid(s)),
    )
}

/// `-I · ln σ(f(a)·f(b))` for one tuple.
pub fn pair_loss(
    params: &ModelParams,
    a: &TokenSequence,
    b: &TokenSequence,
    interactive: f64,
    negative: NegativeLoss,
) -> Result<f64, ModelError> {
    if interactive == 0.0 {
        return Ok(0.0);
    }
    let ea = encode_raw(params, a)?.embedding();
    let eb = encode_raw(params, b)?.embedding();
    Ok(pair_terms(ea.dot(&eb), interactive, negative).0)
}

fn pair_loss_and_grad(
    params: &ModelParams,
    ex: &PairExample,
    negative: NegativeLoss,
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    let ta = encode_raw(params, &ex.a)?;
    let tb = encode_raw(params, &ex.b)?;
    let ea = ta.embedding();
    let eb = tb.embedding();
    let (loss, dl_ds) = pair_terms(ea.dot(&eb), ex.interactive, negative);
    if !loss.is_finite() {
        return Ok(loss);
    }
    let d_ea: Vec<f64> = eb.as_slice().iter().map(|v| v * dl_ds).collect();
    let d_eb: Vec<f64> = ea.as_slice().iter().map(|v| v * dl_ds).collect();
    ta.backward(params, &normalize_backward(ta.raw(), &d_ea), grad);
    tb.backward(params, &normalize_backward(tb.raw(), &d_eb), grad);
    Ok(loss)
}

/// Summed pair loss over a batch and its exact gradient.
///
/// Each sample's gradient is formed in a scratch buffer and then added to
/// the total, so the result is a plain sum of per-sample gradients.
pub fn batch_loss_and_grad(
    params: &ModelParams,
    batch: &[PairExample],
    negative: NegativeLoss,
) -> Result<(f64, Gradient), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = params.zero_gradient();
    let mut scratch = params.zero_gradient();
    let mut loss = 0.0;
    for (index, ex) in batch.iter().enumerate() {
        if ex.interactive == 0.0 {
            continue;
        }
        scratch.fill(0.0);
        let l = pair_loss_and_grad(params, ex, negative, &mut scratch)?;
        if !l.is_finite() {
            return Err(ModelError::NonFiniteLoss { index, loss: l });
        }
        loss += l;
        for (t, s) in total.iter_mut().zip(&scratch) {
            *t += s;
        }
    }
    Ok((loss, total))
}

/// Classifier logits and the penultimate representation they were computed
/// from (the unnormalized encoder output).
pub fn classify_logits(
    params: &ModelParams,
    tokens: &TokenSequence,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let (w, b) = params.layout().cls.ok_or(ModelError::MissingHead)?;
    let trace = encode_raw(params, tokens)?;
    let penultimate = trace.raw().to_vec();
    let mut logits = vec![0.0; w.cols];
    matmul(&penultimate, params.tensor(w), Some(params.tensor(b)), 1, w.rows, w.cols, &mut logits);
    Ok((logits, penultimate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassExample {
    pub tokens: TokenSequence,
    pub label: usize,
}

/// Summed cross-entropy over a batch and its gradient. With
/// `freeze_encoder`, only the classification layer receives gradient.
pub fn classification_loss_and_grad(
    params: &ModelParams,
    batch: &[ClassExample],
    freeze_encoder: bool,
) -> Result<(f64, Gradient), ModelError> {
    let (w, b) = params.layout().cls.ok_or(ModelError::MissingHead)?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let classes = w.cols;
    let o = w.rows;
    let mut total = params.zero_gradient();
    let mut scratch = params.zero_gradient();
    let mut loss = 0.0;
    for (index, ex) in batch.iter().enumerate() {
        if ex.label >= classes {
            return Err(ModelError::LabelOutOfRange {
                label: ex.label,
                num_classes: classes,
            });
        }
        let trace = encode_raw(params, &ex.tokens)?;
        let z = trace.raw();
        let mut probs = vec![0.0; classes];
        matmul(z, params.tensor(w), Some(params.tensor(b)), 1, o, classes, &mut probs);
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = max + libm::log(probs.iter().map(|l| libm::exp(l - max)).sum::<f64>());
        let l = log_sum - probs[ex.label];
        if !l.is_finite() {
            return Err(ModelError::NonFiniteLoss { index, loss: l });
        }
        loss += l;
        linalg::softmax(&mut probs);
        probs[ex.label] -= 1.0;

        scratch.fill(0.0);
        accum_xt_dy(z, &probs, 1, o, classes, &mut scratch[w.range()]);
        accum_rows(&probs, 1, classes, &mut scratch[b.range()]);
        if !freeze_encoder {
            let mut dz = vec![0.0; o];
            dy_wt(&probs, params.tensor(w), 1, o, classes, &mut dz, false);
            trace.backward(params, &dz, &mut scratch);
        }
        for (t, s) in total.iter_mut().zip(&scratch) {
            *t += s;
        }
    }
    Ok((loss, total))
}
