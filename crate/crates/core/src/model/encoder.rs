use alloc::vec;
use alloc::vec::Vec;

use super::params::{LayerSpans, Span};
use super::{EmbeddingVector, ModelError, ModelParams};
use crate::linalg::{self, accum_rows, accum_xt_dy, dy_wt, matmul};
use crate::tokenize::TokenSequence;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct LnTrace {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], n: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, LnTrace) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[i] = r;
        for c in 0..d {
            let h = (row[c] - mean) * r;
            xhat[i * d + c] = h;
            y[i * d + c] = h * gain[c] + bias[c];
        }
    }
    (y, LnTrace { xhat, rstd })
}

/// Accumulates gain/bias gradients and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    trace: &LnTrace,
    gain: &[f64],
    n: usize,
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &trace.xhat[i * d..(i + 1) * d];
        for c in 0..d {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = linalg::dot(&dxhat, xh) / d as f64;
        let r = trace.rstd[i];
        for c in 0..d {
            dx[i * d + c] += r * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTrace {
    ln1: LnTrace,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × n × n` attention weights.
    probs: Vec<f64>,
    /// Concatenated head outputs before the output projection.
    attn: Vec<f64>,
    ln2: LnTrace,
    b: Vec<f64>,
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    layers: Vec<LayerTrace>,
    lnf: LnTrace,
    pooled: Vec<f64>,
    pool_out: Vec<f64>,
    ff1_pre: Vec<f64>,
    ff1_act: Vec<f64>,
    raw: Vec<f64>,
}

impl EncoderTrace {
    /// The unnormalized output of the second feed-forward layer.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Number of unmasked positions that took part in the pass.
    pub fn active(&self) -> usize {
        self.tokens.len()
    }

    pub fn embedding(&self) -> EmbeddingVector {
        EmbeddingVector::normalized(self.raw.clone())
    }

    /// Backpropagates `d_raw` (gradient w.r.t. the raw output) and adds the
    /// parameter gradient into `grad`.
    pub fn backward(&self, params: &ModelParams, d_raw: &[f64], grad: &mut [f64]) {
        let cfg = params.config();
        let lay = params.layout();
        let d = cfg.model_dim;
        let o = cfg.output_dim;
        let n = self.tokens.len();
        let w = |s: Span| params.tensor(s);

        // Head: raw = gelu(tanh(pooled·Wp + bp)·W1 + b1)·W2 + b2
        accum_xt_dy(&self.ff1_act, d_raw, 1, d, o, &mut grad[lay.ff2_w.range()]);
        accum_rows(d_raw, 1, o, &mut grad[lay.ff2_b.range()]);
        let mut d_act = vec![0.0; d];
        dy_wt(d_raw, w(lay.ff2_w), 1, d, o, &mut d_act, false);
        let d_ff1: Vec<f64> = d_act
            .iter()
            .zip(&self.ff1_pre)
            .map(|(g, &x)| g * linalg::gelu_grad(x))
            .collect();
        accum_xt_dy(&self.pool_out, &d_ff1, 1, d, d, &mut grad[lay.ff1_w.range()]);
        accum_rows(&d_ff1, 1, d, &mut grad[lay.ff1_b.range()]);
        let mut d_pool_out = vec![0.0; d];
        dy_wt(&d_ff1, w(lay.ff1_w), 1, d, d, &mut d_pool_out, false);
        let d_pool_pre: Vec<f64> = d_pool_out
            .iter()
            .zip(&self.pool_out)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        accum_xt_dy(&self.pooled, &d_pool_pre, 1, d, d, &mut grad[lay.pool_w.range()]);
        accum_rows(&d_pool_pre, 1, d, &mut grad[lay.pool_b.range()]);
        if n == 0 {
            return;
        }
        let mut d_pooled = vec![0.0; d];
        dy_wt(&d_pool_pre, w(lay.pool_w), 1, d, d, &mut d_pooled, false);

        // Mean pooling spreads the gradient evenly over active rows.
        let inv_n = 1.0 / n as f64;
        let mut dy = vec![0.0; n * d];
        for row in dy.chunks_mut(d) {
            for (g, &p) in row.iter_mut().zip(&d_pooled) {
                *g = p * inv_n;
            }
        }
        let mut dx = vec![0.0; n * d];
        {
            let (g_lo, g_hi) = split_pair(grad, lay.lnf_g, lay.lnf_b);
            layer_norm_backward(&dy, &self.lnf, w(lay.lnf_g), n, d, g_lo, g_hi, &mut dx);
        }

        for (spans, trace) in lay.layers.iter().zip(&self.layers).rev() {
            dx = layer_backward(params, spans, trace, n, dx, grad);
        }

        for (i, (&tok, &pos)) in self.tokens.iter().zip(&self.positions).enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            let te = lay.tok_emb.offset + tok as usize * d;
            let pe = lay.pos_emb.offset + pos * d;
            for c in 0..d {
                grad[te + c] += row[c];
                grad[pe + c] += row[c];
            }
        }
    }
}

/// Two disjoint mutable tensor views; `first` must precede `second`.
fn split_pair(grad: &mut [f64], first: Span, second: Span) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.offset + first.len() <= second.offset);
    let (lo, hi) = grad.split_at_mut(second.offset);
    (&mut lo[first.range()], &mut hi[..second.len()])
}

fn layer_forward(params: &ModelParams, s: &LayerSpans, x: &mut [f64], n: usize) -> LayerTrace {
    let cfg = params.config();
    let d = cfg.model_dim;
    let f = cfg.ffn_hidden_dim;
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let w = |span: Span| params.tensor(span);

    let (a, ln1) = layer_norm(x, n, d, w(s.ln1_g), w(s.ln1_b));
    let mut q = vec![0.0; n * d];
    let mut k = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    matmul(&a, w(s.wq), Some(w(s.bq)), n, d, d, &mut q);
    matmul(&a, w(s.wk), Some(w(s.bk)), n, d, d, &mut k);
    matmul(&a, w(s.wv), Some(w(s.bv)), n, d, d, &mut v);

    let mut probs = vec![0.0; heads * n * n];
    let mut attn = vec![0.0; n * d];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let qi = &q[i * d + cols.start..i * d + cols.end];
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = linalg::dot(qi, &k[j * d + cols.start..j * d + cols.end]) * scale;
            }
            linalg::softmax(p);
            for (j, &pj) in p.iter().enumerate() {
                for c in cols.clone() {
                    attn[i * d + c] += pj * v[j * d + c];
                }
            }
        }
    }
    let mut proj = vec![0.0; n * d];
    matmul(&attn, w(s.wo), Some(w(s.bo)), n, d, d, &mut proj);
    for (xv, pv) in x.iter_mut().zip(&proj) {
        *xv += pv;
    }

    let (b, ln2) = layer_norm(x, n, d, w(s.ln2_g), w(s.ln2_b));
    let mut h_pre = vec![0.0; n * f];
    matmul(&b, w(s.w1), Some(w(s.b1)), n, d, f, &mut h_pre);
    let h_act: Vec<f64> = h_pre.iter().map(|&z| linalg::gelu(z)).collect();
    let mut ffn = vec![0.0; n * d];
    matmul(&h_act, w(s.w2), Some(w(s.b2)), n, f, d, &mut ffn);
    for (xv, fv) in x.iter_mut().zip(&ffn) {
        *xv += fv;
    }

    LayerTrace {
        ln1,
        a,
        q,
        k,
        v,
        probs,
        attn,
        ln2,
        b,
        h_pre,
        h_act,
    }
}

/// Returns the gradient w.r.t. the layer input given `dx_out` w.r.t. its output.
fn layer_backward(
    params: &ModelParams,
    s: &LayerSpans,
    t: &LayerTrace,
    n: usize,
    dx_out: Vec<f64>,
    grad: &mut [f64],
) -> Vec<f64> {
    let cfg = params.config();
    let d = cfg.model_dim;
    let f = cfg.ffn_hidden_dim;
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let w = |span: Span| params.tensor(span);

    // Feed-forward block; residual passes dx_out straight through.
    let mut dx_mid = dx_out.clone();
    accum_xt_dy(&t.h_act, &dx_out, n, f, d, &mut grad[s.w2.range()]);
    accum_rows(&dx_out, n, d, &mut grad[s.b2.range()]);
    let mut dh_act = vec![0.0; n * f];
    dy_wt(&dx_out, w(s.w2), n, f, d, &mut dh_act, false);
    for (g, &z) in dh_act.iter_mut().zip(&t.h_pre) {
        *g *= linalg::gelu_grad(z);
    }
    accum_xt_dy(&t.b, &dh_act, n, d, f, &mut grad[s.w1.range()]);
    accum_rows(&dh_act, n, f, &mut grad[s.b1.range()]);
    let mut db = vec![0.0; n * d];
    dy_wt(&dh_act, w(s.w1), n, d, f, &mut db, false);
    {
        let (gg, gb) = split_pair(grad, s.ln2_g, s.ln2_b);
        layer_norm_backward(&db, &t.ln2, w(s.ln2_g), n, d, gg, gb, &mut dx_mid);
    }

    // Attention block.
    let mut dx_in = dx_mid.clone();
    accum_xt_dy(&t.attn, &dx_mid, n, d, d, &mut grad[s.wo.range()]);
    accum_rows(&dx_mid, n, d, &mut grad[s.bo.range()]);
    let mut dattn = vec![0.0; n * d];
    dy_wt(&dx_mid, w(s.wo), n, d, d, &mut dattn, false);

    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..n {
            let p = &t.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let da = &dattn[i * d + c0..i * d + c0 + dh];
            for j in 0..n {
                dp[j] = linalg::dot(da, &t.v[j * d + c0..j * d + c0 + dh]);
                for c in 0..dh {
                    dv[j * d + c0 + c] += p[j] * da[c];
                }
            }
            let weighted = linalg::dot(p, &dp);
            for j in 0..n {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + c0 + c] += ds * t.k[j * d + c0 + c];
                    dk[j * d + c0 + c] += ds * t.q[i * d + c0 + c];
                }
            }
        }
    }
    let mut da = vec![0.0; n * d];
    for (dmat, wspan, bspan, first) in [
        (&dq, s.wq, s.bq, true),
        (&dk, s.wk, s.bk, false),
        (&dv, s.wv, s.bv, false),
    ] {
        accum_xt_dy(&t.a, dmat, n, d, d, &mut grad[wspan.range()]);
        accum_rows(dmat, n, d, &mut grad[bspan.range()]);
        dy_wt(dmat, w(wspan), n, d, d, &mut da, !first);
    }
    {
        let (gg, gb) = split_pair(grad, s.ln1_g, s.ln1_b);
        layer_norm_backward(&da, &t.ln1, w(s.ln1_g), n, d, gg, gb, &mut dx_in);
    }
    dx_in
}

fn check_tokens(params: &ModelParams, tokens: &TokenSequence) -> Result<(), ModelError> {
    let cfg = params.config();
    if tokens.ids.len() != cfg.seq_len || tokens.mask.len() != cfg.seq_len {
        return Err(ModelError::SequenceLength {
            expected: cfg.seq_len,
            found: tokens.ids.len().max(tokens.mask.len()),
        });
    }
    if let Some(&id) = tokens.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Forward pass returning the full trace. Only unmasked positions are
/// processed, which is exactly masked self-attention plus masked pooling.
pub fn encode_raw(params: &ModelParams, tokens: &TokenSequence) -> Result<EncoderTrace, ModelError> {
    check_tokens(params, tokens)?;
    let cfg = params.config();
    let lay = params.layout();
    let d = cfg.model_dim;

    let (positions, toks): (Vec<usize>, Vec<u32>) = tokens
        .ids
        .iter()
        .zip(&tokens.mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(pos, (&id, _))| (pos, id))
        .unzip();
    // A sequence with nothing unmasked is read as a lone PAD token so the
    // output stays well defined.
    let (positions, toks) = if toks.is_empty() {
        (vec![0], vec![crate::tokenize::PAD])
    } else {
        (positions, toks)
    };
    let n = toks.len();

    let tok_emb = params.tensor(lay.tok_emb);
    let pos_emb = params.tensor(lay.pos_emb);
    let mut x = vec![0.0; n * d];
    for (i, (&tok, &pos)) in toks.iter().zip(&positions).enumerate() {
        let te = &tok_emb[tok as usize * d..(tok as usize + 1) * d];
        let pe = &pos_emb[pos * d..(pos + 1) * d];
        for c in 0..d {
            x[i * d + c] = te[c] + pe[c];
        }
    }

    let layers = lay
        .layers
        .iter()
        .map(|spans| layer_forward(params, spans, &mut x, n))
        .collect();

    let (y, lnf) = layer_norm(&x, n, d, params.tensor(lay.lnf_g), params.tensor(lay.lnf_b));
    let mut pooled = vec![0.0; d];
    if n > 0 {
        for row in y.chunks(d) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        for p in &mut pooled {
            *p /= n as f64;
        }
    }

    let mut pool_out = vec![0.0; d];
    matmul(&pooled, params.tensor(lay.pool_w), Some(params.tensor(lay.pool_b)), 1, d, d, &mut pool_out);
    for v in &mut pool_out {
        *v = libm::tanh(*v);
    }
    let mut ff1_pre = vec![0.0; d];
    matmul(&pool_out, params.tensor(lay.ff1_w), Some(params.tensor(lay.ff1_b)), 1, d, d, &mut ff1_pre);
    let ff1_act: Vec<f64> = ff1_pre.iter().map(|&z| linalg::gelu(z)).collect();
    let mut raw = vec![0.0; cfg.output_dim];
    matmul(&ff1_act, params.tensor(lay.ff2_w), Some(params.tensor(lay.ff2_b)), 1, d, cfg.output_dim, &mut raw);

    Ok(EncoderTrace {
        tokens: toks,
        positions,
        layers,
        lnf,
        pooled,
        pool_out,
        ff1_pre,
        ff1_act,
        raw,
    })
}

/// The unit-norm intention embedding of a token sequence.
pub fn embed(params: &ModelParams, tokens: &TokenSequence) -> Result<EmbeddingVector, ModelError> {
    Ok(encode_raw(params, tokens)?.embedding())
}

/// Gradient of the unit-normalized output w.r.t. the raw output:
/// `(g − e·(e·g)) / ‖raw‖`.
pub(crate) fn normalize_backward(raw: &[f64], d_unit: &[f64]) -> Vec<f64> {
    let norm = linalg::norm(raw);
    if norm == 0.0 {
        return vec![0.0; raw.len()];
    }
    let proj: f64 = raw.iter().zip(d_unit).map(|(r, g)| r / norm * g).sum();
    raw.iter()
        .zip(d_unit)
        .map(|(r, g)| (g - r / norm * proj) / norm)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn seq(ids: &[u32], len: usize) -> TokenSequence {
        let mut ids = ids.to_vec();
        let mut mask: Vec<bool> = ids.iter().map(|_| true).collect();
        ids.resize(len, 0);
        mask.resize(len, false);
        TokenSequence { ids, mask }
    }

    #[test]
    fn output_is_unit_norm_and_deterministic() {
        let params = ModelParams::init(ModelConfig::desk(20, 8), 1).unwrap();
        let t = seq(&[3, 4, 5], 8);
        let a = embed(&params, &t).unwrap();
        let b = embed(&params, &t).unwrap();
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn pad_ids_do_not_matter() {
        let params = ModelParams::init(ModelConfig::desk(20, 8), 2).unwrap();
        let base = seq(&[3, 4], 8);
        let mut noisy = base.clone();
        for (i, id) in noisy.ids.iter_mut().enumerate().skip(2) {
            *id = (i as u32 * 7) % 20;
        }
        assert_eq!(
            embed(&params, &base).unwrap().as_slice(),
            embed(&params, &noisy).unwrap().as_slice()
        );
    }

    #[test]
    fn empty_sequence_still_embeds() {
        let params = ModelParams::init(ModelConfig::desk(20, 8), 2).unwrap();
        let e = embed(&params, &seq(&[], 8)).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let params = ModelParams::init(ModelConfig::desk(20, 8), 2).unwrap();
        assert!(matches!(
            embed(&params, &seq(&[1], 4)),
            Err(ModelError::SequenceLength { .. })
        ));
        assert!(matches!(
            embed(&params, &seq(&[25], 8)),
            Err(ModelError::TokenOutOfRange { id: 25, .. })
        ));
    }
}
