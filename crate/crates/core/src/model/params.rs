use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};

/// A tensor's location inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        if self.rows == 1 {
            vec![self.cols]
        } else {
            vec![self.rows, self.cols]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSpans {
    pub ln1_g: Span,
    pub ln1_b: Span,
    pub wq: Span,
    pub bq: Span,
    pub wk: Span,
    pub bk: Span,
    pub wv: Span,
    pub bv: Span,
    pub wo: Span,
    pub bo: Span,
    pub ln2_g: Span,
    pub ln2_b: Span,
    pub w1: Span,
    pub b1: Span,
    pub w2: Span,
    pub b2: Span,
}

/// Named tensor layout derived from a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub(crate) tok_emb: Span,
    pub(crate) pos_emb: Span,
    pub(crate) layers: Vec<LayerSpans>,
    pub(crate) lnf_g: Span,
    pub(crate) lnf_b: Span,
    pub(crate) pool_w: Span,
    pub(crate) pool_b: Span,
    pub(crate) ff1_w: Span,
    pub(crate) ff1_b: Span,
    pub(crate) ff2_w: Span,
    pub(crate) ff2_b: Span,
    pub(crate) cls: Option<(Span, Span)>,
    entries: Vec<(String, Span)>,
    encoder_len: usize,
    total: usize,
}

struct Builder {
    offset: usize,
    entries: Vec<(String, Span)>,
}

impl Builder {
    fn take(&mut self, name: String, rows: usize, cols: usize) -> Span {
        let span = Span {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += span.len();
        self.entries.push((name, span));
        span
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let d = config.model_dim;
        let f = config.ffn_hidden_dim;
        let o = config.output_dim;
        let mut b = Builder {
            offset: 0,
            entries: Vec::new(),
        };
        let tok_emb = b.take("embeddings.token".into(), config.vocab_size, d);
        let pos_emb = b.take("embeddings.position".into(), config.seq_len, d);
        let layers = (0..config.num_layers)
            .map(|l| {
                let mut t = |name: &str, rows, cols| b.take(format!("layers.{l}.{name}"), rows, cols);
                LayerSpans {
                    ln1_g: t("ln1.gamma", 1, d),
                    ln1_b: t("ln1.beta", 1, d),
                    wq: t("attn.query.weight", d, d),
                    bq: t("attn.query.bias", 1, d),
                    wk: t("attn.key.weight", d, d),
                    bk: t("attn.key.bias", 1, d),
                    wv: t("attn.value.weight", d, d),
                    bv: t("attn.value.bias", 1, d),
                    wo: t("attn.output.weight", d, d),
                    bo: t("attn.output.bias", 1, d),
                    ln2_g: t("ln2.gamma", 1, d),
                    ln2_b: t("ln2.beta", 1, d),
                    w1: t("ffn.in.weight", d, f),
                    b1: t("ffn.in.bias", 1, f),
                    w2: t("ffn.out.weight", f, d),
                    b2: t("ffn.out.bias", 1, d),
                }
            })
            .collect();
        let lnf_g = b.take("final_ln.gamma".into(), 1, d);
        let lnf_b = b.take("final_ln.beta".into(), 1, d);
        let pool_w = b.take("pool.weight".into(), d, d);
        let pool_b = b.take("pool.bias".into(), 1, d);
        let ff1_w = b.take("head.ff1.weight".into(), d, d);
        let ff1_b = b.take("head.ff1.bias".into(), 1, d);
        let ff2_w = b.take("head.ff2.weight".into(), d, o);
        let ff2_b = b.take("head.ff2.bias".into(), 1, o);
        let encoder_len = b.offset;
        let cls = (config.num_classes > 0).then(|| {
            (
                b.take("classifier.weight".into(), o, config.num_classes),
                b.take("classifier.bias".into(), 1, config.num_classes),
            )
        });
        Layout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            pool_w,
            pool_b,
            ff1_w,
            ff1_b,
            ff2_w,
            ff2_b,
            cls,
            total: b.offset,
            encoder_len,
            entries: b.entries,
        }
    }

    /// `(name, span)` for every tensor in storage order.
    pub fn entries(&self) -> &[(String, Span)] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of leading values that belong to the encoder (everything but
    /// the classification layer).
    pub fn encoder_len(&self) -> usize {
        self.encoder_len
    }

    pub fn get(&self, name: &str) -> Option<Span> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, s)| s)
    }
}

/// Encoder (and optional classifier) weights in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

/// Same layout as the parameters.
pub type Gradient = Vec<f64>;

impl ModelParams {
    /// Random initialization: embeddings uniform in ±0.5, weight matrices
    /// uniform in ±1/√fan_in, biases zero, layer-norm gains one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.total()];
        for (name, span) in layout.entries() {
            let slice = &mut values[span.range()];
            if name.ends_with(".gamma") {
                slice.fill(1.0);
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                slice.fill(0.0);
            } else if name.starts_with("embeddings.") {
                for v in slice {
                    *v = rng.random_range(-0.5..0.5);
                }
            } else {
                let bound = 1.0 / libm::sqrt(span.rows as f64);
                for v in slice {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(ModelParams {
            config,
            layout,
            values,
        })
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total() {
            return Err(ModelError::ParamCount {
                expected: layout.total(),
                found: values.len(),
            });
        }
        Ok(ModelParams {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, span: Span) -> &[f64] {
        &self.values[span.range()]
    }

    pub fn zero_gradient(&self) -> Gradient {
        vec![0.0; self.values.len()]
    }

    pub fn has_head(&self) -> bool {
        self.layout.cls.is_some()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Adds (or replaces) a classification layer, keeping the encoder
    /// weights. Weights are uniform in ±1/√fan_in, bias zero.
    pub fn with_classifier(&self, num_classes: usize, seed: u64) -> Result<Self, ModelError> {
        if num_classes == 0 {
            return Err(ModelError::Config("num_classes must be at least 1"));
        }
        let config = self.config.with_classes(num_classes);
        let layout = Layout::new(&config);
        let mut values = self.values[..self.layout.encoder_len()].to_vec();
        let (w, b) = layout.cls.expect("num_classes > 0");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / libm::sqrt(w.rows as f64);
        values.extend((0..w.len()).map(|_| rng.random_range(-bound..bound)));
        values.extend(core::iter::repeat_n(0.0, b.len()));
        Self::from_values(config, values)
    }

    /// The encoder alone, with the classification layer dropped.
    pub fn encoder_only(&self) -> Self {
        let config = self.config.with_classes(0);
        Self::from_values(config, self.values[..self.layout.encoder_len()].to_vec())
            .expect("encoder prefix matches its own layout")
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }
}
