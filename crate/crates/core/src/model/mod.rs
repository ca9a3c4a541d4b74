//! The query intention encoder.
//!
//! Token and learned positional embeddings feed a stack of pre-norm
//! transformer layers. The final layer-normed states are mean-pooled over
//! unmasked positions, passed through a tanh dense pooling layer and two
//! feed-forward layers, and the result is L2-normalized. An optional
//! classification layer on the (unnormalized) feed-forward output turns the
//! encoder into a category-page classifier.
//!
//! All gradients are computed analytically; see `tests/gradient_check.rs`
//! for the finite-difference verification.

mod encoder;
pub mod gradcheck;
mod loss;
mod params;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{embed, encode_raw, EncoderTrace};
pub use loss::{
    batch_loss_and_grad, classification_loss_and_grad, classify_logits, pair_loss, ClassExample,
    NegativeLoss, PairExample,
};
pub use params::{Gradient, Layout, ModelParams, Span};

use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(&'static str),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("token sequence length {found} does not match configured length {expected}")]
    SequenceLength { expected: usize, found: usize },
    #[error("parameter vector has {found} values, configuration needs {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("model has no classification layer")]
    MissingHead,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("non-finite loss {loss} at batch sample {index}")]
    NonFiniteLoss { index: usize, loss: f64 },
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_hidden_dim: usize,
    pub output_dim: usize,
    /// Width of the classification layer; 0 when absent.
    #[serde(default)]
    pub num_classes: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: d = 32, 2 layers, 2 heads, 32-d output.
    pub fn desk(vocab_size: usize, seq_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            seq_len,
            model_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_hidden_dim: 64,
            output_dim: 32,
            num_classes: 0,
        }
    }

    /// The production-scale shape: d = 512, 3 layers, 512-d output.
    pub fn production_scale(vocab_size: usize, seq_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            seq_len,
            model_dim: 512,
            num_layers: 3,
            num_heads: 8,
            ffn_hidden_dim: 2048,
            output_dim: 512,
            num_classes: 0,
        }
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 2 {
            return Err(ModelError::Config("vocab_size must be at least 2"));
        }
        if self.seq_len == 0
            || self.model_dim == 0
            || self.num_heads == 0
            || self.ffn_hidden_dim == 0
            || self.output_dim == 0
        {
            return Err(ModelError::Config("all dimensions must be at least 1"));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config("model_dim must be divisible by num_heads"));
        }
        Ok(())
    }
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Scales `raw` to unit length. A zero vector stays zero.
    pub fn normalized(mut raw: Vec<f64>) -> Self {
        let n = linalg::norm(&raw);
        if n > 0.0 {
            for x in &mut raw {
                *x /= n;
            }
        }
        EmbeddingVector(raw)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.0)
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        linalg::dot(&self.0, &other.0)
    }

    /// Equal to [`dot`](Self::dot) for unit vectors; kept separate so
    /// callers comparing against raw vectors get the general form.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = linalg::norm(a) * linalg::norm(b);
    if denom == 0.0 {
        0.0
    } else {
        linalg::dot(a, b) / denom
    }
}
