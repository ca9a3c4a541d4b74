//! Optimization loops: pair-loss pretraining of the intention encoder and
//! cross-entropy fine-tuning of the category-page classifier.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::QueryPairSample;
use crate::model::{
    self, batch_loss_and_grad, classification_loss_and_grad, ClassExample, EmbeddingVector,
    ModelConfig, ModelError, ModelParams, NegativeLoss, PairExample,
};
use crate::text;
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("training set has no positive samples")]
    NoPositives,
    #[error("fine-tuning needs at least two classes present, found {0}")]
    TooFewClasses(usize),
    #[error("training diverged in epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_good: Box<ModelParams>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// L2 coefficient added to the gradient; 0 disables it.
    pub weight_decay: f64,
    pub eval_fraction: f64,
    pub negative_loss: NegativeLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            weight_decay: 0.0,
            eval_fraction: 0.1,
            negative_loss: NegativeLoss::Literal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(TrainError::Config("eval_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer state; applies one update per call to [`step`](Self::step).
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    learning_rate: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    pub fn new(cfg: &TrainConfig, num_params: usize) -> Self {
        let moments = if cfg.optimizer == Optimizer::Adam { num_params } else { 0 };
        OptimizerState {
            kind: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        match self.kind {
            Optimizer::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * (g + wd * *p);
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - libm::pow(ADAM_BETA1, self.t as f64);
                let c2 = 1.0 - libm::pow(ADAM_BETA2, self.t as f64);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    let g = g + wd * *p;
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPS);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_loss: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<EpochStats>,
    pub train_size: usize,
    pub eval_size: usize,
    pub warnings: Vec<String>,
}

/// True when `key` falls in the held-out fraction. Depends only on the text.
pub fn is_eval(key: &str, eval_fraction: f64) -> bool {
    const BUCKETS: u64 = 10_000;
    ((text::stable_hash(key) % BUCKETS) as f64) < eval_fraction * BUCKETS as f64
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

/// Minimizes the summed pair loss with minibatches (gradient averaged per
/// batch). Samples are split into train/eval by hashing `query_a`.
pub fn train_intention_model(
    samples: &[QueryPairSample],
    tokenizer: &Tokenizer,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    if !samples.iter().any(|s| s.interactive > 0.0) {
        return Err(TrainError::NoPositives);
    }
    let model_cfg = ModelConfig {
        num_classes: 0,
        ..model_cfg
    };
    let params = ModelParams::init(model_cfg, train_cfg.seed)?;
    train_intention_from(params, samples, tokenizer, train_cfg)
}

/// As [`train_intention_model`], starting from existing parameters.
pub fn train_intention_from(
    params: ModelParams,
    samples: &[QueryPairSample],
    tokenizer: &Tokenizer,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_intention_observed(params, samples, tokenizer, train_cfg, &mut |_| {})
}

/// As [`train_intention_from`], calling `on_epoch` after every epoch.
pub fn train_intention_observed(
    mut params: ModelParams,
    samples: &[QueryPairSample],
    tokenizer: &Tokenizer,
    train_cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for s in samples {
        let ex = PairExample {
            a: tokenizer.encode(&s.query_a),
            b: tokenizer.encode(&s.query_b),
            interactive: s.interactive,
        };
        if is_eval(&s.query_a, train_cfg.eval_fraction) {
            eval.push(ex);
        } else {
            train.push(ex);
        }
    }
    if !train.iter().any(|e| e.interactive > 0.0) {
        return Err(TrainError::NoPositives);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut opt = OptimizerState::new(train_cfg, params.values().len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(train_cfg.epochs);
    let mut batch = Vec::with_capacity(train_cfg.batch_size);
    for epoch in 1..=train_cfg.epochs {
        let last_good = params.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for idx in batches(&order, train_cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train[i].clone()));
            let (loss, mut grad) = match batch_loss_and_grad(&params, &batch, train_cfg.negative_loss) {
                Ok(v) => v,
                Err(ModelError::NonFiniteLoss { .. }) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(params.values_mut(), &grad);
            if !params.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            loss_sum += loss * scale;
            count += 1;
        }
        let eval_loss = if eval.is_empty() {
            None
        } else {
            Some(batch_loss_and_grad(&params, &eval, train_cfg.negative_loss)?.0 / eval.len() as f64)
        };
        curve.push(EpochStats {
            epoch,
            mean_loss: loss_sum / count.max(1) as f64,
            eval_loss,
            accuracy: None,
        });
        on_epoch(curve.last().expect("just pushed"));
    }
    Ok(TrainOutcome {
        params,
        curve,
        train_size: train.len(),
        eval_size: eval.len(),
        warnings: Vec::new(),
    })
}

/// A query labelled with the category page it leads to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub label: usize,
}

/// Adds a classification layer on top of `pretrained` and minimizes mean
/// cross-entropy. With `freeze_encoder` only the new layer is updated.
pub fn finetune_classifier(
    pretrained: &ModelParams,
    labeled: &[LabeledQuery],
    num_classes: usize,
    tokenizer: &Tokenizer,
    train_cfg: &TrainConfig,
    freeze_encoder: bool,
) -> Result<TrainOutcome, TrainError> {
    finetune_classifier_observed(pretrained, labeled, num_classes, tokenizer, train_cfg, freeze_encoder, &mut |_| {})
}

/// As [`finetune_classifier`], calling `on_epoch` after every epoch.
pub fn finetune_classifier_observed(
    pretrained: &ModelParams,
    labeled: &[LabeledQuery],
    num_classes: usize,
    tokenizer: &Tokenizer,
    train_cfg: &TrainConfig,
    freeze_encoder: bool,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    let present: BTreeSet<usize> = labeled.iter().map(|l| l.label).collect();
    if present.len() < 2 {
        return Err(TrainError::TooFewClasses(present.len()));
    }
    if let Some(&label) = present.iter().find(|&&l| l >= num_classes) {
        return Err(ModelError::LabelOutOfRange { label, num_classes }.into());
    }
    let mut warnings = Vec::new();
    let missing = num_classes - present.len();
    if missing > 0 {
        warnings.push(format!("{missing} of {num_classes} classes have no training examples"));
    }

    let mut params = pretrained.encoder_only().with_classifier(num_classes, train_cfg.seed)?;
    let examples: Vec<ClassExample> = labeled
        .iter()
        .map(|l| ClassExample {
            tokens: tokenizer.encode(&l.query),
            label: l.label,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut opt = OptimizerState::new(train_cfg, params.values().len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = Vec::with_capacity(train_cfg.epochs);
    let mut batch = Vec::with_capacity(train_cfg.batch_size);
    for epoch in 1..=train_cfg.epochs {
        let last_good = params.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for idx in batches(&order, train_cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| examples[i].clone()));
            let (loss, mut grad) = match classification_loss_and_grad(&params, &batch, freeze_encoder) {
                Ok(v) => v,
                Err(ModelError::NonFiniteLoss { .. }) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(params.values_mut(), &grad);
            if !params.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            loss_sum += loss * scale;
            count += 1;
        }
        curve.push(EpochStats {
            epoch,
            mean_loss: loss_sum / count.max(1) as f64,
            eval_loss: None,
            accuracy: Some(accuracy(&params, &examples)?),
        });
        on_epoch(curve.last().expect("just pushed"));
    }
    Ok(TrainOutcome {
        params,
        curve,
        train_size: examples.len(),
        eval_size: 0,
        warnings,
    })
}

/// Fraction of examples whose arg-max logit equals the label.
pub fn accuracy(params: &ModelParams, examples: &[ClassExample]) -> Result<f64, ModelError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in examples {
        let (logits, _) = model::classify_logits(params, &ex.tokens)?;
        if argmax(&logits) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Intention embedding of free text under a pretrained encoder.
pub fn embed_text(params: &ModelParams, tokenizer: &Tokenizer, text: &str) -> Result<EmbeddingVector, ModelError> {
    model::embed(params, &tokenizer.encode(text))
}

/// The dedup-task embedding: the classifier's penultimate layer,
/// L2-normalized. Used for both queries and page titles.
pub fn extract_task_embedding(
    finetuned: &ModelParams,
    tokenizer: &Tokenizer,
    text: &str,
) -> Result<EmbeddingVector, ModelError> {
    let (_, penultimate) = model::classify_logits(finetuned, &tokenizer.encode(text))?;
    Ok(EmbeddingVector::normalized(penultimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{FacetLexicon, Vocabulary};

    fn tokenizer(queries: &[&str]) -> Tokenizer {
        let lex = FacetLexicon::new();
        Tokenizer::new(Vocabulary::build(queries.iter().copied(), &lex, 1), lex, 8).unwrap()
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let cfg = TrainConfig {
                optimizer,
                ..Default::default()
            };
            let mut params = vec![0.5, -1.25, 3.0];
            let before = params.clone();
            let mut state = OptimizerState::new(&cfg, 3);
            state.step(&mut params, &[0.0; 3]);
            assert_eq!(params, before);
        }
    }

    #[test]
    fn weight_decay_shrinks_under_zero_gradient() {
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut params = vec![2.0];
        OptimizerState::new(&cfg, 1).step(&mut params, &[0.0]);
        assert!((params[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let tok = tokenizer(&["a b", "a c"]);
        let cfg = ModelConfig::desk(tok.vocab.len(), 8);
        let samples = vec![QueryPairSample {
            query_a: "a b".into(),
            query_b: "a c".into(),
            interactive: 0.5,
        }];
        let tc = TrainConfig {
            epochs: 0,
            eval_fraction: 0.0,
            seed: 5,
            ..Default::default()
        };
        let out = train_intention_model(&samples, &tok, cfg, &tc).unwrap();
        assert_eq!(out.params, ModelParams::init(cfg, 5).unwrap());
        assert!(out.curve.is_empty());
    }

    #[test]
    fn no_positives_rejected() {
        let tok = tokenizer(&["a", "b"]);
        let cfg = ModelConfig::desk(tok.vocab.len(), 8);
        let samples = vec![QueryPairSample {
            query_a: "a".into(),
            query_b: "b".into(),
            interactive: -1.0,
        }];
        assert_eq!(
            train_intention_model(&samples, &tok, cfg, &TrainConfig::default()).unwrap_err(),
            TrainError::NoPositives
        );
    }

    #[test]
    fn one_class_rejected() {
        let tok = tokenizer(&["a", "b"]);
        let params = ModelParams::init(ModelConfig::desk(tok.vocab.len(), 8), 0).unwrap();
        let labeled = vec![
            LabeledQuery {
                query: "a".into(),
                label: 0,
            },
            LabeledQuery {
                query: "b".into(),
                label: 0,
            },
        ];
        assert_eq!(
            finetune_classifier(&params, &labeled, 2, &tok, &TrainConfig::default(), false).unwrap_err(),
            TrainError::TooFewClasses(1)
        );
    }

    #[test]
    fn eval_split_is_stable() {
        let picked: Vec<bool> = (0..1000).map(|i| is_eval(&format!("q{i}"), 0.1)).collect();
        let again: Vec<bool> = (0..1000).map(|i| is_eval(&format!("q{i}"), 0.1)).collect();
        assert_eq!(picked, again);
        let frac = picked.iter().filter(|&&b| b).count() as f64 / 1000.0;
        assert!((0.06..0.14).contains(&frac), "{frac}");
        assert!(!is_eval("anything", 0.0));
    }
}
