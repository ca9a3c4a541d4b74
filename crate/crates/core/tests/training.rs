//! Training behaviour on small synthetic corpora.

use topicforge_core::model::ModelConfig;
use topicforge_core::synthetic::two_cluster_corpus;
use topicforge_core::tokenize::{FacetLexicon, Tokenizer, Vocabulary};
use topicforge_core::train::{
    embed_text, extract_task_embedding, finetune_classifier, train_intention_model, LabeledQuery,
    Optimizer, TrainConfig,
};

#[test]
fn two_cluster_corpus_separates() {
    let corpus = two_cluster_corpus(20, 4, 42);
    let lex = FacetLexicon::new();
    let vocab = Vocabulary::build(corpus.all_queries(), &lex, 1);
    let tok = Tokenizer::new(vocab, lex, 16).unwrap();
    let cfg = ModelConfig::desk(tok.vocab.len(), 16);
    let train_cfg = TrainConfig {
        epochs: 15,
        eval_fraction: 0.0,
        seed: 7,
        ..Default::default()
    };
    let out = train_intention_model(&corpus.samples, &tok, cfg, &train_cfg).unwrap();
    assert!(out.curve.last().unwrap().mean_loss < out.curve[0].mean_loss);

    let gap = corpus.separation(|q| embed_text(&out.params, &tok, q)).unwrap();
    assert!(gap >= 0.3, "separation {gap}");

    // determinism
    let again = train_intention_model(&corpus.samples, &tok, cfg, &train_cfg).unwrap();
    assert_eq!(
        again.curve.last().unwrap().mean_loss.to_bits(),
        out.curve.last().unwrap().mean_loss.to_bits()
    );
    assert_eq!(again.params, out.params);
}

/// Labels are given by a planted color facet; everything else is noise.
fn planted_facet_set() -> (Tokenizer, Vec<LabeledQuery>) {
    let colors = ["red", "blue", "green"];
    let nouns = ["shirt", "lamp", "mug", "chair", "towel", "pillow", "rug", "vase"];
    let lex = FacetLexicon::from_pairs(colors.iter().map(|c| ("color", *c)));
    let mut labeled = Vec::new();
    for (label, c) in colors.iter().enumerate() {
        for n in nouns {
            labeled.push(LabeledQuery {
                query: format!("{c} {n}"),
                label,
            });
            labeled.push(LabeledQuery {
                query: format!("soft {n} {c}"),
                label,
            });
        }
    }
    let vocab = Vocabulary::build(labeled.iter().map(|l| l.query.as_str()), &lex, 1);
    (Tokenizer::new(vocab, lex, 8).unwrap(), labeled)
}

#[test]
fn finetune_reaches_high_accuracy() {
    let (tok, labeled) = planted_facet_set();
    let pretrained = topicforge_core::ModelParams::init(ModelConfig::desk(tok.vocab.len(), 8), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 1,
        ..Default::default()
    };
    let out = finetune_classifier(&pretrained, &labeled, 3, &tok, &cfg, false).unwrap();
    let acc = out.curve.last().unwrap().accuracy.unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    let first = out.curve[0].mean_loss;
    assert!(out.curve[1..].iter().all(|e| e.mean_loss <= first));

    // task embeddings: unit norm, deterministic, classes cluster
    let emb = |q: &str| extract_task_embedding(&out.params, &tok, q).unwrap();
    assert!((emb("red mug").norm() - 1.0).abs() < 1e-6);
    assert_eq!(emb("red mug"), emb("red mug"));
    let (mut same, mut same_n, mut cross, mut cross_n) = (0.0, 0, 0.0, 0);
    for (i, x) in labeled.iter().enumerate() {
        for y in &labeled[i + 1..] {
            let c = emb(&x.query).dot(&emb(&y.query));
            if x.label == y.label {
                same += c;
                same_n += 1;
            } else {
                cross += c;
                cross_n += 1;
            }
        }
    }
    assert!(same / same_n as f64 > cross / cross_n as f64);
}

#[test]
fn frozen_encoder_loss_decreases_monotonically() {
    let (tok, labeled) = planted_facet_set();
    let pretrained = topicforge_core::ModelParams::init(ModelConfig::desk(tok.vocab.len(), 8), 3).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        epochs: 20,
        batch_size: labeled.len(),
        learning_rate: 1e-3,
        seed: 2,
        ..Default::default()
    };
    let out = finetune_classifier(&pretrained, &labeled, 3, &tok, &cfg, true).unwrap();
    for w in out.curve.windows(2) {
        assert!(w[1].mean_loss < w[0].mean_loss, "{:?}", out.curve);
    }
    // encoder untouched
    let enc = pretrained.values().len();
    assert_eq!(&out.params.values()[..enc], pretrained.values());
}
