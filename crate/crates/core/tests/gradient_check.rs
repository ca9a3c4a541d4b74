//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicforge_core::model::gradcheck::{check_classification, check_pair_loss};
use topicforge_core::model::{ClassExample, ModelConfig, NegativeLoss, PairExample};
use topicforge_core::synthetic::{perturbed_params, random_sequence};

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor: coordinates whose gradient is below this magnitude are
/// compared on absolute error `TOLERANCE * FLOOR`.
const FLOOR: f64 = 1e-6;

fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        seq_len: 6,
        model_dim: 4,
        num_layers: 1,
        num_heads: 2,
        ffn_hidden_dim: 8,
        output_dim: 4,
        num_classes: 0,
    }
}

fn pair_batch(seed: u64, config: &ModelConfig) -> Vec<PairExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..4)
        .map(|i| PairExample {
            a: random_sequence(&mut rng, config.seq_len, config.vocab_size as u32),
            b: random_sequence(&mut rng, config.seq_len, config.vocab_size as u32),
            interactive: if i == 3 { -1.0 } else { rng.random_range(0.1..1.0) },
        })
        .collect()
}

#[test]
fn pair_loss_gradient_matches_finite_differences() {
    let config = toy_config();
    for seed in [1u64, 2, 3, 4] {
        let params = perturbed_params(config, seed, 0.3).unwrap();
        let batch = pair_batch(seed + 100, &config);
        for negative in [NegativeLoss::Literal, NegativeLoss::Complement] {
            let r = check_pair_loss(&params, &batch, negative, STEP, FLOOR).unwrap();
            let name = params
                .layout()
                .entries()
                .iter()
                .find(|(_, s)| s.range().contains(&r.worst_index))
                .map(|(n, _)| n.clone())
                .unwrap();
            assert_eq!(r.checked, params.values().len());
            assert!(
                r.max_relative_error <= TOLERANCE,
                "seed {seed} {negative:?}: relative error {:e} at {name}",
                r.max_relative_error
            );
        }
    }
}

#[test]
fn classification_gradient_matches_finite_differences() {
    let config = toy_config().with_classes(3);
    for seed in [11u64, 12, 13] {
        let params = perturbed_params(config, seed, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<ClassExample> = (0..4)
            .map(|i| ClassExample {
                tokens: random_sequence(&mut rng, config.seq_len, 10),
                label: i % 3,
            })
            .collect();
        for freeze in [false, true] {
            let r = check_classification(&params, &batch, freeze, STEP, FLOOR).unwrap();
            assert!(r.max_relative_error <= TOLERANCE, "seed {seed} freeze {freeze}: {r:?}");
            if freeze {
                assert_eq!(r.checked, params.values().len() - params.layout().encoder_len());
            }
        }
    }
}

#[test]
fn deeper_config_gradient() {
    let config = ModelConfig {
        vocab_size: 12,
        seq_len: 5,
        model_dim: 6,
        num_layers: 2,
        num_heads: 3,
        ffn_hidden_dim: 7,
        output_dim: 5,
        num_classes: 0,
    };
    let params = perturbed_params(config, 9, 0.3).unwrap();
    let batch = pair_batch(99, &config);
    let r = check_pair_loss(&params, &batch, NegativeLoss::Literal, STEP, FLOOR).unwrap();
    assert!(r.max_relative_error <= TOLERANCE, "{r:?}");
}
