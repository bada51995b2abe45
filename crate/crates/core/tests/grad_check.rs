//! Finite-difference verification of the analytic gradients through the
//! full differentiable path: forward pass with prefixes and multimodal
//! tokens, mapper, condition assembly, denoiser, MSE.

use ndarray::{Array2, Array3};
use prefgen_core::generator::{
    ConditionSequence, Denoiser, DenoiserConfig, ImageTensor, TextEncoder, TextEncoderConfig,
};
use prefgen_core::llm::{ToyLm, ToyLmConfig};
use prefgen_core::prompt::{KeywordKind, KeywordSet, PromptTemplate, Scene};
use prefgen_core::tape::Tape;
use prefgen_core::trainer::{grad_check, TrainableState, TrainConfig, TrainerModels, TrainingExample};
use prefgen_core::behavior::SummarizedBehavior;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn example() -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let keywords: Vec<String> = ["crimson", "stripes", "bold", "cotton"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    TrainingExample {
        user_id: "fd_user".into(),
        input_behavior: SummarizedBehavior {
            item_summaries: vec![
                "a crimson striped shirt with bold cut (crimson, stripes)".into(),
                "a crimson scarf, cotton, winter (crimson, stripes, cotton)".into(),
            ],
            conversation_summaries: vec!["mentions crimson stripes".into()],
        },
        supervision_image: ImageTensor {
            pixels: Array3::from_shape_fn((16, 16, 3), |_| rng.random_range(0.0..1.0)),
        }
        .quantize_u8(),
        preference_keywords: KeywordSet {
            kind: KeywordKind::Preference,
            keywords: keywords.clone(),
            provenance: keywords
                .iter()
                .map(|k| (k.clone(), vec!["style".to_string()]))
                .collect(),
        },
    }
}

#[test]
fn full_pipeline_gradients_match_central_differences() {
    let lm = ToyLm::new(&ToyLmConfig::default(), 7);
    let encoder = TextEncoder::new(&TextEncoderConfig::default(), 5);
    let mut denoiser = Denoiser::new(&DenoiserConfig::default(), 3);
    let template = PromptTemplate::for_scene(Scene::Costume);
    let models = TrainerModels {
        lm: &lm,
        encoder: &encoder,
        denoiser: &mut denoiser,
        template: &template,
    };
    // a generic state: random nonzero values in every group
    let state = TrainableState::init(4, 4, 2, 16, 8, 42);
    let cfg = TrainConfig {
        seed: 17,
        ..TrainConfig::default()
    };

    let report = grad_check(&example(), &state, &models, 64, 1e-5, &cfg).unwrap();
    for group in &report.groups {
        let fraction = group.within_tolerance as f64 / group.checked as f64;
        println!(
            "GRAD {}: {}/{} within 1e-4 (max rel {:.3e})",
            group.name, group.within_tolerance, group.checked, group.max_rel_error
        );
        assert!(
            fraction >= 0.95,
            "group {} only {:.1}% within tolerance (max rel {:.3e})",
            group.name,
            100.0 * fraction,
            group.max_rel_error
        );
    }
    assert!(report.passes(0.95));
}

/// The denoiser alone: analytic gradient w.r.t. the condition matrix against
/// central differences on sampled coordinates.
#[test]
fn denoise_gradients_wrt_condition_match_central_differences() {
    let denoiser = Denoiser::new(&DenoiserConfig::default(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let cond0 = Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0));
    let noisy = Array3::from_shape_fn((3, 16, 16), |_| rng.random_range(-1.0..1.0));
    let target = Array3::from_shape_fn((3, 16, 16), |_| rng.random_range(0.0..1.0)).into_dyn();

    let loss_of = |cond: &Array2<f64>, want_grad: bool| -> (f64, Option<Array2<f64>>) {
        let mut tape = Tape::new();
        let cond_var = tape.leaf2(cond.clone());
        let noisy_var = tape.constant(noisy.clone().into_dyn());
        let mut bound = Vec::new();
        let out = denoiser.forward_tape(&mut tape, noisy_var, cond_var, false, &mut bound);
        let loss = tape.mse_against(out, &target);
        let value = tape.scalar(loss);
        if want_grad {
            let grads = tape.backward(loss);
            let g: Array2<f64> = grads
                .get(cond_var)
                .unwrap()
                .clone()
                .into_dimensionality()
                .unwrap();
            (value, Some(g))
        } else {
            (value, None)
        }
    };

    let (_, grad) = loss_of(&cond0, true);
    let grad = grad.unwrap();
    let h = 1e-5;
    let mut checked = 0;
    let mut ok = 0;
    for _ in 0..48 {
        let (i, j) = (rng.random_range(0..6), rng.random_range(0..8));
        let mut plus = cond0.clone();
        let mut minus = cond0.clone();
        plus[[i, j]] += h;
        minus[[i, j]] -= h;
        let fd = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * h);
        let an = grad[[i, j]];
        let denom = an.abs().max(fd.abs());
        let rel = if denom < 1e-10 { 0.0 } else { (an - fd).abs() / denom };
        checked += 1;
        if rel < 1e-4 {
            ok += 1;
        }
    }
    assert!(
        ok as f64 >= 0.95 * checked as f64,
        "{ok}/{checked} within tolerance"
    );
}

/// Nonzero gradient flow into every trainable group, none into the frozen
/// base model (constants receive no gradients by construction; asserted
/// here through the weight fingerprint staying fixed across a backward).
#[test]
fn gradients_flow_into_all_trainable_groups() {
    let lm = ToyLm::new(&ToyLmConfig::default(), 7);
    let encoder = TextEncoder::new(&TextEncoderConfig::default(), 5);
    let mut denoiser = Denoiser::new(&DenoiserConfig::default(), 3);
    let template = PromptTemplate::for_scene(Scene::Costume);
    let fingerprint_before = lm.weight_fingerprint();
    let mut models = TrainerModels {
        lm: &lm,
        encoder: &encoder,
        denoiser: &mut denoiser,
        template: &template,
    };
    let mut state = TrainableState::init(4, 4, 2, 16, 8, 42);
    let before = state.clone();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        seed: 17,
        ..TrainConfig::default()
    };
    prefgen_core::trainer::train_step(&example(), &mut state, &mut models, &cfg, 0, 0).unwrap();
    assert_ne!(
        state.mm_tokens.embeddings, before.mm_tokens.embeddings,
        "no gradient reached the multimodal tokens"
    );
    for (a, b) in state.prefixes.per_layer.iter().zip(before.prefixes.per_layer.iter()) {
        assert_ne!(a, b, "no gradient reached a prefix layer");
    }
    assert_ne!(state.mapper.weight, before.mapper.weight);
    assert_eq!(lm.weight_fingerprint(), fingerprint_before);
}
