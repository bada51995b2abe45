//! Frozen numeric fixtures: values computed once from the seeded toy
//! models and pinned here. A drift beyond 1e-6 means the seeded forward
//! path changed behavior.

use ndarray::Array3;
use prefgen_core::behavior::SummarizedBehavior;
use prefgen_core::generator::{
    Denoiser, DenoiserConfig, ImageTensor, TextEncoder, TextEncoderConfig,
};
use prefgen_core::llm::{soft_preference_embeddings, ToyLm, ToyLmConfig};
use prefgen_core::prompt::{KeywordKind, KeywordSet, PromptTemplate, Scene};
use prefgen_core::trainer::{
    train_step, TrainConfig, TrainableState, TrainerModels, TrainingExample,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

const E_M_FIXTURE: [[f64; 8]; 4] = [
    [0.1984595222, 0.5800557013, -0.1768407531, -0.7377996629, 0.0884054491, -0.0608673790, -0.5161080730, 0.0575023250],
    [-0.8130854136, -0.5574003384, -0.3727040566, 0.5375406530, 0.7257260309, -0.0999071642, 0.5682854181, -0.1147770319],
    [-0.6306875381, 0.1559956264, 0.5659806494, -0.2630163486, 0.0408305790, -0.4740758918, 0.9492993610, -0.7650310979],
    [1.0371999211, -0.4021145162, 0.0309064082, -0.1691310253, -0.2260262165, -0.2655899084, 0.4867819256, -1.0691934652],
];

const STEP1_LOSS_FIXTURE: f64 = 0.322263839439;

#[test]
fn soft_preference_embeddings_match_frozen_matrix() {
    let lm = ToyLm::new(&ToyLmConfig::default(), 7);
    let state = TrainableState::init(4, 4, 2, 16, 8, 42);
    let e_m = soft_preference_embeddings(
        &lm,
        &state.prefixes,
        "a crimson striped shirt with bold cut",
        &state.mm_tokens,
        &state.mapper,
    )
    .unwrap();
    assert_eq!(e_m.shape(), &[4, 8]);
    for (r, row) in E_M_FIXTURE.iter().enumerate() {
        for (c, expect) in row.iter().enumerate() {
            assert!(
                (e_m[[r, c]] - expect).abs() < 1e-6,
                "({r},{c}): {} vs frozen {expect}",
                e_m[[r, c]]
            );
        }
    }
}

fn fixture_example() -> TrainingExample {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    let keywords: Vec<String> = ["crimson", "stripes", "bold", "cotton"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    TrainingExample {
        user_id: "fixture_user".into(),
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
fn first_train_step_loss_matches_frozen_scalar() {
    let lm = ToyLm::new(&ToyLmConfig::default(), 7);
    let encoder = TextEncoder::new(&TextEncoderConfig::default(), 5);
    let mut denoiser = Denoiser::new(&DenoiserConfig::default(), 3);
    let template = PromptTemplate::for_scene(Scene::Costume);
    let mut models = TrainerModels {
        lm: &lm,
        encoder: &encoder,
        denoiser: &mut denoiser,
        template: &template,
    };
    let mut state = TrainableState::init(4, 4, 2, 16, 8, 42);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        steps: 1,
        seed: 17,
        l: 4,
        s: 4,
        grad_check: false,
        unfreeze_denoiser: false,
    };
    let loss = train_step(&fixture_example(), &mut state, &mut models, &cfg, 0, 0).unwrap();
    assert!(
        (loss - STEP1_LOSS_FIXTURE).abs() < 1e-6,
        "step-1 loss {loss} vs frozen {STEP1_LOSS_FIXTURE}"
    );
}

#[test]
fn titanic_style_mock_summary_is_frozen() {
    use prefgen_core::llm::{MockLlm, TextGenerate};
    let mock = MockLlm::new(Scene::Movie, 1);
    let prompt = prefgen_core::prompt::build_item_summary_prompt(
        Scene::Movie,
        "Titanic",
        "A seventeen-year-old aristocrat falls in love with a kind but poor artist aboard the luxurious, ill-fated R.M.S. Titanic.",
        &["romance".into(), "disaster".into()],
    );
    assert_eq!(
        mock.generate(&prompt).unwrap(),
        "Titanic: A seventeen-year-old aristocrat falls in love with a kind but (romance, disaster)"
    );
}
