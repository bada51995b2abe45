//! Language-model backends: text generation plus the forward pass that
//! yields soft preference embeddings.
//!
//! Generation (`LLM_g`) and the forward operation (`LLM_f`) are separate
//! concerns: generation produces keyword replies and summaries, the forward
//! pass runs the frozen base model with trainable multimodal token
//! embeddings appended and trainable per-layer prefix context, and maps the
//! multimodal output rows into the generator's condition space.

mod http;
mod mock;
mod toy;

pub use http::{EndpointConfig, HttpCaptioner, HttpLlm};
pub use mock::MockLlm;
pub use toy::{TapeForward, ToyLm, ToyLmConfig};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Text generation only; what summarization and keyword extraction need.
pub trait TextGenerate {
    fn generate(&self, prompt: &str) -> Result<String>;
}

/// Full backend: generation plus the differentiable-capable forward pass.
pub trait LlmBackend: TextGenerate {
    fn tokenize(&self, prompt: &str) -> Vec<TokenId>;
    fn embedding_dim(&self) -> usize;
    fn context_limit(&self) -> usize;
    fn num_layers(&self) -> usize;
    fn forward(
        &self,
        prefixes: &PrefixEmbeddings,
        prompt_tokens: &[TokenId],
        mm_tokens: &MultimodalTokens,
    ) -> Result<ForwardOutput>;
    /// Access to the in-process model when the backend has one; the training
    /// loop needs the tape-level forward, which remote backends cannot offer.
    fn as_toy(&self) -> Option<&ToyLm> {
        None
    }
}

/// Trainable embeddings of the reserved multimodal vocabulary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalTokens {
    /// L x d_llm
    pub embeddings: Array2<f64>,
}

impl MultimodalTokens {
    pub fn count(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embeddings.nrows() < 1 {
            return Err(Error::InvalidArgument(
                "at least one multimodal token is required".into(),
            ));
        }
        if !self.embeddings.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "multimodal token embeddings must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Trainable per-layer prefix context (key/value side, not input tokens).
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixEmbeddings {
    /// one S x d_llm matrix per transformer layer
    pub per_layer: Vec<Array2<f64>>,
}

impl PrefixEmbeddings {
    pub fn prefix_len(&self) -> usize {
        self.per_layer.first().map(|m| m.nrows()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.prefix_len();
        if !self.per_layer.iter().all(|m| m.nrows() == s) {
            return Err(Error::InvalidArgument(
                "prefix length must match across layers".into(),
            ));
        }
        Ok(())
    }
}

/// Affine map from the language-model embedding space to the generator
/// condition space.
#[derive(Debug, Clone, PartialEq)]
pub struct Mapper {
    /// d_llm x d_gen
    pub weight: Array2<f64>,
    /// d_gen
    pub bias: Array1<f64>,
}

impl Mapper {
    pub fn apply(&self, rows: &Array2<f64>) -> Array2<f64> {
        rows.dot(&self.weight) + &self.bias
    }
}

/// Output of the forward operation.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub prompt_embeddings: Array2<f64>,
    /// L x d_llm rows for the multimodal tokens
    pub multimodal_embeddings: Array2<f64>,
}

/// Run the forward pass and map the multimodal rows into generator space.
/// The prompt-position embeddings are computed and dropped; only the
/// multimodal rows condition downstream generation.
pub fn soft_preference_embeddings(
    backend: &dyn LlmBackend,
    prefixes: &PrefixEmbeddings,
    prompt: &str,
    mm_tokens: &MultimodalTokens,
    mapper: &Mapper,
) -> Result<Array2<f64>> {
    mm_tokens.validate()?;
    prefixes.validate()?;
    let tokens = backend.tokenize(prompt);
    let total = prefixes.prefix_len() + tokens.len() + mm_tokens.count();
    let limit = backend.context_limit();
    if total > limit {
        return Err(Error::ContextOverflow { over: total - limit });
    }
    let out = backend.forward(prefixes, &tokens, mm_tokens)?;
    Ok(mapper.apply(&out.multimodal_embeddings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;
    use ndarray::Array2;
    use rand::Rng;

    fn toy() -> ToyLm {
        ToyLm::new(&ToyLmConfig::default(), 7)
    }

    fn rand_mm(l: usize, d: usize, seed: u64) -> MultimodalTokens {
        let mut rng = seed_rng(seed);
        MultimodalTokens {
            embeddings: Array2::from_shape_fn((l, d), |_| rng.random_range(-0.5..0.5)),
        }
    }

    fn rand_prefixes(layers: usize, s: usize, d: usize, seed: u64) -> PrefixEmbeddings {
        let mut rng = seed_rng(seed);
        PrefixEmbeddings {
            per_layer: (0..layers)
                .map(|_| Array2::from_shape_fn((s, d), |_| rng.random_range(-0.5..0.5)))
                .collect(),
        }
    }

    #[test]
    fn zero_mapper_weight_yields_bias_rows() {
        let lm = toy();
        let d = lm.embedding_dim();
        let mm = rand_mm(4, d, 1);
        let prefixes = rand_prefixes(lm.num_layers(), 4, d, 2);
        let bias = Array1::from_vec((0..8).map(|i| i as f64 * 0.25).collect());
        let mapper = Mapper {
            weight: Array2::zeros((d, 8)),
            bias: bias.clone(),
        };
        let e_m =
            soft_preference_embeddings(&lm, &prefixes, "hello stripes world", &mm, &mapper).unwrap();
        assert_eq!(e_m.shape(), &[4, 8]);
        for row in e_m.rows() {
            for (a, b) in row.iter().zip(bias.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_mapper_passes_raw_rows_through() {
        let lm = toy();
        let d = lm.embedding_dim();
        let mm = rand_mm(4, d, 3);
        let prefixes = rand_prefixes(lm.num_layers(), 4, d, 4);
        let mapper = Mapper {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
        };
        let tokens = lm.tokenize("a azure checker shirt");
        let raw = lm.forward(&prefixes, &tokens, &mm).unwrap();
        let e_m =
            soft_preference_embeddings(&lm, &prefixes, "a azure checker shirt", &mm, &mapper)
                .unwrap();
        assert_eq!(e_m, raw.multimodal_embeddings);
    }

    #[test]
    fn context_overflow_names_the_amount() {
        let lm = ToyLm::new(
            &ToyLmConfig {
                context_limit: 16,
                ..ToyLmConfig::default()
            },
            7,
        );
        let d = lm.embedding_dim();
        let mm = rand_mm(4, d, 5);
        let prefixes = rand_prefixes(lm.num_layers(), 4, d, 6);
        let mapper = Mapper {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
        };
        let long_prompt = (0..20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let err =
            soft_preference_embeddings(&lm, &prefixes, &long_prompt, &mm, &mapper).unwrap_err();
        // 4 + 20 + 4 = 28 vs limit 16
        match err {
            Error::ContextOverflow { over } => assert_eq!(over, 12),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_state() {
        let lm = toy();
        let d = lm.embedding_dim();
        let mm = rand_mm(4, d, 8);
        let prefixes = rand_prefixes(lm.num_layers(), 4, d, 9);
        let mapper = Mapper {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
        };
        let a = soft_preference_embeddings(&lm, &prefixes, "crimson stripes", &mm, &mapper).unwrap();
        let b = soft_preference_embeddings(&lm, &prefixes, "crimson stripes", &mm, &mapper).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mm_row_count_is_l_regardless_of_s() {
        let lm = toy();
        let d = lm.embedding_dim();
        let mm = rand_mm(3, d, 10);
        for s in [0usize, 2, 8] {
            let prefixes = rand_prefixes(lm.num_layers(), s, d, 11);
            let out = lm
                .forward(&prefixes, &lm.tokenize("green dots"), &mm)
                .unwrap();
            assert_eq!(out.multimodal_embeddings.nrows(), 3);
        }
    }

    #[test]
    fn attention_context_grows_by_exactly_s() {
        let lm = toy();
        let d = lm.embedding_dim();
        let mm = rand_mm(4, d, 12);
        let tokens = lm.tokenize("one two three");
        let widths = |s: usize| -> Vec<usize> {
            let prefixes = rand_prefixes(lm.num_layers(), s, d, 13);
            lm.forward_debug(&prefixes, &tokens, &mm).unwrap().1
        };
        let w0 = widths(0);
        let w4 = widths(4);
        assert_eq!(w0.len(), lm.num_layers());
        for (a, b) in w0.iter().zip(w4.iter()) {
            assert_eq!(b - a, 4);
        }
    }
}
