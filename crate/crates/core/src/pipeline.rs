//! End-to-end wiring: behaviors in, keywords and conditions out, weighted
//! generation, the condition-ablation harness and the user-feature export.

use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancer::{select_best, Selection, WeightPair};
use crate::behavior::{
    summarize, summarize_item, truncate_behavior, BehaviorRecord, CaptionBackend,
    SummarizedBehavior,
};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::generator::{
    ConditionSequence, Denoiser, DenoiserConfig, ImageGenerator, ImageTensor, Sampler,
    ScorerBackend, TextEncoder, TextEncoderConfig, ToyScorer, ToyScorerConfig,
};
use crate::llm::{soft_preference_embeddings, LlmBackend, ToyLmConfig};
use crate::metrics::{
    perceptual_distance, ssim, AblationVariant, SimilarityReport, ToyFeatures, UserSimilarityRow,
};
use crate::prompt::{build_behavior_prompt, extract_all, extract_target, KeywordSet, PromptTemplate, Scene};
use crate::rng::derive_seed;
use crate::store::TensorFile;
use crate::trainer::{build_condition, TrainableState, TrainingExample};

/// Pipeline-wide knobs; one value per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub scene: Scene,
    /// history items considered
    pub n: usize,
    /// conversations considered
    pub m: usize,
    pub preference_cap: usize,
    pub target_cap: usize,
    pub max_summary_tokens: usize,
    pub alpha: f64,
    pub weight_grid: Vec<WeightPair>,
    pub sampler_steps: usize,
    pub generation_seed: u64,
    /// seeds the frozen toy models
    pub backend_seed: u64,
    pub l: usize,
    pub s: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            scene: Scene::Costume,
            n: 10,
            m: 1,
            preference_cap: 10,
            target_cap: 5,
            max_summary_tokens: 40,
            alpha: 0.5,
            weight_grid: crate::balancer::default_weight_grid(),
            sampler_steps: 4,
            generation_seed: 0,
            backend_seed: 7,
            l: 4,
            s: 4,
        }
    }
}

/// Everything a command needs to run the generation path.
pub struct Pipeline {
    pub settings: PipelineSettings,
    pub template: PromptTemplate,
    pub llm: Box<dyn LlmBackend + Sync>,
    pub captioner: Box<dyn CaptionBackend + Sync>,
    pub encoder: TextEncoder,
    pub denoiser: Denoiser,
    pub scorer: ToyScorer,
    pub features: ToyFeatures,
    pub state: Option<TrainableState>,
}

impl Pipeline {
    /// Hermetic pipeline over the mock backend and seeded toy models.
    pub fn with_mock(settings: PipelineSettings) -> Self {
        let seed = settings.backend_seed;
        let template = PromptTemplate::for_scene(settings.scene);
        let llm = Box::new(crate::llm::MockLlm::new(
            settings.scene,
            derive_seed(seed, "lm", 0),
        ));
        let encoder = TextEncoder::new(&TextEncoderConfig::default(), derive_seed(seed, "encoder", 0));
        let denoiser = Denoiser::new(&DenoiserConfig::default(), derive_seed(seed, "denoiser", 0));
        let scorer = ToyScorer::new(&ToyScorerConfig::default(), derive_seed(seed, "scorer", 0));
        let features = ToyFeatures::new(derive_seed(seed, "features", 0));
        Pipeline {
            settings,
            template,
            llm,
            captioner: Box::new(crate::behavior::MockCaptioner),
            encoder,
            denoiser,
            scorer,
            features,
            state: None,
        }
    }

    pub fn toy_lm(&self) -> Result<&crate::llm::ToyLm> {
        self.llm.as_toy().ok_or_else(|| {
            Error::Unsupported("this backend exposes no in-process model for soft embeddings".into())
        })
    }

    pub fn toy_lm_config() -> ToyLmConfig {
        ToyLmConfig::default()
    }

    /// Summarize the input portion (all but the reserved last item) and the
    /// reserved target item of one record.
    pub fn prepare_user(&self, record: &BehaviorRecord) -> Result<PreparedUser> {
        if record.history.len() < 2 {
            return Err(Error::NoBehaviorSignal {
                user_id: record.user_id.clone(),
            });
        }
        let mut input = record.clone();
        let target_item = input.history.pop().expect("length checked above");
        let truncated = truncate_behavior(&input, self.settings.n, self.settings.m)?;
        let sb = summarize(
            &truncated,
            self.settings.scene,
            self.llm.as_ref(),
            self.captioner.as_ref(),
            self.settings.max_summary_tokens,
        )?;
        let preference_keywords = extract_all(
            &self.template,
            &sb,
            self.llm.as_ref(),
            self.settings.preference_cap,
        )?;
        let target_summary = summarize_item(
            &target_item,
            self.settings.scene,
            self.llm.as_ref(),
            self.captioner.as_ref(),
            self.settings.max_summary_tokens,
        )?;
        let target_keywords = extract_target(
            &self.template,
            &target_summary,
            self.llm.as_ref(),
            self.settings.target_cap,
        )?;
        Ok(PreparedUser {
            user_id: record.user_id.clone(),
            input_history: truncated.history.iter().map(|i| i.item_id.clone()).collect(),
            summarized: sb,
            preference_keywords,
            target_item_id: target_item.item_id.clone(),
            target_summary,
            target_keywords,
        })
    }

    /// Soft preference embeddings for a summarized behavior; requires a
    /// trained (or at least initialized) state.
    pub fn soft_embeddings(&self, sb: &SummarizedBehavior) -> Result<Array2<f64>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::MissingCheckpoint("soft embeddings need trained state".into()))?;
        let prompt = build_behavior_prompt(&self.template, sb);
        soft_preference_embeddings(
            self.llm.as_ref(),
            &state.prefixes,
            &prompt,
            &state.mm_tokens,
            &state.mapper,
        )
    }

    /// Preference-side condition for an ablation variant; `None` when the
    /// variant drops preference conditioning entirely.
    pub fn preference_condition(
        &self,
        variant: AblationVariant,
        sb: &SummarizedBehavior,
        keywords: &KeywordSet,
    ) -> Result<Option<ConditionSequence>> {
        let cond = match variant {
            AblationVariant::Full => {
                let e_m = self.soft_embeddings(sb)?;
                Some(build_condition(&e_m, keywords, &self.encoder)?)
            }
            AblationVariant::NoKeywords => {
                let e_m = self.soft_embeddings(sb)?;
                Some(ConditionSequence::new(e_m, self.encoder.token_limit())?)
            }
            AblationVariant::NoEmbeddings => Some(self.encoder.encode_text(&keywords.keywords)?),
            AblationVariant::NoBoth => None,
        };
        Ok(cond)
    }

    /// Weighted grid generation plus argmax-z selection for one user.
    pub fn generate_for_user(
        &self,
        variant: AblationVariant,
        prepared: &PreparedUser,
        seed: u64,
    ) -> Result<Selection> {
        let preference = self.preference_condition(variant, &prepared.summarized, &prepared.preference_keywords)?;
        let target = self.encoder.encode_text(&prepared.target_keywords.keywords)?;
        let sampler = Sampler {
            denoiser: &self.denoiser,
            steps: self.settings.sampler_steps,
        };
        select_best(
            preference.as_ref(),
            &target,
            &self.settings.weight_grid,
            &sampler,
            &self.scorer,
            &prepared.preference_keywords.keywords,
            &prepared.target_keywords.keywords,
            self.settings.alpha,
            seed,
        )
    }

    /// Preference-only generation (no target conditions); the image behind
    /// the generated-user feature export.
    pub fn generate_preference_only(&self, prepared: &PreparedUser, seed: u64) -> Result<ImageTensor> {
        let condition = self
            .preference_condition(AblationVariant::Full, &prepared.summarized, &prepared.preference_keywords)?
            .expect("full variant always has a preference condition");
        let sampler = Sampler {
            denoiser: &self.denoiser,
            steps: self.settings.sampler_steps,
        };
        sampler.generate(&condition, seed)
    }

    /// Train the soft-embedding path in place: initializes state from the
    /// config seed when none is loaded, stores the trained state on the
    /// pipeline and returns the loss curve (plus the gradient report when
    /// requested).
    pub fn train(
        &mut self,
        examples: &[TrainingExample],
        cfg: &crate::trainer::TrainConfig,
    ) -> Result<crate::trainer::TrainOutcome> {
        let lm = self.llm.as_toy().ok_or_else(|| {
            Error::Unsupported("training requires an in-process model backend".into())
        })?;
        let state = match self.state.take() {
            Some(state) => state,
            None => TrainableState::init(
                cfg.l,
                cfg.s,
                lm.num_layers(),
                lm.embedding_dim(),
                self.encoder.d_gen(),
                cfg.seed ^ 0xfeed,
            ),
        };
        let outcome = {
            let mut models = crate::trainer::TrainerModels {
                lm,
                encoder: &self.encoder,
                denoiser: &mut self.denoiser,
                template: &self.template,
            };
            crate::trainer::train(examples, state, &mut models, cfg)?
        };
        self.state = Some(outcome.state.clone());
        Ok(outcome)
    }

    /// Build training examples from the corpus train split.
    pub fn training_examples(&self, corpus: &Corpus) -> Result<Vec<TrainingExample>> {
        corpus
            .train_users
            .iter()
            .map(|user_id| {
                let record = corpus
                    .record(user_id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown user {user_id}")))?;
                let prepared = self.prepare_user(record)?;
                Ok(TrainingExample {
                    user_id: user_id.clone(),
                    supervision_image: corpus.image(&prepared.target_item_id)?.clone(),
                    input_behavior: prepared.summarized,
                    preference_keywords: prepared.preference_keywords,
                })
            })
            .collect()
    }

    /// Per-user similarity of the selected generation to history and target
    /// items, for one ablation variant over the corpus test split.
    pub fn run_ablation(&self, corpus: &Corpus, variant: AblationVariant) -> Result<SimilarityReport> {
        if variant.uses_soft_embeddings() && self.state.is_none() {
            return Err(Error::MissingCheckpoint(format!(
                "variant {} needs soft embeddings; train first",
                variant.name()
            )));
        }
        let rows: Vec<UserSimilarityRow> = corpus
            .test_users
            .par_iter()
            .map(|user_id| -> Result<UserSimilarityRow> {
                let record = corpus
                    .record(user_id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown user {user_id}")))?;
                let prepared = self.prepare_user(record)?;
                let seed = derive_seed(self.settings.generation_seed, user_id, 0);
                let selection = self.generate_for_user(variant, &prepared, seed)?;
                let generated = &selection.chosen().image;

                let mut lpips_hist = 0.0;
                let mut ssim_hist = 0.0;
                for item_id in &prepared.input_history {
                    let item_img = corpus.image(item_id)?;
                    lpips_hist += perceptual_distance(generated, item_img, &self.features)?;
                    ssim_hist += ssim(generated, item_img)?;
                }
                let count = prepared.input_history.len().max(1) as f64;
                let target_img = corpus.image(&prepared.target_item_id)?;
                Ok(UserSimilarityRow {
                    user_id: user_id.clone(),
                    lpips_history: lpips_hist / count,
                    lpips_target: perceptual_distance(generated, target_img, &self.features)?,
                    ssim_history: ssim_hist / count,
                    ssim_target: ssim(generated, target_img)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SimilarityReport::from_rows(variant, rows))
    }

    /// User feature vector: mean history embedding, or the embedding of a
    /// preference-only generation.
    pub fn export_user_features(
        &self,
        corpus: &Corpus,
        user_id: &str,
        mode: FeatureMode,
    ) -> Result<Array1<f64>> {
        let record = corpus
            .record(user_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown user {user_id}")))?;
        if record.history.is_empty() {
            return Err(Error::NoBehaviorSignal {
                user_id: user_id.to_string(),
            });
        }
        match mode {
            FeatureMode::Averaged => {
                let mut acc = Array1::<f64>::zeros(self.scorer.dim());
                for item in &record.history {
                    acc += &self.scorer.embed_image(corpus.image(&item.item_id)?)?;
                }
                Ok(acc / record.history.len() as f64)
            }
            FeatureMode::Generated => {
                let prepared = self.prepare_user(record)?;
                let seed = derive_seed(self.settings.generation_seed, user_id, 1);
                let image = self.generate_preference_only(&prepared, seed)?;
                self.scorer.embed_image(&image)
            }
        }
    }

    /// Persist trainable state together with the (possibly tuned) denoiser
    /// and scorer so a checkpoint fully determines generation.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::MissingCheckpoint("no state to save".into()))?;
        let mut tf = state.to_tensor_file();
        for (name, param) in self.denoiser.named_params() {
            tf.insert(name, param.clone());
        }
        for (name, param) in self.scorer.named_params() {
            tf.insert(name, param);
        }
        tf.meta.insert("l".into(), serde_json::json!(self.settings.l));
        tf.meta.insert("s".into(), serde_json::json!(self.settings.s));
        tf.meta
            .insert("backend_seed".into(), serde_json::json!(self.settings.backend_seed));
        tf.save(path)
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(format!(
                "checkpoint {} does not exist",
                path.display()
            )));
        }
        let tf = TensorFile::load(path)?;
        self.state = Some(TrainableState::from_tensor_file(&tf)?);
        self.denoiser.load_params(&tf)?;
        self.scorer.load_params(&tf)?;
        Ok(())
    }
}

/// Summaries and keyword sets for one user, ready for conditioning.
#[derive(Debug, Clone)]
pub struct PreparedUser {
    pub user_id: String,
    pub input_history: Vec<String>,
    pub summarized: SummarizedBehavior,
    pub preference_keywords: KeywordSet,
    pub target_item_id: String,
    pub target_summary: String,
    pub target_keywords: KeywordSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Averaged,
    Generated,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "averaged" => Ok(FeatureMode::Averaged),
            "generated" => Ok(FeatureMode::Generated),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}
