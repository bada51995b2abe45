//! Training of the soft preference embedding path.
//!
//! The trainable state is exactly the multimodal token embeddings, the
//! per-layer prefix context and the mapper; the base model stays frozen and
//! the denoiser is frozen unless explicitly unfrozen for a benchmark run.
//! Supervision is the last history item's image: noise it, denoise it under
//! the preference condition, and take the MSE back to the clean image.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::SummarizedBehavior;
use crate::error::{Error, Result};
use crate::generator::{ConditionSequence, Denoiser, ImageTensor, TextEncoder};
use crate::llm::{LlmBackend, Mapper, MultimodalTokens, PrefixEmbeddings, ToyLm};
use crate::prompt::{build_behavior_prompt, KeywordSet, PromptTemplate};
use crate::rng::{derive_seed, seed_rng, standard_normal};
use crate::store::TensorFile;
use crate::tape::{Tape, Var};

/// One supervised example: everything but the last item as input, the last
/// item's image as supervision.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub user_id: String,
    pub input_behavior: SummarizedBehavior,
    pub supervision_image: ImageTensor,
    pub preference_keywords: KeywordSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// number of multimodal tokens
    pub l: usize,
    /// prefix length per layer
    pub s: usize,
    #[serde(default)]
    pub grad_check: bool,
    #[serde(default)]
    pub unfreeze_denoiser: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            steps: 200,
            seed: 0,
            l: 4,
            s: 4,
            grad_check: false,
            unfreeze_denoiser: false,
        }
    }
}

/// The only trainable parameters (plus the denoiser when unfrozen).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableState {
    pub mm_tokens: MultimodalTokens,
    pub prefixes: PrefixEmbeddings,
    pub mapper: Mapper,
}

impl TrainableState {
    pub fn init(l: usize, s: usize, n_layers: usize, d_llm: usize, d_gen: usize, seed: u64) -> Self {
        let mut rng = seed_rng(seed ^ 0x1234_abcd);
        let mm = Array2::from_shape_fn((l, d_llm), |_| rng.random_range(-0.5..0.5));
        let prefixes = (0..n_layers)
            .map(|_| Array2::from_shape_fn((s, d_llm), |_| rng.random_range(-0.5..0.5)))
            .collect();
        let mscale = 1.0 / (d_llm as f64).sqrt();
        let weight = Array2::from_shape_fn((d_llm, d_gen), |_| rng.random_range(-mscale..mscale));
        TrainableState {
            mm_tokens: MultimodalTokens { embeddings: mm },
            prefixes: PrefixEmbeddings { per_layer: prefixes },
            mapper: Mapper {
                weight,
                bias: Array1::zeros(d_gen),
            },
        }
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut tf = TensorFile::new();
        tf.insert("mm_tokens", self.mm_tokens.embeddings.clone().into_dyn());
        for (i, p) in self.prefixes.per_layer.iter().enumerate() {
            tf.insert(format!("prefix_layer_{i}"), p.clone().into_dyn());
        }
        tf.insert("mapper.weight", self.mapper.weight.clone().into_dyn());
        tf.insert("mapper.bias", self.mapper.bias.clone().into_dyn());
        tf
    }

    pub fn from_tensor_file(tf: &TensorFile) -> Result<Self> {
        let get2 = |name: &str| -> Result<Array2<f64>> {
            tf.get(name)
                .ok_or_else(|| Error::MissingCheckpoint(format!("tensor {name} absent")))?
                .clone()
                .into_dimensionality()
                .map_err(|e| Error::TensorFormat(format!("{name}: {e}")))
        };
        let mm = get2("mm_tokens")?;
        let mut per_layer = Vec::new();
        let mut i = 0;
        while let Some(p) = tf.get(&format!("prefix_layer_{i}")) {
            per_layer.push(
                p.clone()
                    .into_dimensionality()
                    .map_err(|e| Error::TensorFormat(format!("prefix_layer_{i}: {e}")))?,
            );
            i += 1;
        }
        let weight = get2("mapper.weight")?;
        let bias: Array1<f64> = tf
            .get("mapper.bias")
            .ok_or_else(|| Error::MissingCheckpoint("tensor mapper.bias absent".into()))?
            .clone()
            .into_dimensionality()
            .map_err(|e| Error::TensorFormat(format!("mapper.bias: {e}")))?;
        Ok(TrainableState {
            mm_tokens: MultimodalTokens { embeddings: mm },
            prefixes: PrefixEmbeddings { per_layer },
            mapper: Mapper { weight, bias },
        })
    }
}

/// Frozen models the trainer runs through.
pub struct TrainerModels<'a> {
    pub lm: &'a ToyLm,
    pub encoder: &'a TextEncoder,
    pub denoiser: &'a mut Denoiser,
    pub template: &'a PromptTemplate,
}

/// Concatenate soft embeddings before hard keyword embeddings.
pub fn build_condition(
    e_m: &Array2<f64>,
    keywords: &KeywordSet,
    encoder: &TextEncoder,
) -> Result<ConditionSequence> {
    let limit = encoder.token_limit();
    if keywords.keywords.is_empty() {
        // soft embeddings alone
        return ConditionSequence::new(e_m.clone(), limit);
    }
    let e_k = encoder.encode_text(&keywords.keywords)?;
    let total = e_m.nrows() + e_k.len();
    if total > limit {
        return Err(Error::TokenOverflow { len: total, limit });
    }
    if e_m.nrows() == 0 {
        return Ok(e_k);
    }
    let combined = ndarray::concatenate(Axis(0), &[e_m.view(), e_k.vectors().view()])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    ConditionSequence::new(combined, limit)
}

struct StepTape {
    tape: Tape,
    loss: Var,
    mm: Var,
    prefixes: Vec<Var>,
    mapper_w: Var,
    mapper_b: Var,
    denoiser_bound: Vec<(String, Var)>,
}

fn record_step(
    example: &TrainingExample,
    state: &TrainableState,
    models: &TrainerModels<'_>,
    noise: &Array3<f64>,
    train_denoiser: bool,
) -> Result<StepTape> {
    let prompt = build_behavior_prompt(models.template, &example.input_behavior);
    let tokens = models.lm.tokenize(&prompt);
    let total = state.prefixes.prefix_len() + tokens.len() + state.mm_tokens.count();
    if total > models.lm.context_limit() {
        return Err(Error::ContextOverflow {
            over: total - models.lm.context_limit(),
        });
    }

    let mut tape = Tape::new();
    let prefix_vars: Vec<Var> = state
        .prefixes
        .per_layer
        .iter()
        .map(|p| tape.leaf2(p.clone()))
        .collect();
    let mm_var = tape.leaf2(state.mm_tokens.embeddings.clone());
    let fwd = models.lm.forward_tape(&mut tape, &prefix_vars, &tokens, mm_var);

    let mapper_w = tape.leaf2(state.mapper.weight.clone());
    let mapper_b = tape.leaf2(state.mapper.bias.clone().insert_axis(Axis(0)));
    let e_m_lin = tape.matmul(fwd.multimodal_embeddings, mapper_w);
    let e_m = tape.add_row(e_m_lin, mapper_b);

    // hard keyword embeddings are constants: the generator text encoder is
    // frozen and receives no gradient
    let e_k = models.encoder.encode_text(&example.preference_keywords.keywords)?;
    let cond_total = state.mm_tokens.count() + e_k.len();
    if cond_total > models.encoder.token_limit() {
        return Err(Error::TokenOverflow {
            len: cond_total,
            limit: models.encoder.token_limit(),
        });
    }
    let e_k_var = tape.constant2(e_k.vectors().clone());
    let condition = tape.concat_rows(&[e_m, e_k_var]);

    let m_s = example.supervision_image.to_chw();
    let noisy = &m_s + noise;
    let noisy_var = tape.constant(noisy.into_dyn());
    let mut denoiser_bound = Vec::new();
    let m_d = models.denoiser.forward_tape(
        &mut tape,
        noisy_var,
        condition,
        train_denoiser,
        &mut denoiser_bound,
    );
    let loss = tape.mse_against(m_d, &m_s.into_dyn());
    Ok(StepTape {
        tape,
        loss,
        mm: mm_var,
        prefixes: prefix_vars,
        mapper_w,
        mapper_b,
        denoiser_bound,
    })
}

fn noise_for(example: &TrainingExample, cfg: &TrainConfig, visit: u64) -> Array3<f64> {
    let (h, w, c) = example.supervision_image.shape();
    let mut rng = seed_rng(derive_seed(cfg.seed, &example.user_id, visit));
    Array3::from_shape_fn((c, h, w), |_| standard_normal(&mut rng))
}

/// One optimization step; returns the (pre-update) loss.
pub fn train_step(
    example: &TrainingExample,
    state: &mut TrainableState,
    models: &mut TrainerModels<'_>,
    cfg: &TrainConfig,
    step: usize,
    visit: u64,
) -> Result<f64> {
    let noise = noise_for(example, cfg, visit);
    let mut rec = record_step(example, state, models, &noise, cfg.unfreeze_denoiser)?;
    let loss = rec.tape.scalar(rec.loss);
    let grads = rec.tape.backward(rec.loss);

    let mut grad_norm_sq = 0.0;
    let mut collect = |g: Option<&ArrayD<f64>>| -> ArrayD<f64> {
        match g {
            Some(g) => {
                grad_norm_sq += g.iter().map(|v| v * v).sum::<f64>();
                g.clone()
            }
            None => ArrayD::zeros(ndarray::IxDyn(&[0])),
        }
    };
    let g_mm = collect(grads.get(rec.mm));
    let g_prefix: Vec<ArrayD<f64>> = rec.prefixes.iter().map(|p| collect(grads.get(*p))).collect();
    let g_w = collect(grads.get(rec.mapper_w));
    let g_b = collect(grads.get(rec.mapper_b));
    let g_denoiser: Vec<(String, ArrayD<f64>)> = rec
        .denoiser_bound
        .iter()
        .map(|(name, var)| (name.clone(), collect(grads.get(*var))))
        .collect();

    let grad_norm = grad_norm_sq.sqrt();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            loss,
            grad_norm,
        });
    }

    let lr = cfg.learning_rate;
    let apply2 = |p: &mut Array2<f64>, g: &ArrayD<f64>| {
        if g.len() == p.len() {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            *p -= &(&g2 * lr);
        }
    };
    apply2(&mut state.mm_tokens.embeddings, &g_mm);
    for (p, g) in state.prefixes.per_layer.iter_mut().zip(g_prefix.iter()) {
        apply2(p, g);
    }
    apply2(&mut state.mapper.weight, &g_w);
    if g_b.len() == state.mapper.bias.len() {
        let gb = g_b.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        state.mapper.bias = &state.mapper.bias - &(gb.row(0).to_owned() * lr);
    }
    if cfg.unfreeze_denoiser {
        let mut grad_map: std::collections::BTreeMap<String, ArrayD<f64>> =
            g_denoiser.into_iter().collect();
        for (name, param) in models.denoiser.named_params_mut() {
            if let Some(g) = grad_map.remove(&name) {
                if g.len() == param.len() {
                    *param -= &(&g * lr);
                }
            }
        }
    }
    Ok(loss)
}

/// Training outcome: final state, per-step loss curve, optional gradient
/// verification report.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainableState,
    pub loss_curve: Vec<(usize, f64)>,
    pub grad_report: Option<GradCheckReport>,
}

/// Plain SGD over the dataset in order, one example per step, noise
/// resampled per (example, visit) so evaluation order cannot matter.
pub fn train(
    dataset: &[TrainingExample],
    mut state: TrainableState,
    models: &mut TrainerModels<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    let grad_report = if cfg.grad_check {
        Some(grad_check(&dataset[0], &state, models, 64, 1e-5, cfg)?)
    } else {
        None
    };

    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut monitor = DivergenceMonitor::new();
    for step in 0..cfg.steps {
        let example = &dataset[step % dataset.len()];
        let visit = (step / dataset.len()) as u64;
        let loss = train_step(example, &mut state, models, cfg, step, visit)?;
        loss_curve.push((step, loss));
        if let Err(e) = monitor.observe(step, loss) {
            return Err(e);
        }
    }
    Ok(TrainOutcome {
        state,
        loss_curve,
        grad_report,
    })
}

/// Divergence rule: abort once the loss has stayed above ten times the
/// initial loss for fifty consecutive steps.
#[derive(Debug, Default)]
pub struct DivergenceMonitor {
    initial: Option<f64>,
    streak: usize,
}

pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 50;

impl DivergenceMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(loss);
        if loss > DIVERGENCE_FACTOR * initial {
            self.streak += 1;
            if self.streak >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    step,
                    loss,
                    initial,
                });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

/// Smoothed copy of a loss curve (trailing window mean), reporting only.
pub fn smooth_losses(curve: &[(usize, f64)], window: usize) -> Vec<(usize, f64)> {
    let window = window.max(1);
    curve
        .iter()
        .enumerate()
        .map(|(i, &(step, _))| {
            let start = i.saturating_sub(window - 1);
            let mean = curve[start..=i].iter().map(|&(_, l)| l).sum::<f64>() / (i - start + 1) as f64;
            (step, mean)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gradient verification

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub within_tolerance: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub fd_step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    /// At least `fraction` of sampled coordinates within tolerance per group.
    pub fn passes(&self, fraction: f64) -> bool {
        self.groups
            .iter()
            .all(|g| g.within_tolerance as f64 >= fraction * g.checked as f64)
    }
}

fn loss_value(
    example: &TrainingExample,
    state: &TrainableState,
    models: &TrainerModels<'_>,
    noise: &Array3<f64>,
) -> Result<f64> {
    let rec = record_step(example, state, models, noise, false)?;
    Ok(rec.tape.scalar(rec.loss))
}

/// Central finite differences against the analytic gradients for the three
/// trainable groups, sampling `samples` coordinates per group.
pub fn grad_check(
    example: &TrainingExample,
    state: &TrainableState,
    models: &TrainerModels<'_>,
    samples: usize,
    fd_step: f64,
    cfg: &TrainConfig,
) -> Result<GradCheckReport> {
    let tolerance = 1e-4;
    let noise = noise_for(example, cfg, 0);
    let mut rec = record_step(example, state, models, &noise, false)?;
    let grads = rec.tape.backward(rec.loss);

    let analytic_mm = grads
        .get(rec.mm)
        .cloned()
        .unwrap_or_else(|| ArrayD::zeros(state.mm_tokens.embeddings.shape().to_vec()));
    let analytic_prefix: Vec<ArrayD<f64>> = rec
        .prefixes
        .iter()
        .zip(state.prefixes.per_layer.iter())
        .map(|(v, p)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(p.shape().to_vec()))
        })
        .collect();
    let analytic_w = grads
        .get(rec.mapper_w)
        .cloned()
        .unwrap_or_else(|| ArrayD::zeros(state.mapper.weight.shape().to_vec()));
    let analytic_b = grads
        .get(rec.mapper_b)
        .cloned()
        .unwrap_or_else(|| ArrayD::zeros(ndarray::IxDyn(&[1, state.mapper.bias.len()])));

    let mut rng = seed_rng(derive_seed(cfg.seed, "grad-check", 0));
    let mut report = GradCheckReport {
        fd_step,
        tolerance,
        groups: Vec::new(),
    };

    // flat coordinate spaces per group
    enum Group {
        Mm,
        Prefix,
        Mapper,
    }
    for (name, group, dim) in [
        ("multimodal_tokens", Group::Mm, state.mm_tokens.embeddings.len()),
        (
            "prefixes",
            Group::Prefix,
            state.prefixes.per_layer.iter().map(|p| p.len()).sum(),
        ),
        (
            "mapper",
            Group::Mapper,
            state.mapper.weight.len() + state.mapper.bias.len(),
        ),
    ] {
        let mut within = 0usize;
        let mut max_rel: f64 = 0.0;
        let checked = samples.min(dim);
        for _ in 0..checked {
            let coord = rng.random_range(0..dim);
            let mut plus = state.clone();
            let mut minus = state.clone();
            let analytic = match group {
                Group::Mm => {
                    plus.mm_tokens.embeddings.as_slice_mut().unwrap()[coord] += fd_step;
                    minus.mm_tokens.embeddings.as_slice_mut().unwrap()[coord] -= fd_step;
                    analytic_mm.as_slice().unwrap()[coord]
                }
                Group::Prefix => {
                    let mut rest = coord;
                    let mut layer = 0;
                    while rest >= plus.prefixes.per_layer[layer].len() {
                        rest -= plus.prefixes.per_layer[layer].len();
                        layer += 1;
                    }
                    plus.prefixes.per_layer[layer].as_slice_mut().unwrap()[rest] += fd_step;
                    minus.prefixes.per_layer[layer].as_slice_mut().unwrap()[rest] -= fd_step;
                    analytic_prefix[layer].as_slice().unwrap()[rest]
                }
                Group::Mapper => {
                    let nw = plus.mapper.weight.len();
                    if coord < nw {
                        plus.mapper.weight.as_slice_mut().unwrap()[coord] += fd_step;
                        minus.mapper.weight.as_slice_mut().unwrap()[coord] -= fd_step;
                        analytic_w.as_slice().unwrap()[coord]
                    } else {
                        plus.mapper.bias[coord - nw] += fd_step;
                        minus.mapper.bias[coord - nw] -= fd_step;
                        analytic_b.as_slice().unwrap()[coord - nw]
                    }
                }
            };
            let lp = loss_value(example, &plus, models, &noise)?;
            let lm = loss_value(example, &minus, models, &noise)?;
            let fd = (lp - lm) / (2.0 * fd_step);
            let denom = analytic.abs().max(fd.abs());
            let rel = if denom < 1e-10 {
                0.0
            } else {
                (analytic - fd).abs() / denom
            };
            max_rel = max_rel.max(rel);
            if rel < tolerance {
                within += 1;
            }
        }
        report.groups.push(GroupReport {
            name: name.to_string(),
            checked,
            within_tolerance: within,
            max_rel_error: max_rel,
        });
    }
    Ok(report)
}
