//! Small frozen causal transformer used as the in-process base model.
//!
//! Weights are drawn once from a seeded RNG and never updated; the only
//! trainable inputs are the multimodal token embeddings and the per-layer
//! prefix context that callers pass into the forward pass. Prefix rows are
//! projected through the frozen key/value maps and prepended as attention
//! context; they never appear in the output sequence.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::llm::{ForwardOutput, LlmBackend, MultimodalTokens, PrefixEmbeddings, TextGenerate, TokenId};
use crate::rng::{fnv1a, seed_rng};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct ToyLmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub context_limit: usize,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 512,
            context_limit: 512,
        }
    }
}

struct LayerWeights {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    bq: Array2<f64>,
    bk: Array2<f64>,
    bv: Array2<f64>,
    bo: Array2<f64>,
    w1: Array2<f64>,
    b1: Array2<f64>,
    w2: Array2<f64>,
    b2: Array2<f64>,
}

/// Frozen toy language model.
pub struct ToyLm {
    cfg: ToyLmConfig,
    embedding: Array2<f64>,
    positional: Array2<f64>,
    layers: Vec<LayerWeights>,
}

/// Differentiable forward handles plus per-layer attention context widths.
pub struct TapeForward {
    pub prompt_embeddings: Var,
    pub multimodal_embeddings: Var,
    pub attn_context: Vec<usize>,
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn sinusoidal(positions: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((positions, d), |(p, i)| {
        let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = p as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl ToyLm {
    pub fn new(cfg: &ToyLmConfig, seed: u64) -> Self {
        assert!(cfg.d_model % cfg.n_heads == 0, "heads must divide d_model");
        let mut rng = seed_rng(seed ^ 0x7f4a_7c15);
        let d = cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let embedding = rand_matrix(&mut rng, cfg.vocab_size, d, 1.0);
        let positional = sinusoidal(cfg.context_limit, d) * 0.1;
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                wq: rand_matrix(&mut rng, d, d, scale),
                wk: rand_matrix(&mut rng, d, d, scale),
                wv: rand_matrix(&mut rng, d, d, scale),
                wo: rand_matrix(&mut rng, d, d, scale),
                bq: rand_matrix(&mut rng, 1, d, 0.05),
                bk: rand_matrix(&mut rng, 1, d, 0.05),
                bv: rand_matrix(&mut rng, 1, d, 0.05),
                bo: rand_matrix(&mut rng, 1, d, 0.05),
                w1: rand_matrix(&mut rng, d, 4 * d, scale),
                b1: rand_matrix(&mut rng, 1, 4 * d, 0.05),
                w2: rand_matrix(&mut rng, 4 * d, d, 0.5 / (d as f64).sqrt()),
                b2: rand_matrix(&mut rng, 1, d, 0.05),
            })
            .collect();
        ToyLm {
            cfg: cfg.clone(),
            embedding,
            positional,
            layers,
        }
    }

    /// Hash of all frozen weights; used to assert the base model never moves.
    pub fn weight_fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        let mut push = |m: &Array2<f64>| {
            for v in m.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        };
        push(&self.embedding);
        push(&self.positional);
        for l in &self.layers {
            for m in [
                &l.wq, &l.wk, &l.wv, &l.wo, &l.bq, &l.bk, &l.bv, &l.bo, &l.w1, &l.b1, &l.w2, &l.b2,
            ] {
                push(m);
            }
        }
        fnv1a(&bytes)
    }

    /// Column-concatenate via transpose + row-concat (no extra backward op).
    fn concat_cols(tape: &mut Tape, parts: &[Var]) -> Var {
        let transposed: Vec<Var> = parts.iter().map(|v| tape.transpose(*v)).collect();
        let stacked = tape.concat_rows(&transposed);
        tape.transpose(stacked)
    }

    /// Record the forward pass on a tape. `prefix_vars` holds one S x d
    /// variable per layer (may be empty matrices when S = 0); `mm_var` is the
    /// L x d multimodal embedding variable.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        prefix_vars: &[Var],
        prompt_tokens: &[TokenId],
        mm_var: Var,
    ) -> TapeForward {
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let head_dim = d / heads;
        let t_prompt = prompt_tokens.len();
        let l_mm = tape.value(mm_var).shape()[0];
        let t_total = t_prompt + l_mm;
        assert!(
            t_total <= self.cfg.context_limit,
            "sequence {} exceeds context limit {}",
            t_total,
            self.cfg.context_limit
        );
        assert_eq!(prefix_vars.len(), self.cfg.n_layers, "one prefix block per layer");

        let tok_emb = Array2::from_shape_fn((t_prompt, d), |(i, j)| {
            self.embedding[[prompt_tokens[i] % self.cfg.vocab_size, j]]
        });
        let pos = self
            .positional
            .slice(ndarray::s![..t_total, ..])
            .to_owned();

        let tok_const = tape.constant2(tok_emb);
        let mut x = if t_prompt == 0 {
            mm_var
        } else {
            tape.concat_rows(&[tok_const, mm_var])
        };
        let pos_const = tape.constant2(pos);
        x = tape.add(x, pos_const);

        let mut attn_context = Vec::with_capacity(self.cfg.n_layers);
        for (layer, prefix) in self.layers.iter().zip(prefix_vars.iter()) {
            let s_len = tape.value(*prefix).shape()[0];
            let kv_len = s_len + t_total;
            attn_context.push(kv_len);

            let h = tape.layer_norm_rows(x, 1e-5);
            let kv_in = if s_len == 0 {
                h
            } else {
                tape.concat_rows(&[*prefix, h])
            };

            let wq = tape.constant2(layer.wq.clone());
            let wk = tape.constant2(layer.wk.clone());
            let wv = tape.constant2(layer.wv.clone());
            let bq = tape.constant2(layer.bq.clone());
            let bk = tape.constant2(layer.bk.clone());
            let bv = tape.constant2(layer.bv.clone());
            let q_all = tape.matmul(h, wq);
            let q_all = tape.add_row(q_all, bq);
            let k_all = tape.matmul(kv_in, wk);
            let k_all = tape.add_row(k_all, bk);
            let v_all = tape.matmul(kv_in, wv);
            let v_all = tape.add_row(v_all, bv);

            // causal over real positions; prefix context visible everywhere
            let mask = Array2::from_shape_fn((t_total, kv_len), |(i, j)| {
                if j < s_len || j - s_len <= i {
                    0.0
                } else {
                    -1e9
                }
            });
            let mask_const = tape.constant2(mask);

            let mut head_outputs = Vec::with_capacity(heads);
            for hh in 0..heads {
                let (c0, c1) = (hh * head_dim, (hh + 1) * head_dim);
                let qh = tape.slice_cols(q_all, c0, c1);
                let kh = tape.slice_cols(k_all, c0, c1);
                let vh = tape.slice_cols(v_all, c0, c1);
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt);
                let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
                let scores = tape.add(scores, mask_const);
                let attn = tape.softmax_rows(scores);
                head_outputs.push(tape.matmul(attn, vh));
            }
            let merged = Self::concat_cols(tape, &head_outputs);
            let wo = tape.constant2(layer.wo.clone());
            let bo = tape.constant2(layer.bo.clone());
            let attn_out = tape.matmul(merged, wo);
            let attn_out = tape.add_row(attn_out, bo);
            x = tape.add(x, attn_out);

            let h2 = tape.layer_norm_rows(x, 1e-5);
            let w1 = tape.constant2(layer.w1.clone());
            let b1 = tape.constant2(layer.b1.clone());
            let w2 = tape.constant2(layer.w2.clone());
            let b2 = tape.constant2(layer.b2.clone());
            let mid = tape.matmul(h2, w1);
            let mid = tape.add_row(mid, b1);
            let act = tape.gelu(mid);
            let mlp = tape.matmul(act, w2);
            let mlp = tape.add_row(mlp, b2);
            x = tape.add(x, mlp);
        }

        let out = tape.layer_norm_rows(x, 1e-5);
        let prompt_embeddings = tape.slice_rows(out, 0, t_prompt);
        let multimodal_embeddings = tape.slice_rows(out, t_prompt, t_total);
        TapeForward {
            prompt_embeddings,
            multimodal_embeddings,
            attn_context,
        }
    }

    /// Plain forward returning values plus the per-layer attention widths.
    pub fn forward_debug(
        &self,
        prefixes: &PrefixEmbeddings,
        prompt_tokens: &[TokenId],
        mm_tokens: &MultimodalTokens,
    ) -> Result<(ForwardOutput, Vec<usize>)> {
        let mut tape = Tape::new();
        let prefix_vars: Vec<Var> = if prefixes.per_layer.is_empty() {
            (0..self.cfg.n_layers)
                .map(|_| tape.constant2(Array2::zeros((0, self.cfg.d_model))))
                .collect()
        } else {
            prefixes
                .per_layer
                .iter()
                .map(|m| tape.constant2(m.clone()))
                .collect()
        };
        let mm_var = tape.constant2(mm_tokens.embeddings.clone());
        let fwd = self.forward_tape(&mut tape, &prefix_vars, prompt_tokens, mm_var);
        Ok((
            ForwardOutput {
                prompt_embeddings: tape.value2(fwd.prompt_embeddings),
                multimodal_embeddings: tape.value2(fwd.multimodal_embeddings),
            },
            fwd.attn_context,
        ))
    }

    /// Token ids reserved above the base vocabulary for the L multimodal
    /// tokens.
    pub fn multimodal_token_ids(&self, l: usize) -> Vec<TokenId> {
        (0..l).map(|i| self.cfg.vocab_size + i).collect()
    }
}

impl TextGenerate for ToyLm {
    fn generate(&self, _prompt: &str) -> Result<String> {
        Err(crate::error::Error::Unsupported(
            "the toy base model does not generate text; use the mock or http backend".into(),
        ))
    }
}

impl LlmBackend for ToyLm {
    fn tokenize(&self, prompt: &str) -> Vec<TokenId> {
        prompt
            .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
            .filter(|w| !w.is_empty())
            .map(|w| (fnv1a(w.to_lowercase().as_bytes()) as usize) % self.cfg.vocab_size)
            .collect()
    }

    fn embedding_dim(&self) -> usize {
        self.cfg.d_model
    }

    fn context_limit(&self) -> usize {
        self.cfg.context_limit
    }

    fn num_layers(&self) -> usize {
        self.cfg.n_layers
    }

    fn forward(
        &self,
        prefixes: &PrefixEmbeddings,
        prompt_tokens: &[TokenId],
        mm_tokens: &MultimodalTokens,
    ) -> Result<ForwardOutput> {
        Ok(self.forward_debug(prefixes, prompt_tokens, mm_tokens)?.0)
    }

    fn as_toy(&self) -> Option<&ToyLm> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_is_stable_and_case_insensitive() {
        let lm = ToyLm::new(&ToyLmConfig::default(), 7);
        assert_eq!(lm.tokenize("Crimson stripes"), lm.tokenize("crimson STRIPES"));
        assert_eq!(lm.tokenize("a b a"), {
            let t = lm.tokenize("a b a");
            vec![t[0], t[1], t[0]]
        });
        assert!(lm.tokenize("  ,, !! ").is_empty());
    }

    #[test]
    fn fingerprint_changes_with_seed() {
        let a = ToyLm::new(&ToyLmConfig::default(), 7);
        let b = ToyLm::new(&ToyLmConfig::default(), 8);
        assert_ne!(a.weight_fingerprint(), b.weight_fingerprint());
        let a2 = ToyLm::new(&ToyLmConfig::default(), 7);
        assert_eq!(a.weight_fingerprint(), a2.weight_fingerprint());
    }

    #[test]
    fn empty_prefix_forward_works() {
        let lm = ToyLm::new(&ToyLmConfig::default(), 7);
        let prefixes = PrefixEmbeddings { per_layer: vec![] };
        let mm = MultimodalTokens {
            embeddings: Array2::from_elem((2, 16), 0.1),
        };
        let out = lm.forward(&prefixes, &lm.tokenize("hi there"), &mm).unwrap();
        assert_eq!(out.prompt_embeddings.nrows(), 2);
        assert_eq!(out.multimodal_embeddings.nrows(), 2);
    }
}
