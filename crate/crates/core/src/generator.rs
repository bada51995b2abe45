//! Desk-scale conditional generator and scorer.
//!
//! The text encoder turns keywords into a condition sequence, the denoiser
//! is a small convolutional stack modulated by the mean-pooled condition,
//! and the scorer is a frozen dual encoder (random-projection image side,
//! bag-of-tokens text side) that can optionally be aligned contrastively on
//! a labeled corpus.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{fnv1a, seed_rng, standard_normal};
use crate::tape::{Tape, Var};

pub const DEFAULT_TOKEN_LIMIT: usize = 77;

/// Condition sequence consumed by the denoiser: T x d_gen, T bounded by the
/// generator token limit.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSequence {
    vectors: Array2<f64>,
    token_limit: usize,
}

impl ConditionSequence {
    pub fn new(vectors: Array2<f64>, token_limit: usize) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::InvalidArgument("condition sequence is empty".into()));
        }
        if vectors.nrows() > token_limit {
            return Err(Error::TokenOverflow {
                len: vectors.nrows(),
                limit: token_limit,
            });
        }
        Ok(ConditionSequence { vectors, token_limit })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn token_limit(&self) -> usize {
        self.token_limit
    }
}

/// H x W x C image with values in [0,1] at output boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub pixels: Array3<f64>,
}

impl ImageTensor {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        ImageTensor {
            pixels: Array3::zeros((h, w, c)),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    /// Channel-first view for convolution.
    pub fn to_chw(&self) -> Array3<f64> {
        let (h, w, c) = self.pixels.dim();
        Array3::from_shape_fn((c, h, w), |(ch, y, x)| self.pixels[[y, x, ch]])
    }

    pub fn from_chw(chw: &Array3<f64>) -> Self {
        let (c, h, w) = chw.dim();
        ImageTensor {
            pixels: Array3::from_shape_fn((h, w, c), |(y, x, ch)| chw[[ch, y, x]]),
        }
    }

    pub fn clamp01(&self) -> Self {
        ImageTensor {
            pixels: self.pixels.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// Snap to the 8-bit grid so in-memory values equal a PNG round-trip.
    pub fn quantize_u8(&self) -> Self {
        ImageTensor {
            pixels: self
                .pixels
                .mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0),
        }
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let (h, w, c) = self.pixels.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "png export expects 3 channels, got {c}"
            )));
        }
        let mut buf = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = |ch: usize| (self.pixels[[y, x, ch]].clamp(0.0, 1.0) * 255.0).round() as u8;
                buf.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
        });
        Ok(ImageTensor { pixels })
    }

    /// Raw float sidecar in the shared tensor format.
    pub fn save_sidecar(&self, path: &std::path::Path) -> Result<()> {
        let mut tf = crate::store::TensorFile::new();
        tf.insert("pixels", self.pixels.clone().into_dyn());
        tf.save(path)
    }
}

// ---------------------------------------------------------------------------
// Text encoder

#[derive(Debug, Clone)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub d_gen: usize,
    pub token_limit: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            vocab_size: 512,
            d_gen: 8,
            token_limit: DEFAULT_TOKEN_LIMIT,
        }
    }
}

/// Frozen token-embedding text encoder with sinusoidal position mixing.
pub struct TextEncoder {
    cfg: TextEncoderConfig,
    embedding: Array2<f64>,
}

impl TextEncoder {
    pub fn new(cfg: &TextEncoderConfig, seed: u64) -> Self {
        let mut rng = seed_rng(seed ^ 0x3ec4_11d7);
        let embedding = Array2::from_shape_fn((cfg.vocab_size, cfg.d_gen), |_| {
            rng.random_range(-1.0..1.0)
        });
        TextEncoder {
            cfg: cfg.clone(),
            embedding,
        }
    }

    pub fn d_gen(&self) -> usize {
        self.cfg.d_gen
    }

    pub fn token_limit(&self) -> usize {
        self.cfg.token_limit
    }

    fn position_mix(&self, t: usize, i: usize) -> f64 {
        let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / self.cfg.d_gen as f64);
        let angle = t as f64 * rate;
        0.1 * if i % 2 == 0 { angle.sin() } else { angle.cos() }
    }

    /// One or more tokens per keyword (one per whitespace word). Errors on
    /// token counts beyond the limit; truncation is the caller's decision.
    pub fn encode_text(&self, keywords: &[String]) -> Result<ConditionSequence> {
        if keywords.is_empty() {
            return Err(Error::InvalidArgument("keywords must be non-empty".into()));
        }
        let mut token_ids = Vec::new();
        for keyword in keywords {
            for word in keyword.split_whitespace() {
                token_ids.push((fnv1a(word.to_lowercase().as_bytes()) as usize) % self.cfg.vocab_size);
            }
        }
        if token_ids.is_empty() {
            return Err(Error::InvalidArgument("keywords contain no tokens".into()));
        }
        if token_ids.len() > self.cfg.token_limit {
            return Err(Error::TokenOverflow {
                len: token_ids.len(),
                limit: self.cfg.token_limit,
            });
        }
        let vectors = Array2::from_shape_fn((token_ids.len(), self.cfg.d_gen), |(t, i)| {
            self.embedding[[token_ids[t], i]] + self.position_mix(t, i)
        });
        ConditionSequence::new(vectors, self.cfg.token_limit)
    }
}

// ---------------------------------------------------------------------------
// Denoiser

#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub hidden: usize,
    pub d_cond: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            image_h: 16,
            image_w: 16,
            image_c: 3,
            hidden: 8,
            d_cond: 8,
        }
    }
}

struct ConvStage {
    kernel: ArrayD<f64>,
    bias: ArrayD<f64>,
    film_w_scale: ArrayD<f64>,
    film_b_scale: ArrayD<f64>,
    film_w_shift: ArrayD<f64>,
    film_b_shift: ArrayD<f64>,
}

/// Conditional convolutional denoiser. Conditioning enters through
/// feature-wise affine modulation derived from the mean-pooled condition;
/// the last stage modulates the output channels directly.
pub struct Denoiser {
    cfg: DenoiserConfig,
    stages: Vec<ConvStage>,
}

impl Denoiser {
    pub fn new(cfg: &DenoiserConfig, seed: u64) -> Self {
        let mut rng = seed_rng(seed ^ 0x9e37_79b9);
        let dims = [
            (cfg.image_c, cfg.hidden),
            (cfg.hidden, cfg.hidden),
            (cfg.hidden, cfg.hidden),
            (cfg.hidden, cfg.image_c),
        ];
        let stages = dims
            .iter()
            .map(|&(cin, cout)| {
                let fan_in = (cin * 9) as f64;
                let kscale = 1.0 / fan_in.sqrt();
                let fscale = 0.5 / (cfg.d_cond as f64).sqrt();
                ConvStage {
                    kernel: ArrayD::from_shape_fn(vec![cout, cin, 3, 3], |_| {
                        rng.random_range(-kscale..kscale)
                    }),
                    bias: ArrayD::from_shape_fn(vec![cout], |_| rng.random_range(-0.02..0.02)),
                    film_w_scale: ArrayD::from_shape_fn(vec![cfg.d_cond, cout], |_| {
                        rng.random_range(-fscale..fscale)
                    }),
                    film_b_scale: ArrayD::zeros(vec![1, cout]),
                    film_w_shift: ArrayD::from_shape_fn(vec![cfg.d_cond, cout], |_| {
                        rng.random_range(-fscale..fscale)
                    }),
                    film_b_shift: ArrayD::zeros(vec![1, cout]),
                }
            })
            .collect();
        Denoiser {
            cfg: cfg.clone(),
            stages,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Named views of every parameter, checkpoint order.
    pub fn named_params(&self) -> Vec<(String, &ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("denoiser.stage{i}.kernel"), &s.kernel));
            out.push((format!("denoiser.stage{i}.bias"), &s.bias));
            out.push((format!("denoiser.stage{i}.film_w_scale"), &s.film_w_scale));
            out.push((format!("denoiser.stage{i}.film_b_scale"), &s.film_b_scale));
            out.push((format!("denoiser.stage{i}.film_w_shift"), &s.film_w_shift));
            out.push((format!("denoiser.stage{i}.film_b_shift"), &s.film_b_shift));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut ArrayD<f64>)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            out.push((format!("denoiser.stage{i}.kernel"), &mut s.kernel));
            out.push((format!("denoiser.stage{i}.bias"), &mut s.bias));
            out.push((format!("denoiser.stage{i}.film_w_scale"), &mut s.film_w_scale));
            out.push((format!("denoiser.stage{i}.film_b_scale"), &mut s.film_b_scale));
            out.push((format!("denoiser.stage{i}.film_w_shift"), &mut s.film_w_shift));
            out.push((format!("denoiser.stage{i}.film_b_shift"), &mut s.film_b_shift));
        }
        out
    }

    pub fn weight_fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for (_, p) in self.named_params() {
            for v in p.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    /// Restore any parameters present in a tensor file (shape-checked).
    pub fn load_params(&mut self, tf: &crate::store::TensorFile) -> Result<()> {
        for (name, param) in self.named_params_mut() {
            if let Some(stored) = tf.get(&name) {
                if stored.shape() != param.shape() {
                    return Err(Error::TensorFormat(format!(
                        "{name}: shape {:?} does not match expected {:?}",
                        stored.shape(),
                        param.shape()
                    )));
                }
                param.assign(stored);
            }
        }
        Ok(())
    }

    /// Record the denoising pass on a tape. When `trainable` is set the
    /// parameters are bound as leaves and reported through `bound`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        noisy_chw: Var,
        condition: Var,
        trainable: bool,
        bound: &mut Vec<(String, Var)>,
    ) -> Var {
        let pooled = tape.mean_rows(condition);
        let mut bind = |tape: &mut Tape, name: String, value: &ArrayD<f64>| -> Var {
            let var = if trainable {
                tape.leaf(value.clone())
            } else {
                tape.constant(value.clone())
            };
            if trainable {
                bound.push((name, var));
            }
            var
        };

        let mut x = noisy_chw;
        let last = self.stages.len() - 1;
        for (i, stage) in self.stages.iter().enumerate() {
            let kernel = bind(tape, format!("denoiser.stage{i}.kernel"), &stage.kernel);
            let bias = bind(tape, format!("denoiser.stage{i}.bias"), &stage.bias);
            let w_scale = bind(tape, format!("denoiser.stage{i}.film_w_scale"), &stage.film_w_scale);
            let b_scale = bind(tape, format!("denoiser.stage{i}.film_b_scale"), &stage.film_b_scale);
            let w_shift = bind(tape, format!("denoiser.stage{i}.film_w_shift"), &stage.film_w_shift);
            let b_shift = bind(tape, format!("denoiser.stage{i}.film_b_shift"), &stage.film_b_shift);

            x = tape.conv2d(x, kernel, bias);
            let scale_lin = tape.matmul(pooled, w_scale);
            let scale = tape.add(scale_lin, b_scale);
            let shift_lin = tape.matmul(pooled, w_shift);
            let shift = tape.add(shift_lin, b_shift);
            x = tape.film(x, scale, shift);
            if i != last {
                x = tape.silu(x);
            }
        }
        x
    }

    /// Plain (inference) denoising step: same shape in and out.
    pub fn denoise(&self, noisy: &ImageTensor, condition: &ConditionSequence) -> Result<ImageTensor> {
        let (h, w, c) = noisy.shape();
        if (h, w, c) != (self.cfg.image_h, self.cfg.image_w, self.cfg.image_c) {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects {}x{}x{}, got {h}x{w}x{c}",
                self.cfg.image_h, self.cfg.image_w, self.cfg.image_c
            )));
        }
        if condition.dim() != self.cfg.d_cond {
            return Err(Error::ShapeMismatch(format!(
                "condition dim {} does not match denoiser d_cond {}",
                condition.dim(),
                self.cfg.d_cond
            )));
        }
        let mut tape = Tape::new();
        let noisy_var = tape.constant(noisy.to_chw().into_dyn());
        let cond_var = tape.constant2(condition.vectors().clone());
        let mut bound = Vec::new();
        let out = self.forward_tape(&mut tape, noisy_var, cond_var, false, &mut bound);
        let chw = tape
            .value(out)
            .clone()
            .into_dimensionality::<Ix3>()
            .expect("denoiser output must be 3-d");
        Ok(ImageTensor::from_chw(&chw))
    }
}

/// Anything that can turn a weighted condition into an image. The toy
/// sampler below is the production path; tests may stub this.
pub trait ImageGenerator: Sync {
    fn generate(&self, condition: &ConditionSequence, seed: u64) -> Result<ImageTensor>;
}

/// K-step sampler: seeded Gaussian noise image refined by repeated
/// application of the denoiser, clamped at the output boundary.
pub struct Sampler<'a> {
    pub denoiser: &'a Denoiser,
    pub steps: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(denoiser: &'a Denoiser) -> Self {
        Sampler { denoiser, steps: 4 }
    }
}

impl ImageGenerator for Sampler<'_> {
    fn generate(&self, condition: &ConditionSequence, seed: u64) -> Result<ImageTensor> {
        let cfg = self.denoiser.config();
        let mut rng = seed_rng(seed);
        let mut image = ImageTensor {
            pixels: Array3::from_shape_fn((cfg.image_h, cfg.image_w, cfg.image_c), |_| {
                standard_normal(&mut rng)
            }),
        };
        for _ in 0..self.steps {
            image = self.denoiser.denoise(&image, condition)?;
        }
        Ok(image.clamp01())
    }
}

// ---------------------------------------------------------------------------
// Scorer

/// Dual encoder used for preference/accuracy scoring.
pub trait ScorerBackend: Sync {
    fn embed_image(&self, image: &ImageTensor) -> Result<Array1<f64>>;
    fn embed_text(&self, keywords: &[String]) -> Result<Array1<f64>>;
    fn dim(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct ToyScorerConfig {
    pub d_s: usize,
    pub vocab_size: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
}

impl Default for ToyScorerConfig {
    fn default() -> Self {
        ToyScorerConfig {
            d_s: 16,
            vocab_size: 512,
            image_h: 16,
            image_w: 16,
            image_c: 3,
        }
    }
}

/// Random-projection image encoder plus bag-of-tokens text encoder. Frozen
/// by default; [`ToyScorer::contrastive_tune`] aligns the image projection
/// with the text space on labeled (image, tags) pairs.
pub struct ToyScorer {
    cfg: ToyScorerConfig,
    w_img: Array2<f64>,
    b_img: Array1<f64>,
    token_table: Array2<f64>,
}

impl ToyScorer {
    pub fn new(cfg: &ToyScorerConfig, seed: u64) -> Self {
        let mut rng = seed_rng(seed ^ 0x51ed_270b);
        let n_pix = cfg.image_h * cfg.image_w * cfg.image_c;
        let scale = 1.0 / (n_pix as f64).sqrt();
        ToyScorer {
            cfg: cfg.clone(),
            w_img: Array2::from_shape_fn((n_pix, cfg.d_s), |_| rng.random_range(-scale..scale)),
            b_img: Array1::from_shape_fn(cfg.d_s, |_| rng.random_range(-0.2..0.2)),
            token_table: Array2::from_shape_fn((cfg.vocab_size, cfg.d_s), |_| {
                rng.random_range(-1.0..1.0)
            }),
        }
    }

    pub fn named_params(&self) -> Vec<(String, ArrayD<f64>)> {
        vec![
            ("scorer.w_img".into(), self.w_img.clone().into_dyn()),
            ("scorer.b_img".into(), self.b_img.clone().into_dyn()),
            ("scorer.token_table".into(), self.token_table.clone().into_dyn()),
        ]
    }

    pub fn load_params(&mut self, tf: &crate::store::TensorFile) -> Result<()> {
        if let Some(w) = tf.get("scorer.w_img") {
            self.w_img = w
                .clone()
                .into_dimensionality()
                .map_err(|e| Error::TensorFormat(e.to_string()))?;
        }
        if let Some(b) = tf.get("scorer.b_img") {
            self.b_img = b
                .clone()
                .into_dimensionality()
                .map_err(|e| Error::TensorFormat(e.to_string()))?;
        }
        Ok(())
    }

    fn flat(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        let (h, w, c) = image.shape();
        if (h, w, c) != (self.cfg.image_h, self.cfg.image_w, self.cfg.image_c) {
            return Err(Error::ShapeMismatch(format!(
                "scorer expects {}x{}x{}, got {h}x{w}x{c}",
                self.cfg.image_h, self.cfg.image_w, self.cfg.image_c
            )));
        }
        Ok(Array1::from_iter(image.pixels.iter().copied()))
    }

    fn text_tokens(&self, keywords: &[String]) -> Vec<usize> {
        keywords
            .iter()
            .flat_map(|k| k.split_whitespace())
            .map(|w| (fnv1a(w.to_lowercase().as_bytes()) as usize) % self.cfg.vocab_size)
            .collect()
    }

    /// Align the image projection with the text space: InfoNCE over
    /// in-batch negatives, plain SGD, text side frozen.
    pub fn contrastive_tune(
        &mut self,
        pairs: &[(ImageTensor, Vec<String>)],
        steps: usize,
        batch: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no pairs to tune on".into()));
        }
        let batch = batch.min(pairs.len()).max(2);
        let mut rng = seed_rng(seed ^ 0x77aa_1042);
        let temperature: f64 = 0.2;
        let mut losses = Vec::with_capacity(steps);

        // precompute flattened images and unit text embeddings
        let flats: Vec<Array1<f64>> = pairs
            .iter()
            .map(|(img, _)| self.flat(img))
            .collect::<Result<_>>()?;
        let texts: Vec<Array1<f64>> = pairs
            .iter()
            .map(|(_, tags)| self.embed_text(tags))
            .collect::<Result<_>>()?;

        for _ in 0..steps {
            let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..pairs.len())).collect();
            let mut x = Array2::zeros((batch, flats[0].len()));
            let mut t = Array2::zeros((batch, self.cfg.d_s));
            for (row, &i) in idx.iter().enumerate() {
                x.row_mut(row).assign(&flats[i]);
                let tn = &texts[i];
                let norm = tn.dot(tn).sqrt().max(1e-12);
                t.row_mut(row).assign(&(tn / norm));
            }

            let mut tape = Tape::new();
            let w = tape.leaf(self.w_img.clone().into_dyn());
            let b = tape.leaf(self.b_img.clone().insert_axis(Axis(0)).into_dyn());
            let xc = tape.constant2(x);
            let tc = tape.constant2(t.clone());
            let lin = tape.matmul(xc, w);
            let lin = tape.add_row(lin, b);
            let e_img = tape.tanh(lin);

            // row norms via E^2 @ ones
            let ones = tape.constant2(Array2::from_elem((self.cfg.d_s, 1), 1.0));
            let sq = tape.mul(e_img, e_img);
            let row_norm_sq = tape.matmul(sq, ones);
            let eps = tape.add_scalar(row_norm_sq, 1e-12);
            let inv_norm = tape.pow_const(eps, -0.5);

            let tct = tape.transpose(tc);
            let dots = tape.matmul(e_img, tct);
            let ones_row = tape.constant2(Array2::from_elem((1, batch), 1.0));
            let inv_outer = tape.matmul(inv_norm, ones_row);
            let cos = tape.mul(dots, inv_outer);
            let logits = tape.scale(cos, 1.0 / temperature);
            let probs = tape.softmax_rows(logits);
            let logp = tape.ln(probs);
            let eye = tape.constant2(Array2::eye(batch));
            let diag = tape.mul(logp, eye);
            let total = tape.sum_all(diag);
            let loss = tape.scale(total, -1.0 / batch as f64);

            losses.push(tape.scalar(loss));
            let grads = tape.backward(loss);
            if let Some(gw) = grads.get(w) {
                let gw2: Array2<f64> = gw.clone().into_dimensionality().unwrap();
                self.w_img = &self.w_img - &(gw2 * lr);
            }
            if let Some(gb) = grads.get(b) {
                let gb2: Array2<f64> = gb.clone().into_dimensionality().unwrap();
                self.b_img = &self.b_img - &(gb2.row(0).to_owned() * lr);
            }
        }
        Ok(losses)
    }
}

impl ScorerBackend for ToyScorer {
    fn embed_image(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        let flat = self.flat(image)?;
        Ok((flat.dot(&self.w_img) + &self.b_img).mapv(f64::tanh))
    }

    fn embed_text(&self, keywords: &[String]) -> Result<Array1<f64>> {
        if keywords.is_empty() {
            return Err(Error::InvalidArgument("keywords must be non-empty".into()));
        }
        let tokens = self.text_tokens(keywords);
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("keywords contain no tokens".into()));
        }
        let mut acc = Array1::<f64>::zeros(self.cfg.d_s);
        for tok in &tokens {
            acc += &self.token_table.row(*tok);
        }
        Ok(acc / tokens.len() as f64)
    }

    fn dim(&self) -> usize {
        self.cfg.d_s
    }
}

/// Cosine similarity between the scorer embeddings of an image and a
/// keyword list. Zero-norm embeddings are rejected.
pub fn score(scorer: &dyn ScorerBackend, image: &ImageTensor, keywords: &[String]) -> Result<f64> {
    let e_img = scorer.embed_image(image)?;
    let e_txt = scorer.embed_text(keywords)?;
    cosine(&e_img, &e_txt)
}

pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(a.dot(b) / (na * nb))
}
