//! Image similarity metrics and the variant report types.
//!
//! SSIM uses a Gaussian window (sigma 1.5, 7x7 shrunk to fit small images),
//! K1 = 0.01, K2 = 0.03, dynamic range 1, valid window placement, averaged
//! over channels. The perceptual distance follows the layered-feature
//! recipe: unit-normalize each spatial position's channel vector, take the
//! mean squared difference per layer and sum the layers; the toy backend is
//! a frozen seeded multi-scale convolutional stack.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::ImageTensor;
use crate::rng::seed_rng;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_WINDOW: usize = 7;

fn gaussian_kernel(size: usize, sigma: f64) -> Array1<f64> {
    let half = (size / 2) as isize;
    let mut k = Array1::from_shape_fn(size, |i| {
        let d = (i as isize - half) as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    });
    let sum = k.sum();
    k.mapv_inplace(|v| v / sum);
    k
}

/// Window size actually used for an image: the default 7, shrunk to the
/// largest odd size that fits when the image is smaller.
fn window_size(h: usize, w: usize) -> usize {
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    size.max(1)
}

/// Separable valid-mode Gaussian filter of a 2-d plane.
fn gauss_filter_valid(plane: &Array2<f64>, kernel: &Array1<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let k = kernel.len();
    let out_h = h - k + 1;
    let out_w = w - k + 1;
    // rows first
    let mut tmp = Array2::<f64>::zeros((h, out_w));
    for y in 0..h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for i in 0..k {
                acc += plane[[y, x + i]] * kernel[i];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for i in 0..k {
                acc += tmp[[y + i, x]] * kernel[i];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Structural similarity, channel-averaged.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let (h, w, c) = a.shape();
    if (h, w, c) != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ssim inputs differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let size = window_size(h, w);
    let kernel = gaussian_kernel(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    for ch in 0..c {
        let xa = Array2::from_shape_fn((h, w), |(y, x)| a.pixels[[y, x, ch]]);
        let xb = Array2::from_shape_fn((h, w), |(y, x)| b.pixels[[y, x, ch]]);
        let mu_a = gauss_filter_valid(&xa, &kernel);
        let mu_b = gauss_filter_valid(&xb, &kernel);
        let aa = gauss_filter_valid(&(&xa * &xa), &kernel);
        let bb = gauss_filter_valid(&(&xb * &xb), &kernel);
        let ab = gauss_filter_valid(&(&xa * &xb), &kernel);

        let var_a = &aa - &(&mu_a * &mu_a);
        let var_b = &bb - &(&mu_b * &mu_b);
        let cov = &ab - &(&mu_a * &mu_b);

        let mut sum = 0.0;
        let (oh, ow) = mu_a.dim();
        for y in 0..oh {
            for x in 0..ow {
                let (ma, mb) = (mu_a[[y, x]], mu_b[[y, x]]);
                let num = (2.0 * ma * mb + c1) * (2.0 * cov[[y, x]] + c2);
                let den = (ma * ma + mb * mb + c1) * (var_a[[y, x]] + var_b[[y, x]] + c2);
                sum += num / den;
            }
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

// ---------------------------------------------------------------------------
// Perceptual distance

/// Layered image features for the perceptual metric.
pub trait FeatureBackend: Sync {
    fn features(&self, image: &ImageTensor) -> Result<Vec<Array3<f64>>>;
}

/// Frozen seeded multi-scale convolutional features.
pub struct ToyFeatures {
    kernels: Vec<(Array4<f64>, Array1<f64>)>,
}

impl ToyFeatures {
    pub fn new(seed: u64) -> Self {
        let mut rng = seed_rng(seed ^ 0x00ff_aa55);
        let dims = [(3usize, 6usize), (6, 8), (8, 8)];
        let kernels = dims
            .iter()
            .map(|&(cin, cout)| {
                let scale = 1.0 / ((cin * 9) as f64).sqrt();
                (
                    Array4::from_shape_fn((cout, cin, 3, 3), |_| rng.random_range(-scale..scale)),
                    Array1::from_shape_fn(cout, |_| rng.random_range(-0.1..0.1)),
                )
            })
            .collect();
        ToyFeatures { kernels }
    }
}

fn avg_pool2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    Array3::from_shape_fn((c, oh, ow), |(ch, y, xx)| {
        (x[[ch, 2 * y, 2 * xx]]
            + x[[ch, 2 * y + 1, 2 * xx]]
            + x[[ch, 2 * y, 2 * xx + 1]]
            + x[[ch, 2 * y + 1, 2 * xx + 1]])
            / 4.0
    })
}

impl FeatureBackend for ToyFeatures {
    fn features(&self, image: &ImageTensor) -> Result<Vec<Array3<f64>>> {
        let mut x = image.to_chw();
        let mut out = Vec::with_capacity(self.kernels.len());
        for (i, (k, b)) in self.kernels.iter().enumerate() {
            if i > 0 {
                x = avg_pool2(&x);
                let (_, h, w) = x.dim();
                if h == 0 || w == 0 {
                    break;
                }
            }
            x = crate::tape::conv2d_forward(&x, k, b).mapv(f64::tanh);
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Unit-normalize channel vectors at each spatial position.
fn channel_normalize(f: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = f.dim();
    let mut out = f.clone();
    for y in 0..h {
        for x in 0..w {
            let mut norm_sq = 0.0;
            for ch in 0..c {
                norm_sq += f[[ch, y, x]] * f[[ch, y, x]];
            }
            let inv = 1.0 / (norm_sq.sqrt() + 1e-10);
            for ch in 0..c {
                out[[ch, y, x]] *= inv;
            }
        }
    }
    out
}

/// Layered perceptual distance (lower = more similar).
pub fn perceptual_distance(
    a: &ImageTensor,
    b: &ImageTensor,
    features: &dyn FeatureBackend,
) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "perceptual inputs differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let fa = features.features(a)?;
    let fb = features.features(b)?;
    let mut total = 0.0;
    for (la, lb) in fa.iter().zip(fb.iter()) {
        let na = channel_normalize(la);
        let nb = channel_normalize(lb);
        let diff = &na - &nb;
        total += diff.mapv(|v| v * v).mean().unwrap_or(0.0);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Reports

/// Condition ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoEmbeddings,
    NoKeywords,
    NoBoth,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 4] {
        [
            AblationVariant::Full,
            AblationVariant::NoEmbeddings,
            AblationVariant::NoKeywords,
            AblationVariant::NoBoth,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoEmbeddings => "no_embeddings",
            AblationVariant::NoKeywords => "no_keywords",
            AblationVariant::NoBoth => "no_both",
        }
    }

    pub fn uses_soft_embeddings(&self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoKeywords)
    }

    pub fn uses_keywords(&self) -> bool {
        matches!(self, AblationVariant::Full | AblationVariant::NoEmbeddings)
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationVariant::Full),
            "no_embeddings" => Ok(AblationVariant::NoEmbeddings),
            "no_keywords" => Ok(AblationVariant::NoKeywords),
            "no_both" => Ok(AblationVariant::NoBoth),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

/// Per-user similarity measurements for one variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSimilarityRow {
    pub user_id: String,
    pub lpips_history: f64,
    pub lpips_target: f64,
    pub ssim_history: f64,
    pub ssim_target: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub variant: AblationVariant,
    pub rows: Vec<UserSimilarityRow>,
    pub mean_lpips_history: f64,
    pub mean_lpips_target: f64,
    pub mean_ssim_history: f64,
    pub mean_ssim_target: f64,
}

impl SimilarityReport {
    pub fn from_rows(variant: AblationVariant, rows: Vec<UserSimilarityRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let sum = |f: fn(&UserSimilarityRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        SimilarityReport {
            variant,
            mean_lpips_history: sum(|r| r.lpips_history),
            mean_lpips_target: sum(|r| r.lpips_target),
            mean_ssim_history: sum(|r| r.ssim_history),
            mean_ssim_target: sum(|r| r.ssim_target),
            rows,
        }
    }

    /// One CSV line matching the report header.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.variant.name(),
            self.mean_lpips_history,
            self.mean_lpips_target,
            self.mean_ssim_history,
            self.mean_ssim_target
        )
    }
}

pub const REPORT_CSV_HEADER: &str =
    "variant,lpips_history,lpips_target,ssim_history,ssim_target";

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3 as A3;

    fn image_from_fn(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> ImageTensor {
        ImageTensor {
            pixels: A3::from_shape_fn((h, w, 3), |(y, x, c)| f(y, x, c)),
        }
    }

    fn rand_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = seed_rng(seed);
        ImageTensor {
            pixels: A3::from_shape_fn((h, w, 3), |_| rng.random_range(0.0..1.0)),
        }
    }

    /// Direct per-window evaluation of the SSIM definition; the independent
    /// oracle for the filtered implementation.
    pub(super) fn ssim_brute_force(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let (h, w, c) = a.shape();
        let size = window_size(h, w);
        let kernel = gaussian_kernel(size, SSIM_SIGMA);
        let c1 = (SSIM_K1 * 1.0f64).powi(2);
        let c2 = (SSIM_K2 * 1.0f64).powi(2);
        let mut total = 0.0;
        for ch in 0..c {
            let mut sum = 0.0;
            let mut count = 0usize;
            for y0 in 0..=(h - size) {
                for x0 in 0..=(w - size) {
                    let mut mu_a = 0.0;
                    let mut mu_b = 0.0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let weight = kernel[dy] * kernel[dx];
                            mu_a += weight * a.pixels[[y0 + dy, x0 + dx, ch]];
                            mu_b += weight * b.pixels[[y0 + dy, x0 + dx, ch]];
                        }
                    }
                    let mut var_a = 0.0;
                    let mut var_b = 0.0;
                    let mut cov = 0.0;
                    for dy in 0..size {
                        for dx in 0..size {
                            let weight = kernel[dy] * kernel[dx];
                            let va = a.pixels[[y0 + dy, x0 + dx, ch]];
                            let vb = b.pixels[[y0 + dy, x0 + dx, ch]];
                            var_a += weight * va * va;
                            var_b += weight * vb * vb;
                            cov += weight * va * vb;
                        }
                    }
                    var_a -= mu_a * mu_a;
                    var_b -= mu_b * mu_b;
                    cov -= mu_a * mu_b;
                    let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                    sum += num / den;
                    count += 1;
                }
            }
            total += sum / count as f64;
        }
        total / c as f64
    }

    #[test]
    fn ssim_identity_is_one() {
        let a = rand_image(16, 16, 3);
        let s = ssim(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "ssim(a,a) = {s}");
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let zeros = image_from_fn(16, 16, |_, _, _| 0.0);
        let ones = image_from_fn(16, 16, |_, _, _| 1.0);
        let s = ssim(&zeros, &ones).unwrap();
        let c1 = 1e-4;
        let expected = c1 / (1.0 + c1);
        assert!(
            (s - expected).abs() < 1e-7,
            "ssim(0,1) = {s}, closed form {expected}"
        );
    }

    #[test]
    fn ssim_matches_brute_force_oracle_on_8x8() {
        for seed in 0..20u64 {
            let a = rand_image(8, 8, 100 + seed);
            let b = rand_image(8, 8, 200 + seed);
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_brute_force(&a, &b);
            assert!(
                (fast - slow).abs() < 1e-6,
                "seed {seed}: fast {fast} vs oracle {slow}"
            );
        }
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = rand_image(12, 12, 7);
        let b = rand_image(12, 12, 8);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab <= 1.0);
    }

    #[test]
    fn ssim_shape_mismatch_is_an_error() {
        let a = rand_image(8, 8, 1);
        let b = rand_image(16, 16, 1);
        assert!(matches!(ssim(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn ssim_window_shrinks_for_small_images() {
        let a = rand_image(5, 5, 2);
        let b = rand_image(5, 5, 3);
        // 5x5 image: window shrinks to 5; a single valid position
        let s = ssim(&a, &b).unwrap();
        assert!(s.is_finite());
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perceptual_distance_identity_symmetry_nonneg() {
        let feats = ToyFeatures::new(11);
        let a = rand_image(16, 16, 4);
        let b = rand_image(16, 16, 5);
        assert_eq!(perceptual_distance(&a, &a, &feats).unwrap(), 0.0);
        let ab = perceptual_distance(&a, &b, &feats).unwrap();
        let ba = perceptual_distance(&b, &a, &feats).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab >= 0.0);
    }

    #[test]
    fn perceptual_distance_grows_with_noise() {
        let feats = ToyFeatures::new(11);
        let a = rand_image(16, 16, 6);
        let mut rng = seed_rng(99);
        let noise: Vec<f64> = (0..16 * 16 * 3)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let perturb = |sigma: f64| {
            let mut p = a.clone();
            for (i, v) in p.pixels.iter_mut().enumerate() {
                *v = (*v + sigma * noise[i]).clamp(0.0, 1.0);
            }
            p
        };
        let small = perceptual_distance(&a, &perturb(0.05), &feats).unwrap();
        let large = perceptual_distance(&a, &perturb(0.2), &feats).unwrap();
        assert!(
            large > small,
            "distance not monotone under noise: {small} vs {large}"
        );
    }

    #[test]
    fn report_aggregates_means() {
        let rows = vec![
            UserSimilarityRow {
                user_id: "a".into(),
                lpips_history: 0.2,
                lpips_target: 0.4,
                ssim_history: 0.5,
                ssim_target: 0.6,
            },
            UserSimilarityRow {
                user_id: "b".into(),
                lpips_history: 0.4,
                lpips_target: 0.2,
                ssim_history: 0.7,
                ssim_target: 0.2,
            },
        ];
        let report = SimilarityReport::from_rows(AblationVariant::Full, rows);
        assert!((report.mean_lpips_history - 0.3).abs() < 1e-12);
        assert!((report.mean_ssim_target - 0.4).abs() < 1e-12);
        assert!(report.csv_row().starts_with("full,"));
    }
}
