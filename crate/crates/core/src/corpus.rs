//! Seeded synthetic corpus with a ground-truth personalization signal.
//!
//! Every user is assigned a style; each style owns a disjoint primary tag
//! set and a distinct 16x16 procedural texture. Items carry the style tags
//! plus item-specific tags (secondary color, motif, season), templated text
//! and a rendered image; the last item per user is reserved as the
//! supervision/target item. Pixels are quantized to the 8-bit grid at
//! creation so in-memory values match a PNG round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorRecord, ConversationTurn, ItemFeatures, Speaker};
use crate::error::{Error, Result};
use crate::generator::ImageTensor;
use crate::metrics::{perceptual_distance, FeatureBackend};
use crate::rng::{derive_seed, seed_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Stripes,
    Checks,
    Dots,
    Diagonal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternParams {
    pub kind: PatternKind,
    pub base_color: [f64; 3],
    pub period: usize,
}

/// One style: its tag vocabulary and procedural texture parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleProfile {
    pub style_id: String,
    /// primary color word, pattern word, style word, material word
    pub tag_vocabulary: Vec<String>,
    pub pattern_params: PatternParams,
}

const STYLE_TABLE: &[(&str, &str, &str, &str, PatternKind, [f64; 3], usize)] = &[
    ("crimson_stripes", "crimson", "stripes", "bold", PatternKind::Stripes, [0.85, 0.12, 0.15], 4),
    ("azure_checks", "azure", "checks", "minimalist", PatternKind::Checks, [0.10, 0.45, 0.85], 4),
    ("emerald_dots", "emerald", "dots", "cartoon", PatternKind::Dots, [0.10, 0.70, 0.35], 4),
    ("golden_waves", "golden", "waves", "vintage", PatternKind::Diagonal, [0.90, 0.75, 0.15], 4),
    ("purple_checks", "purple", "checks", "casual", PatternKind::Checks, [0.55, 0.15, 0.75], 6),
    ("pink_dots", "pink", "dots", "kid", PatternKind::Dots, [0.95, 0.45, 0.65], 6),
    ("red_stripes", "red", "stripes", "sporty", PatternKind::Stripes, [0.80, 0.10, 0.05], 6),
    ("green_waves", "green", "waves", "youth", PatternKind::Diagonal, [0.20, 0.60, 0.20], 6),
];

const MATERIALS: &[&str] = &["cotton", "denim", "silk", "wool", "linen", "leather", "fabric", "cotton"];
const SECONDARY_COLORS: &[&str] = &["black", "white", "blue", "yellow", "gray"];
const MOTIFS: &[&str] = &["bear", "stars", "flowers", "hearts", "moons", "clouds"];
const SEASONS: &[&str] = &["summer", "winter", "spring", "autumn"];
const GARMENTS: &[&str] = &["shirt", "skirt", "jacket", "hoodie", "dress", "scarf"];

fn color_value(name: &str) -> [f64; 3] {
    match name {
        "black" => [0.05, 0.05, 0.05],
        "white" => [0.95, 0.95, 0.95],
        "blue" => [0.15, 0.25, 0.80],
        "yellow" => [0.95, 0.90, 0.20],
        "gray" => [0.55, 0.55, 0.55],
        _ => [0.5, 0.5, 0.5],
    }
}

pub fn default_styles(num_styles: usize) -> Vec<StyleProfile> {
    (0..num_styles)
        .map(|i| {
            let (id, color, pattern, style_word, kind, base, period) = STYLE_TABLE[i % STYLE_TABLE.len()];
            StyleProfile {
                style_id: id.to_string(),
                tag_vocabulary: vec![
                    color.to_string(),
                    pattern.to_string(),
                    style_word.to_string(),
                    MATERIALS[i % STYLE_TABLE.len()].to_string(),
                ],
                pattern_params: PatternParams {
                    kind,
                    base_color: base,
                    period,
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_users: usize,
    pub num_styles: usize,
    pub items_per_user: usize,
    pub seed: u64,
    #[serde(default = "default_test_users")]
    pub test_users: usize,
    #[serde(default = "default_image_side")]
    pub image_side: usize,
}

fn default_test_users() -> usize {
    16
}
fn default_image_side() -> usize {
    16
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_users: 64,
            num_styles: 4,
            items_per_user: 8,
            seed: 0,
            test_users: 16,
            image_side: 16,
        }
    }
}

/// Generated corpus: behavior records (the last history item of each record
/// is the reserved supervision/target item), item images, style metadata
/// and a disjoint train/test user split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<BehaviorRecord>,
    pub images: BTreeMap<String, ImageTensor>,
    pub styles: Vec<StyleProfile>,
    pub user_styles: BTreeMap<String, usize>,
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    styles: Vec<StyleProfile>,
    user_styles: BTreeMap<String, usize>,
    train_users: Vec<String>,
    test_users: Vec<String>,
}

fn render_pattern(
    params: &PatternParams,
    side: usize,
    phase: usize,
    motif_color: [f64; 3],
    motif_pos: (usize, usize),
    rng: &mut impl Rng,
) -> ImageTensor {
    let neutral = [0.92, 0.92, 0.88];
    let period = params.period.max(2);
    let mut pixels = Array3::zeros((side, side, 3));
    for y in 0..side {
        for x in 0..side {
            let on = match params.kind {
                PatternKind::Stripes => ((y + phase) / (period / 2).max(1)) % 2 == 0,
                PatternKind::Checks => (((y + phase) / period) + ((x + phase) / period)) % 2 == 0,
                PatternKind::Dots => {
                    let cy = (y + phase) % period;
                    let cx = (x + phase) % period;
                    let half = period / 2;
                    let dy = cy as isize - half as isize;
                    let dx = cx as isize - half as isize;
                    (dy * dy + dx * dx) <= ((period / 3).max(1) as isize).pow(2)
                }
                PatternKind::Diagonal => ((x + y + phase) / (period / 2).max(1)) % 2 == 0,
            };
            let base = if on { params.base_color } else { neutral };
            for c in 0..3 {
                let jitter = rng.random_range(-0.02..0.02);
                pixels[[y, x, c]] = (base[c] + jitter).clamp(0.0, 1.0);
            }
        }
    }
    // 3x3 motif stamp in the item's secondary color
    let (my, mx) = motif_pos;
    for dy in 0..3 {
        for dx in 0..3 {
            let (y, x) = ((my + dy).min(side - 1), (mx + dx).min(side - 1));
            for c in 0..3 {
                pixels[[y, x, c]] = motif_color[c];
            }
        }
    }
    ImageTensor { pixels }.quantize_u8()
}

/// Deterministic synthetic corpus.
pub fn make_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.num_styles < 2 {
        return Err(Error::InvalidArgument("at least two styles required".into()));
    }
    if cfg.items_per_user < 3 {
        return Err(Error::InvalidArgument(
            "at least three items per user required".into(),
        ));
    }
    if cfg.num_styles > STYLE_TABLE.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} styles available",
            STYLE_TABLE.len()
        )));
    }
    if cfg.test_users >= cfg.num_users {
        return Err(Error::InvalidArgument(
            "test split must leave at least one training user".into(),
        ));
    }
    let styles = default_styles(cfg.num_styles);
    let mut records = Vec::with_capacity(cfg.num_users);
    let mut images = BTreeMap::new();
    let mut user_styles = BTreeMap::new();

    for u in 0..cfg.num_users {
        let user_id = format!("user_{u:03}");
        let style_idx = u % cfg.num_styles;
        let style = &styles[style_idx];
        user_styles.insert(user_id.clone(), style_idx);

        let mut history = Vec::with_capacity(cfg.items_per_user);
        for j in 0..cfg.items_per_user {
            let item_id = format!("{user_id}_item_{j:02}");
            let mut rng = seed_rng(derive_seed(cfg.seed, &item_id, 0));
            let secondary = SECONDARY_COLORS[rng.random_range(0..SECONDARY_COLORS.len())];
            let motif = MOTIFS[rng.random_range(0..MOTIFS.len())];
            let season = SEASONS[rng.random_range(0..SEASONS.len())];
            let garment = GARMENTS[rng.random_range(0..GARMENTS.len())];
            let phase = rng.random_range(0..style.pattern_params.period.max(2));
            let motif_pos = (
                rng.random_range(0..cfg.image_side.saturating_sub(3).max(1)),
                rng.random_range(0..cfg.image_side.saturating_sub(3).max(1)),
            );
            let [primary, pattern, style_word, material] = [
                &style.tag_vocabulary[0],
                &style.tag_vocabulary[1],
                &style.tag_vocabulary[2],
                &style.tag_vocabulary[3],
            ];
            let text = format!(
                "A {secondary} {garment} with {motif} motif, {primary} {pattern} pattern, \
                 {style_word} cut, {material}, {season} wear"
            );
            let tags: Vec<String> = vec![
                primary.clone(),
                pattern.clone(),
                style_word.clone(),
                material.clone(),
                secondary.to_string(),
                motif.to_string(),
                season.to_string(),
            ];
            let image = render_pattern(
                &style.pattern_params,
                cfg.image_side,
                phase,
                color_value(secondary),
                motif_pos,
                &mut rng,
            );
            images.insert(item_id.clone(), image);
            history.push(ItemFeatures {
                item_id,
                text: Some(text),
                image_ref: None,
                tags,
            });
        }

        let conversations = vec![ConversationTurn {
            speaker: Speaker::User,
            text: format!(
                "I really like {} {} lately",
                style.tag_vocabulary[0], style.tag_vocabulary[1]
            ),
        }];
        records.push(BehaviorRecord {
            user_id,
            history,
            conversations,
        });
    }

    let split = cfg.num_users - cfg.test_users;
    let train_users = records[..split].iter().map(|r| r.user_id.clone()).collect();
    let test_users = records[split..].iter().map(|r| r.user_id.clone()).collect();
    Ok(Corpus {
        records,
        images,
        styles,
        user_styles,
        train_users,
        test_users,
    })
}

impl Corpus {
    pub fn record(&self, user_id: &str) -> Option<&BehaviorRecord> {
        self.records.iter().find(|r| r.user_id == user_id)
    }

    pub fn image(&self, item_id: &str) -> Result<&ImageTensor> {
        self.images
            .get(item_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no image for item {item_id}")))
    }

    /// Mean perceptual distance within and across styles over the reserved
    /// items; the corpus is usable when within < across.
    pub fn calibration(&self, features: &dyn FeatureBackend) -> Result<(f64, f64)> {
        let mut by_style: BTreeMap<usize, Vec<&ImageTensor>> = BTreeMap::new();
        for record in &self.records {
            let style = self.user_styles[&record.user_id];
            let last = record.history.last().expect("corpus items");
            by_style
                .entry(style)
                .or_default()
                .push(self.image(&last.item_id)?);
        }
        let mut within = Vec::new();
        let mut across = Vec::new();
        let styles: Vec<usize> = by_style.keys().copied().collect();
        for &si in &styles {
            let imgs = &by_style[&si];
            for i in 0..imgs.len().min(6) {
                for j in (i + 1)..imgs.len().min(6) {
                    within.push(perceptual_distance(imgs[i], imgs[j], features)?);
                }
            }
            for &sj in &styles {
                if sj <= si {
                    continue;
                }
                let other = &by_style[&sj];
                for i in 0..imgs.len().min(4) {
                    for j in 0..other.len().min(4) {
                        across.push(perceptual_distance(imgs[i], other[j], features)?);
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        Ok((mean(&within), mean(&across)))
    }

    /// Write behaviors.jsonl (image_ref pointing into images/), the PNG
    /// directory and corpus.json metadata.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("images"))?;
        let mut records = self.records.clone();
        for record in &mut records {
            for item in &mut record.history {
                let png = dir.join("images").join(format!("{}.png", item.item_id));
                self.image(&item.item_id)?.save_png(&png)?;
                item.image_ref = Some(png);
            }
        }
        crate::behavior::save_behaviors(&dir.join("behaviors.jsonl"), &records)?;
        let meta = CorpusMeta {
            styles: self.styles.clone(),
            user_styles: self.user_styles.clone(),
            train_users: self.train_users.clone(),
            test_users: self.test_users.clone(),
        };
        std::fs::write(
            dir.join("corpus.json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records = crate::behavior::load_behaviors(&dir.join("behaviors.jsonl"))?;
        let meta: CorpusMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("corpus.json"))?)?;
        let mut images = BTreeMap::new();
        for record in &records {
            for item in &record.history {
                let path = item
                    .image_ref
                    .clone()
                    .unwrap_or_else(|| dir.join("images").join(format!("{}.png", item.item_id)));
                images.insert(item.item_id.clone(), ImageTensor::load_png(&path)?);
            }
        }
        Ok(Corpus {
            records,
            images,
            styles: meta.styles,
            user_styles: meta.user_styles,
            train_users: meta.train_users,
            test_users: meta.test_users,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ToyFeatures;

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            num_users: 12,
            num_styles: 4,
            items_per_user: 5,
            seed: 0,
            test_users: 4,
            image_side: 16,
        }
    }

    #[test]
    fn corpus_is_seed_deterministic() {
        let a = make_corpus(&small_cfg()).unwrap();
        let b = make_corpus(&small_cfg()).unwrap();
        assert_eq!(a.records, b.records);
        for (id, img) in &a.images {
            assert_eq!(img.pixels, b.images[id].pixels);
        }
    }

    #[test]
    fn different_seed_changes_items() {
        let a = make_corpus(&small_cfg()).unwrap();
        let b = make_corpus(&CorpusConfig {
            seed: 1,
            ..small_cfg()
        })
        .unwrap();
        assert_ne!(a.records, b.records);
    }

    #[test]
    fn every_item_carries_the_style_primary_tag() {
        let corpus = make_corpus(&small_cfg()).unwrap();
        for record in &corpus.records {
            let style = &corpus.styles[corpus.user_styles[&record.user_id]];
            let primary = &style.tag_vocabulary[0];
            for item in &record.history {
                assert!(
                    item.tags.contains(primary),
                    "item {} of {} lacks tag {primary}",
                    item.item_id,
                    record.user_id
                );
            }
        }
    }

    #[test]
    fn split_is_disjoint_and_covers_all_users() {
        let corpus = make_corpus(&small_cfg()).unwrap();
        assert_eq!(corpus.train_users.len(), 8);
        assert_eq!(corpus.test_users.len(), 4);
        for u in &corpus.test_users {
            assert!(!corpus.train_users.contains(u));
        }
    }

    #[test]
    fn styles_are_visually_separable() {
        let corpus = make_corpus(&CorpusConfig {
            num_users: 16,
            ..small_cfg()
        })
        .unwrap();
        let feats = ToyFeatures::new(11);
        let (within, across) = corpus.calibration(&feats).unwrap();
        assert!(
            within < across,
            "styles not separable: within {within} vs across {across}"
        );
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(&small_cfg()).unwrap();
        corpus.save(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.records.len(), corpus.records.len());
        for (id, img) in &corpus.images {
            assert_eq!(
                img.pixels, back.images[id].pixels,
                "pixels drifted for {id}"
            );
        }
        assert_eq!(back.test_users, corpus.test_users);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(make_corpus(&CorpusConfig {
            num_styles: 1,
            ..small_cfg()
        })
        .is_err());
        assert!(make_corpus(&CorpusConfig {
            items_per_user: 2,
            ..small_cfg()
        })
        .is_err());
    }
}
