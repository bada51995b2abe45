//! Weighted combination of preference and target conditions, candidate
//! generation over a weight grid, and argmax-z selection.
//!
//! Every grid point generates with the same seed, so the weighted condition
//! is the only input that varies across candidates. Candidates are scored
//! against the preference and target keyword sets and ranked by
//! `z = alpha * ln(d_p) + (1 - alpha) * ln(d_t)` with both similarities
//! clamped into (0, 1] before the log.

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{score, ConditionSequence, ImageGenerator, ImageTensor, ScorerBackend};

/// Cosine similarities at or below zero carry no log signal; clamp here.
pub const SCORE_CLAMP_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    pub w_p: f64,
    pub w_t: f64,
}

impl WeightPair {
    pub fn new(w_p: f64, w_t: f64) -> Self {
        WeightPair { w_p, w_t }
    }
}

/// The grid of weight ratios summing to four, exposed for ablation.
pub fn default_weight_grid() -> Vec<WeightPair> {
    vec![
        WeightPair::new(0.0, 4.0),
        WeightPair::new(1.0, 3.0),
        WeightPair::new(2.0, 2.0),
        WeightPair::new(3.0, 1.0),
        WeightPair::new(4.0, 0.0),
    ]
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct WeightedCandidate {
    pub weights: WeightPair,
    pub image: ImageTensor,
    /// preference similarity, clamped into (0, 1]
    pub d_p: f64,
    /// target similarity, clamped into (0, 1]
    pub d_t: f64,
    pub z: f64,
}

/// Scale-and-stack the two condition blocks: preference rows first, then
/// target rows. The target side keeps its full allocation; the preference
/// side is truncated first when the combined length exceeds the limit.
pub fn combine_conditions(
    e_p: &ConditionSequence,
    e_t: &ConditionSequence,
    w: &WeightPair,
) -> Result<ConditionSequence> {
    combine_optional(Some(e_p), e_t, w)
}

pub fn combine_optional(
    e_p: Option<&ConditionSequence>,
    e_t: &ConditionSequence,
    w: &WeightPair,
) -> Result<ConditionSequence> {
    if w.w_p == 0.0 && w.w_t == 0.0 {
        return Err(Error::BothWeightsZero);
    }
    let limit = e_t.token_limit();
    let t_t = e_t.len();
    if t_t > limit {
        return Err(Error::TokenOverflow { len: t_t, limit });
    }
    let scaled_t = e_t.vectors() * w.w_t;
    let combined = match e_p {
        None => scaled_t,
        Some(e_p) => {
            let keep_p = e_p.len().min(limit - t_t);
            let scaled_p = e_p.vectors().slice(ndarray::s![..keep_p, ..]).to_owned() * w.w_p;
            if keep_p == 0 {
                scaled_t
            } else {
                ndarray::concatenate(Axis(0), &[scaled_p.view(), scaled_t.view()])
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?
            }
        }
    };
    ConditionSequence::new(combined, limit)
}

/// Weighted log objective over clamped similarities. `alpha` must lie in
/// [0, 1]: 1 scores preference alone, 0 scores target alone.
pub fn z_score(d_p: f64, d_t: f64, alpha: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&alpha), "alpha out of range");
    let dp = d_p.clamp(SCORE_CLAMP_FLOOR, 1.0);
    let dt = d_t.clamp(SCORE_CLAMP_FLOOR, 1.0);
    alpha * dp.ln() + (1.0 - alpha) * dt.ln()
}

/// Selection result: the argmax candidate index plus every candidate for
/// reporting.
#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen_index: usize,
    pub candidates: Vec<WeightedCandidate>,
}

impl Selection {
    pub fn chosen(&self) -> &WeightedCandidate {
        &self.candidates[self.chosen_index]
    }
}

/// Generate and score one candidate per grid point (in parallel, merged by
/// grid index) and pick the highest z; ties break to the lowest index.
#[allow(clippy::too_many_arguments)]
pub fn select_best(
    e_p: Option<&ConditionSequence>,
    e_t: &ConditionSequence,
    grid: &[WeightPair],
    generator: &dyn ImageGenerator,
    scorer: &dyn ScorerBackend,
    preference_keywords: &[String],
    target_keywords: &[String],
    alpha: f64,
    seed: u64,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("weight grid is empty".into()));
    }
    let candidates: Vec<WeightedCandidate> = grid
        .par_iter()
        .enumerate()
        .map(|(index, w)| -> Result<WeightedCandidate> {
            let wrap = |source: Error| Error::GridPoint {
                index,
                w_p: w.w_p,
                w_t: w.w_t,
                source: Box::new(source),
            };
            let condition = combine_optional(e_p, e_t, w).map_err(wrap)?;
            let image = generator.generate(&condition, seed).map_err(wrap)?;
            let d_p_raw = score(scorer, &image, preference_keywords).map_err(wrap)?;
            let d_t_raw = score(scorer, &image, target_keywords).map_err(wrap)?;
            let z = z_score(d_p_raw, d_t_raw, alpha);
            Ok(WeightedCandidate {
                weights: *w,
                image,
                d_p: d_p_raw.clamp(SCORE_CLAMP_FLOOR, 1.0),
                d_t: d_t_raw.clamp(SCORE_CLAMP_FLOOR, 1.0),
                z,
            })
        })
        .collect::<Result<_>>()?;

    let mut chosen_index = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.z > candidates[chosen_index].z {
            chosen_index = i;
        }
    }
    Ok(Selection {
        chosen_index,
        candidates,
    })
}
