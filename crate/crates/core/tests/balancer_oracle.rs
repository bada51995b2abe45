//! Randomized selection oracle: with a stubbed generator/scorer that pins
//! (d_p, d_t) per grid point, select_best must equal an exhaustive
//! brute-force argmax of the clamped-log objective, including tie breaks
//! and the degenerate alpha endpoints.

use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::{arr1, Array1, Array2};
use prefgen_core::balancer::{select_best, WeightPair, SCORE_CLAMP_FLOOR};
use prefgen_core::error::Result;
use prefgen_core::generator::{ConditionSequence, ImageGenerator, ImageTensor, ScorerBackend};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Writes the weighted first components of the two condition rows into two
/// pixels so the stub scorer can recover the grid point.
struct StubGenerator;

impl ImageGenerator for StubGenerator {
    fn generate(&self, condition: &ConditionSequence, _seed: u64) -> Result<ImageTensor> {
        let mut image = ImageTensor::zeros(2, 2, 3);
        image.pixels[[0, 0, 0]] = condition.vectors()[[0, 0]];
        image.pixels[[0, 0, 1]] = condition.vectors()[[1, 0]];
        Ok(image)
    }
}

fn key(w_p: f64, w_t: f64) -> (u64, u64) {
    ((w_p * 1e6).round() as u64, (w_t * 1e6).round() as u64)
}

/// Returns a unit embedding [d_p, d_t, r] per grid point so that cosine
/// against the fixed text axes reproduces the pinned similarities exactly.
struct StubScorer {
    table: Mutex<HashMap<(u64, u64), (f64, f64)>>,
}

impl ScorerBackend for StubScorer {
    fn embed_image(&self, image: &ImageTensor) -> Result<Array1<f64>> {
        let k = key(image.pixels[[0, 0, 0]], image.pixels[[0, 0, 1]]);
        let (d_p, d_t) = *self
            .table
            .lock()
            .unwrap()
            .get(&k)
            .unwrap_or_else(|| panic!("no stub entry for {k:?}"));
        let rest = (1.0 - d_p * d_p - d_t * d_t).max(0.0).sqrt();
        Ok(arr1(&[d_p, d_t, rest]))
    }

    fn embed_text(&self, keywords: &[String]) -> Result<Array1<f64>> {
        Ok(match keywords[0].as_str() {
            "pref" => arr1(&[1.0, 0.0, 0.0]),
            _ => arr1(&[0.0, 1.0, 0.0]),
        })
    }

    fn dim(&self) -> usize {
        3
    }
}

fn conditions() -> (ConditionSequence, ConditionSequence) {
    let e_p = ConditionSequence::new(Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap(), 77)
        .unwrap();
    let e_t = ConditionSequence::new(Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 0.0]).unwrap(), 77)
        .unwrap();
    (e_p, e_t)
}

/// Independent reimplementation of the objective and the argmax rule.
fn brute_force_argmax(scores: &[(f64, f64)], alpha: f64) -> usize {
    let z = |d: f64| d.clamp(SCORE_CLAMP_FLOOR, 1.0).ln();
    let mut best = 0usize;
    let mut best_z = f64::NEG_INFINITY;
    for (i, &(d_p, d_t)) in scores.iter().enumerate() {
        let zi = alpha * z(d_p) + (1.0 - alpha) * z(d_t);
        if zi > best_z {
            best_z = zi;
            best = i;
        }
    }
    best
}

fn run_instance(rng: &mut ChaCha8Rng, grid_len: usize, alpha: f64, force_ties: bool) {
    // distinct weight pairs so every grid point is identifiable by the stub
    let mut grid = Vec::with_capacity(grid_len);
    let mut seen = std::collections::HashSet::new();
    while grid.len() < grid_len {
        let w_p: f64 = (rng.random_range(0..500) as f64) / 100.0;
        let w_t: f64 = (rng.random_range(0..500) as f64) / 100.0;
        if w_p == 0.0 && w_t == 0.0 {
            continue;
        }
        if seen.insert(key(w_p, w_t)) {
            grid.push(WeightPair::new(w_p, w_t));
        }
    }

    // pinned similarities on the unit disk (covers negatives, hence clamping)
    let mut scores: Vec<(f64, f64)> = (0..grid_len)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(0.0..1.0f64).sqrt();
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect();
    if force_ties && grid_len >= 3 {
        scores[2] = scores[0];
    }

    let table: HashMap<(u64, u64), (f64, f64)> = grid
        .iter()
        .zip(scores.iter())
        .map(|(w, s)| (key(w.w_p, w.w_t), *s))
        .collect();
    let scorer = StubScorer {
        table: Mutex::new(table),
    };
    let (e_p, e_t) = conditions();
    let selection = select_best(
        Some(&e_p),
        &e_t,
        &grid,
        &StubGenerator,
        &scorer,
        &["pref".to_string()],
        &["tgt".to_string()],
        alpha,
        9,
    )
    .unwrap();

    let expected = brute_force_argmax(&scores, alpha);
    assert_eq!(
        selection.chosen_index, expected,
        "alpha {alpha}, scores {scores:?}"
    );
    // the reported z values must match an independent evaluation
    for (cand, &(d_p, d_t)) in selection.candidates.iter().zip(scores.iter()) {
        let z = alpha * d_p.clamp(SCORE_CLAMP_FLOOR, 1.0).ln()
            + (1.0 - alpha) * d_t.clamp(SCORE_CLAMP_FLOOR, 1.0).ln();
        assert!(
            (cand.z - z).abs() < 1e-9,
            "z mismatch: {} vs {z}",
            cand.z
        );
    }
}

#[test]
fn randomized_selection_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let grid_len = rng.random_range(1..=8);
        let alpha = rng.random_range(0.0..=1.0);
        run_instance(&mut rng, grid_len, alpha, case % 5 == 0);
    }
}

#[test]
fn degenerate_alphas_select_single_sided_maxima() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        run_instance(&mut rng, 5, 1.0, false);
        run_instance(&mut rng, 5, 0.0, false);
    }
}

#[test]
fn singleton_grid_returns_that_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        run_instance(&mut rng, 1, 0.5, false);
    }
}

#[test]
fn exact_ties_break_to_lowest_grid_index() {
    let grid = vec![
        WeightPair::new(1.0, 3.0),
        WeightPair::new(2.0, 2.0),
        WeightPair::new(3.0, 1.0),
    ];
    let scores = [(0.5, 0.5), (0.5, 0.5), (0.5, 0.5)];
    let table: HashMap<(u64, u64), (f64, f64)> = grid
        .iter()
        .zip(scores.iter())
        .map(|(w, s)| (key(w.w_p, w.w_t), *s))
        .collect();
    let scorer = StubScorer {
        table: Mutex::new(table),
    };
    let (e_p, e_t) = conditions();
    let selection = select_best(
        Some(&e_p),
        &e_t,
        &grid,
        &StubGenerator,
        &scorer,
        &["pref".to_string()],
        &["tgt".to_string()],
        0.5,
        9,
    )
    .unwrap();
    assert_eq!(selection.chosen_index, 0);
}
