//! Curriculum scheduling.
//!
//! Image difficulty is one minus the mean peak-normalized Gaussian score of
//! its head distances around the dataset mean: images whose heads sit near the
//! typical nearest-neighbor distance are easy, outliers in either direction
//! are hard. The training set splits into Z difficulty folds that join the
//! working set one stage at a time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CurriculumError {
    #[error("need at least 2 head distances, got {0}")]
    TooFewHeads(usize),
    #[error("all head distances equal ({0}); difficulty is undefined and the curriculum degenerates to a single fold")]
    DegenerateDataset(f64),
    #[error("need at least {folds} images to split into {folds} folds, got {images}")]
    TooFewImages { folds: usize, images: usize },
}

/// Per-image difficulty in [0, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumScore {
    pub image_id: String,
    pub difficulty: f64,
    pub mean_score: f64,
}

/// Image id -> fold index in 1..=folds, by ascending difficulty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    /// (image id, fold) pairs in ascending difficulty order.
    pub assignment: Vec<(String, usize)>,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment
            .iter()
            .find(|(i, _)| i == id)
            .map(|(_, f)| *f)
    }
}

/// Population mean and standard deviation of all per-head NN distances.
pub fn dataset_moments(all_nn_dists: &[f64]) -> Result<(f64, f64), CurriculumError> {
    if all_nn_dists.len() < 2 {
        return Err(CurriculumError::TooFewHeads(all_nn_dists.len()));
    }
    let n = all_nn_dists.len() as f64;
    let mean = all_nn_dists.iter().sum::<f64>() / n;
    let var = all_nn_dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(CurriculumError::DegenerateDataset(mean));
    }
    Ok((mean, sd))
}

/// Peak-normalized Gaussian score of one distance: 1 at the dataset mean.
fn gaussian_score(d: f64, mean: f64, sd: f64) -> f64 {
    (-(d - mean).powi(2) / (2.0 * sd * sd)).exp()
}

/// Difficulty of one image from its per-head NN distances.
pub fn difficulty(image_id: &str, nn_dists: &[f64], mean: f64, sd: f64) -> CurriculumScore {
    assert!(sd > 0.0, "dataset_moments rejects degenerate datasets");
    assert!(!nn_dists.is_empty());
    let mean_score = nn_dists
        .iter()
        .map(|d| gaussian_score(*d, mean, sd))
        .sum::<f64>()
        / nn_dists.len() as f64;
    CurriculumScore {
        image_id: image_id.to_string(),
        difficulty: 1.0 - mean_score,
        mean_score,
    }
}

/// Sort by ascending difficulty (ties by image id) and cut into `folds`
/// contiguous groups whose sizes differ by at most one, largest first.
pub fn split_folds(
    scores: &[CurriculumScore],
    folds: usize,
) -> Result<FoldAssignment, CurriculumError> {
    if scores.len() < folds {
        return Err(CurriculumError::TooFewImages {
            folds,
            images: scores.len(),
        });
    }
    let mut order: Vec<&CurriculumScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        a.difficulty
            .partial_cmp(&b.difficulty)
            .expect("finite difficulty")
            .then_with(|| a.image_id.cmp(&b.image_id))
    });

    let mut assignment = Vec::with_capacity(order.len());
    let mut remaining = order.len();
    let mut cursor = 0;
    for fold in 1..=folds {
        let take = remaining.div_ceil(folds + 1 - fold);
        for s in &order[cursor..cursor + take] {
            assignment.push((s.image_id.clone(), fold));
        }
        cursor += take;
        remaining -= take;
    }
    Ok(FoldAssignment { folds, assignment })
}

/// Folds active at `epoch` under a fixed stage length: {1}, then {1,2}, ...
pub fn active_set(epoch: usize, stage_epochs: usize, folds: usize) -> Vec<usize> {
    let stages = if stage_epochs == 0 {
        folds
    } else {
        (epoch / stage_epochs + 1).min(folds)
    };
    (1..=stages).collect()
}
