//! Anchor construction and matching.
//!
//! Anchor scales come from 1-D k-means over the training set's nearest-neighbor
//! head distances; each scale is crossed with a fixed aspect set to give the
//! 25-spec anchor family shared by both detection layers. Matching labels each
//! grid anchor positive/negative/ignore against the epoch's pseudo boxes.

use crate::geometry::{iou, BBox};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Aspect ratios (w/h) crossed with the clustered scales. Heads are close to
/// square, so the set is symmetric around 1.
pub const ASPECTS: [f64; 5] = [0.5, 0.75, 1.0, 1.33, 2.0];

/// Number of clustered scales; `SCALES_K * ASPECTS.len()` specs per layer.
pub const SCALES_K: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnchorError {
    #[error("k-means needs at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("image {w}x{h} is not divisible by stride {stride}")]
    IndivisibleImage { w: usize, h: usize, stride: usize },
}

/// One anchor shape: `scale` is the square root of the area, `aspect` is w/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub scale: f64,
    pub aspect: f64,
}

impl AnchorSpec {
    pub fn extent(&self) -> (f64, f64) {
        let root = self.aspect.sqrt();
        (self.scale * root, self.scale / root)
    }
}

/// Detection layer identifier; layer 1 is the stride-8 grid, layer 2 stride 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    One,
    Two,
}

impl Layer {
    pub fn stride(&self) -> usize {
        match self {
            Layer::One => 8,
            Layer::Two => 16,
        }
    }
}

/// Anchors laid out on a detection grid: anchor (i, j, t) sits at cell center
/// ((j+0.5)*stride, (i+0.5)*stride) with the extent of spec t. Anchors may
/// exceed the image bounds; they are kept, not clipped.
#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
    pub specs: Vec<AnchorSpec>,
    pub layer: Layer,
}

impl AnchorGrid {
    pub fn n_anchors(&self) -> usize {
        self.rows * self.cols * self.specs.len()
    }

    /// Flat index in cell-major, spec-minor order.
    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, t: usize) -> usize {
        (i * self.cols + j) * self.specs.len() + t
    }

    /// Inverse of [`Self::flat_index`]: (row, col, spec).
    #[inline]
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let t = idx % self.specs.len();
        let cell = idx / self.specs.len();
        (cell / self.cols, cell % self.cols, t)
    }

    #[inline]
    pub fn anchor_box(&self, i: usize, j: usize, t: usize) -> BBox {
        let (w, h) = self.specs[t].extent();
        BBox::new(
            (j as f64 + 0.5) * self.stride as f64,
            (i as f64 + 0.5) * self.stride as f64,
            w,
            h,
        )
    }

    /// All anchors in flat-index order.
    pub fn boxes(&self) -> Vec<BBox> {
        let mut out = Vec::with_capacity(self.n_anchors());
        for i in 0..self.rows {
            for j in 0..self.cols {
                for t in 0..self.specs.len() {
                    out.push(self.anchor_box(i, j, t));
                }
            }
        }
        out
    }
}

/// 1-D k-means (Lloyd) over nearest-neighbor distances, deterministically
/// initialized at the k quantile midpoints of the sorted data. Returns
/// ascending centroids.
pub fn cluster_scales(nn_dists: &[f64], k: usize) -> Result<Vec<f64>, AnchorError> {
    if k == 0 || nn_dists.len() < k {
        return Err(AnchorError::InsufficientData {
            needed: k.max(1),
            got: nn_dists.len(),
        });
    }
    let mut sorted = nn_dists.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = sorted.len();

    let mut centroids: Vec<f64> = (0..k)
        .map(|i| {
            let idx = ((i as f64 + 0.5) / k as f64 * n as f64) as usize;
            sorted[idx.min(n - 1)]
        })
        .collect();

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (x, slot) in sorted.iter().zip(assignment.iter_mut()) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centroids.iter().enumerate() {
                let d = (x - center).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for c in 0..k {
            let members: Vec<f64> = sorted
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == c)
                .map(|(x, _)| *x)
                .collect();
            if !members.is_empty() {
                centroids[c] = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
    }
    centroids.sort_by(|a, b| a.partial_cmp(b).expect("finite centroids"));
    Ok(centroids)
}

/// Cross the clustered scales with [`ASPECTS`].
pub fn build_specs(scales: &[f64]) -> Vec<AnchorSpec> {
    let mut specs = Vec::with_capacity(scales.len() * ASPECTS.len());
    for &scale in scales {
        for &aspect in ASPECTS.iter() {
            specs.push(AnchorSpec { scale, aspect });
        }
    }
    specs
}

/// Lay the spec set on the detection grid of `layer` for a WxH image.
pub fn build_grid(
    width: usize,
    height: usize,
    layer: Layer,
    specs: Vec<AnchorSpec>,
) -> Result<AnchorGrid, AnchorError> {
    let stride = layer.stride();
    if width % stride != 0 || height % stride != 0 {
        return Err(AnchorError::IndivisibleImage {
            w: width,
            h: height,
            stride,
        });
    }
    Ok(AnchorGrid {
        stride,
        rows: height / stride,
        cols: width / stride,
        specs,
        layer,
    })
}

/// Per-anchor match outcome. A positive carries the index of its pseudo box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive(usize),
    Negative,
    Ignore,
}

/// Labels for every anchor plus the pseudo boxes that ended the epoch with no
/// positive anchor at all (best IoU below the negative threshold).
#[derive(Debug, Clone)]
pub struct MatchLabels {
    pub labels: Vec<AnchorLabel>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchLabels {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(a, l)| match l {
            AnchorLabel::Positive(g) => Some((a, *g)),
            _ => None,
        })
    }
}

/// Label anchors against pseudo boxes.
///
/// An anchor is positive at IoU >= `pos_thresh` (assigned to its argmax box),
/// negative below `neg_thresh`, ignored in between. A box that gathered no
/// positive is then forced onto its single argmax-IoU anchor, unless its best
/// IoU is below `neg_thresh` (such boxes stay unmatched for this epoch) or the
/// anchor already serves another box at equal-or-higher IoU.
pub fn match_anchors(
    anchor_boxes: &[BBox],
    pseudo_boxes: &[BBox],
    pos_thresh: f64,
    neg_thresh: f64,
) -> MatchLabels {
    let n = anchor_boxes.len();
    let m = pseudo_boxes.len();
    let mut labels = vec![AnchorLabel::Negative; n];
    if m == 0 {
        return MatchLabels {
            labels,
            unmatched_gt: Vec::new(),
        };
    }

    let mut best_anchor_for_gt = vec![(0usize, 0.0f64); m];
    let mut assigned = vec![0usize; m];
    // IoU of the box currently assigned to each anchor, for forcing conflicts
    let mut anchor_iou = vec![0.0f64; n];

    for (a, abox) in anchor_boxes.iter().enumerate() {
        let mut best_g = 0;
        let mut best = 0.0f64;
        for (g, gbox) in pseudo_boxes.iter().enumerate() {
            let v = iou(abox, gbox);
            if v > best {
                best = v;
                best_g = g;
            }
            if v > best_anchor_for_gt[g].1 {
                best_anchor_for_gt[g] = (a, v);
            }
        }
        labels[a] = if best >= pos_thresh {
            assigned[best_g] += 1;
            anchor_iou[a] = best;
            AnchorLabel::Positive(best_g)
        } else if best < neg_thresh {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    let mut unmatched = Vec::new();
    for g in 0..m {
        if assigned[g] > 0 {
            continue;
        }
        let (a, best) = best_anchor_for_gt[g];
        if best < neg_thresh {
            unmatched.push(g);
            continue;
        }
        if matches!(labels[a], AnchorLabel::Positive(_)) && anchor_iou[a] >= best {
            unmatched.push(g);
            continue;
        }
        if let AnchorLabel::Positive(prev) = labels[a] {
            assigned[prev] -= 1;
        }
        labels[a] = AnchorLabel::Positive(g);
        anchor_iou[a] = best;
        assigned[g] += 1;
    }

    MatchLabels {
        labels,
        unmatched_gt: unmatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kmeans_single_cluster_of_equal_values() {
        assert_eq!(cluster_scales(&[8.0; 6], 1).unwrap(), vec![8.0]);
    }

    #[test]
    fn kmeans_two_well_separated_groups() {
        let data = [2.0, 2.0, 2.0, 10.0, 10.0, 10.0];
        assert_eq!(cluster_scales(&data, 2).unwrap(), vec![2.0, 10.0]);
    }

    /// Exhaustive 1-D k-means: optimal clusters of sorted data are contiguous,
    /// so trying every split point finds the global optimum.
    fn kmeans_oracle_k2(data: &[f64]) -> Vec<f64> {
        let mut sorted = data.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let sse = |s: &[f64]| {
            let m = mean(s);
            s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let mut best = (f64::INFINITY, vec![]);
        for split in 1..sorted.len() {
            let (l, r) = sorted.split_at(split);
            let cost = sse(l) + sse(r);
            if cost < best.0 {
                best = (cost, vec![mean(l), mean(r)]);
            }
        }
        best.1
    }

    #[test]
    fn kmeans_matches_exhaustive_oracle_on_separated_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut data: Vec<f64> = (0..30).map(|_| rng.gen_range(2.0..5.0)).collect();
            data.extend((0..30).map(|_| rng.gen_range(12.0..20.0)));
            let ours = cluster_scales(&data, 2).unwrap();
            let oracle = kmeans_oracle_k2(&data);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{ours:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn kmeans_insufficient_data() {
        assert_eq!(
            cluster_scales(&[1.0, 2.0], 3),
            Err(AnchorError::InsufficientData { needed: 3, got: 2 })
        );
    }

    #[test]
    fn specs_preserve_area_across_aspects() {
        let specs = build_specs(&[8.0]);
        assert_eq!(specs.len(), 5);
        for s in &specs {
            let (w, h) = s.extent();
            assert!((w * h - 64.0).abs() < 1e-9);
        }
    }

    #[test]
    fn spec_extents() {
        let (w, h) = AnchorSpec {
            scale: 10.0,
            aspect: 1.0,
        }
        .extent();
        assert_eq!((w, h), (10.0, 10.0));
        let (w, h) = AnchorSpec {
            scale: 10.0,
            aspect: 2.0,
        }
        .extent();
        assert!((w - 10.0 * 2.0f64.sqrt()).abs() < 1e-12);
        assert!((h - 10.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grid_dimensions_and_centers() {
        let specs = build_specs(&[4.0, 6.0, 8.0, 10.0, 12.0]);
        let g1 = build_grid(256, 256, Layer::One, specs.clone()).unwrap();
        assert_eq!((g1.rows, g1.cols), (32, 32));
        let g2 = build_grid(256, 256, Layer::Two, specs.clone()).unwrap();
        assert_eq!((g2.rows, g2.cols), (16, 16));
        let a = g1.anchor_box(0, 0, 10); // scale 8, aspect 1
        assert_eq!((a.cx, a.cy), (4.0, 4.0));
        assert!(matches!(
            build_grid(250, 256, Layer::One, specs),
            Err(AnchorError::IndivisibleImage { .. })
        ));
    }

    #[test]
    fn exact_anchor_is_positive() {
        let specs = build_specs(&[8.0]);
        let grid = build_grid(64, 64, Layer::One, specs).unwrap();
        let anchors = grid.boxes();
        let target = grid.anchor_box(2, 3, 2); // aspect 1.0
        let m = match_anchors(&anchors, &[target], 0.7, 0.3);
        let idx = grid.flat_index(2, 3, 2);
        assert_eq!(m.labels[idx], AnchorLabel::Positive(0));
        assert!(m.unmatched_gt.is_empty());
    }

    #[test]
    fn empty_pseudo_list_is_all_negative() {
        let grid = build_grid(32, 32, Layer::One, build_specs(&[8.0])).unwrap();
        let m = match_anchors(&grid.boxes(), &[], 0.7, 0.3);
        assert!(m.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    /// Independent re-application of the labeling rule from the full IoU matrix.
    fn match_oracle(anchors: &[BBox], boxes: &[BBox]) -> (Vec<AnchorLabel>, Vec<usize>) {
        let iou_matrix: Vec<Vec<f64>> = anchors
            .iter()
            .map(|a| boxes.iter().map(|g| iou(a, g)).collect())
            .collect();
        let mut labels = vec![AnchorLabel::Negative; anchors.len()];
        let mut anchor_best = vec![0.0; anchors.len()];
        for (a, row) in iou_matrix.iter().enumerate() {
            let (mut bg, mut bv) = (0usize, 0.0f64);
            for (g, &v) in row.iter().enumerate() {
                if v > bv {
                    bv = v;
                    bg = g;
                }
            }
            anchor_best[a] = bv;
            labels[a] = if boxes.is_empty() {
                AnchorLabel::Negative
            } else if bv >= 0.7 {
                AnchorLabel::Positive(bg)
            } else if bv < 0.3 {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            };
        }
        let mut unmatched = Vec::new();
        for g in 0..boxes.len() {
            let has_pos = labels
                .iter()
                .any(|l| matches!(l, AnchorLabel::Positive(x) if *x == g));
            if has_pos {
                continue;
            }
            let (mut ba, mut bv) = (0usize, 0.0f64);
            for (a, row) in iou_matrix.iter().enumerate() {
                if row[g] > bv {
                    bv = row[g];
                    ba = a;
                }
            }
            if bv < 0.3
                || (matches!(labels[ba], AnchorLabel::Positive(_)) && anchor_best[ba] >= bv)
            {
                unmatched.push(g);
                continue;
            }
            labels[ba] = AnchorLabel::Positive(g);
            anchor_best[ba] = bv;
        }
        (labels, unmatched)
    }

    #[test]
    fn matching_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let anchors: Vec<BBox> = (0..100)
                .map(|_| {
                    BBox::new(
                        rng.gen_range(0.0..64.0),
                        rng.gen_range(0.0..64.0),
                        rng.gen_range(4.0..16.0),
                        rng.gen_range(4.0..16.0),
                    )
                })
                .collect();
            let boxes: Vec<BBox> = (0..5)
                .map(|_| {
                    BBox::new(
                        rng.gen_range(0.0..64.0),
                        rng.gen_range(0.0..64.0),
                        rng.gen_range(4.0..16.0),
                        rng.gen_range(4.0..16.0),
                    )
                })
                .collect();
            let m = match_anchors(&anchors, &boxes, 0.7, 0.3);
            let (labels, unmatched) = match_oracle(&anchors, &boxes);
            assert_eq!(m.labels, labels);
            assert_eq!(m.unmatched_gt, unmatched);
        }
    }

    #[test]
    fn partition_is_exhaustive_and_boxes_have_positives_or_are_recorded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let specs = build_specs(&[6.0, 9.0, 13.0, 18.0, 24.0]);
        let grid = build_grid(128, 128, Layer::One, specs).unwrap();
        let anchors = grid.boxes();
        for _ in 0..10 {
            let boxes: Vec<BBox> = (0..8)
                .map(|_| {
                    BBox::new(
                        rng.gen_range(8.0..120.0),
                        rng.gen_range(8.0..120.0),
                        rng.gen_range(2.0..26.0),
                        rng.gen_range(2.0..26.0),
                    )
                })
                .collect();
            let m = match_anchors(&anchors, &boxes, 0.7, 0.3);
            for g in 0..boxes.len() {
                let has_pos = m.labels.iter().any(
                    |l| matches!(l, AnchorLabel::Positive(x) if *x == g),
                );
                assert!(
                    has_pos || m.unmatched_gt.contains(&g),
                    "box {g} neither matched nor recorded"
                );
            }
        }
    }

    #[test]
    fn clustered_scales_on_generator_output_are_increasing() {
        use crate::geometry::nn_distances;
        use crate::synthcrowd::{generate, SceneSpec};
        let spec = SceneSpec {
            base_size: 4.0,
            slope: 0.05,
            ..SceneSpec::default()
        };
        let scenes = generate(&spec, 10).unwrap();
        let mut dists = Vec::new();
        for s in &scenes {
            dists.extend(nn_distances(&s.points).unwrap());
        }
        let scales = cluster_scales(&dists, 5).unwrap();
        for pair in scales.windows(2) {
            assert!(pair[0] < pair[1], "centroids not strictly increasing: {scales:?}");
        }
    }
}
