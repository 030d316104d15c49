//! Pseudo ground-truth boxes.
//!
//! Each head starts as a square of side d(g, NN_g) snapped to the closest
//! anchor shape, centered forever on its annotated point. At the end of every
//! epoch the box extent may be replaced by the detector's highest-scored
//! positive prediction whose smaller side is below the nearest-neighbor cap.
//! Centers never move: the annotation is trusted, the extent is not.

use crate::anchors::AnchorSpec;
use crate::geometry::{BBox, Point};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One head's pseudo box and its update state.
#[derive(Debug, Clone)]
pub struct PseudoGT {
    /// The annotated head center; immutable.
    pub point: Point,
    /// Current pseudo box; `box.cx == point.x`, `box.cy == point.y` always.
    pub bbox: BBox,
    /// Size cap: d(g, NN_g) in scene pixels, fixed at initialization.
    pub cap: f64,
    /// Heads with no positive anchors rest for one epoch.
    pub active: bool,
    /// (epoch, w, h) trace; entry 0 is the initialization.
    pub history: Vec<(u32, f64, f64)>,
}

impl PseudoGT {
    /// Snap a square of side `side` to the anchor spec closest in log
    /// size-and-shape: argmin |log(spec area / square area)| + |log aspect|.
    /// First minimum wins on ties.
    fn snap(side: f64, specs: &[AnchorSpec]) -> (f64, f64) {
        let square_area = side * side;
        let mut best = f64::INFINITY;
        let mut extent = (side, side);
        for spec in specs {
            let cost =
                (spec.scale * spec.scale / square_area).ln().abs() + spec.aspect.ln().abs();
            if cost < best {
                best = cost;
                extent = spec.extent();
            }
        }
        extent
    }

    pub fn init(point: Point, nn_dist: f64, specs: &[AnchorSpec]) -> Self {
        let (w, h) = Self::snap(nn_dist, specs);
        PseudoGT {
            point,
            bbox: BBox::new(point.x, point.y, w, h),
            cap: nn_dist,
            active: true,
            history: vec![(0, w, h)],
        }
    }

    /// End-of-epoch update from the decoded predictions of this head's
    /// positive anchors. `next_epoch` labels the history entry.
    ///
    /// - resting heads re-activate and skip the update for this round;
    /// - no candidates at all: the head rests for the next epoch;
    /// - otherwise the highest-scored candidate with min(w, h) < cap replaces
    ///   the extent (center stays on the point); no qualifier leaves the box
    ///   unchanged.
    pub fn end_of_epoch_update(&mut self, candidates: &[(BBox, f64)], next_epoch: u32) {
        if !self.active {
            self.active = true;
        } else if candidates.is_empty() {
            self.active = false;
        } else {
            let mut best: Option<(f64, f64, f64)> = None; // (score, w, h)
            for (b, score) in candidates {
                if b.w.min(b.h) < self.cap && best.map_or(true, |(s, _, _)| *score > s) {
                    best = Some((*score, b.w, b.h));
                }
            }
            if let Some((_, w, h)) = best {
                self.bbox = BBox::new(self.point.x, self.point.y, w, h);
            }
        }
        self.history.push((next_epoch, self.bbox.w, self.bbox.h));
    }
}

/// Initialize one pseudo box per head. `points` and `nn_dists` run in parallel.
pub fn init_all(points: &[Point], nn_dists: &[f64], specs: &[AnchorSpec]) -> Vec<PseudoGT> {
    assert_eq!(points.len(), nn_dists.len());
    points
        .iter()
        .zip(nn_dists)
        .map(|(p, d)| PseudoGT::init(*p, *d, specs))
        .collect()
}

// ---------------------------------------------------------------------------
// History dump (diagnostic of convergence), one JSON document per run.
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct HeadHistory {
    pub point: [f64; 2],
    pub cap: f64,
    pub history: Vec<(u32, f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
pub struct PseudoHistoryDump {
    pub scenes: BTreeMap<String, Vec<HeadHistory>>,
}

impl PseudoHistoryDump {
    pub fn insert_scene(&mut self, id: &str, heads: &[PseudoGT]) {
        self.scenes.insert(
            id.to_string(),
            heads
                .iter()
                .map(|p| HeadHistory {
                    point: [p.point.x, p.point.y],
                    cap: p.cap,
                    history: p.history.clone(),
                })
                .collect(),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scale: f64, aspect: f64) -> AnchorSpec {
        AnchorSpec { scale, aspect }
    }

    #[test]
    fn init_snaps_exactly_when_a_spec_matches() {
        let specs = [spec(6.0, 1.0), spec(8.0, 1.0), spec(8.0, 2.0)];
        let g = PseudoGT::init(Point::new(10.0, 10.0), 8.0, &specs);
        assert_eq!((g.bbox.w, g.bbox.h), (8.0, 8.0));
        assert_eq!(g.cap, 8.0);
        assert_eq!(g.history, vec![(0, 8.0, 8.0)]);
    }

    #[test]
    fn init_snaps_to_nearest_in_log_area() {
        // |log(81/64)| < |log(81/127.69)|, so 9x9 snaps down to 8x8
        let specs = [spec(8.0, 1.0), spec(11.3, 1.0)];
        let g = PseudoGT::init(Point::new(0.0, 0.0), 9.0, &specs);
        assert_eq!((g.bbox.w, g.bbox.h), (8.0, 8.0));
    }

    #[test]
    fn symmetric_pair_gets_identical_sizes() {
        let specs = [spec(4.0, 1.0), spec(6.0, 1.0)];
        let pts = [Point::new(0.0, 0.0), Point::new(5.0, 0.0)];
        let all = init_all(&pts, &[5.0, 5.0], &specs);
        assert_eq!(all[0].bbox.w, all[1].bbox.w);
        assert_eq!(all[0].bbox.h, all[1].bbox.h);
    }

    #[test]
    fn no_candidates_rests_for_one_epoch_only() {
        let specs = [spec(8.0, 1.0)];
        let mut g = PseudoGT::init(Point::new(0.0, 0.0), 8.0, &specs);
        g.end_of_epoch_update(&[], 1);
        assert!(!g.active);
        assert_eq!((g.bbox.w, g.bbox.h), (8.0, 8.0));
        // next round re-activates without consuming candidates
        g.end_of_epoch_update(&[(BBox::new(0.0, 0.0, 4.0, 4.0), 0.9)], 2);
        assert!(g.active);
        assert_eq!((g.bbox.w, g.bbox.h), (8.0, 8.0));
    }

    #[test]
    fn cap_beats_score() {
        let specs = [spec(10.0, 1.0)];
        let mut g = PseudoGT::init(Point::new(5.0, 5.0), 10.0, &specs);
        let candidates = [
            (BBox::new(5.0, 5.0, 12.0, 12.0), 0.9),
            (BBox::new(5.0, 5.0, 8.0, 8.0), 0.6),
        ];
        g.end_of_epoch_update(&candidates, 1);
        assert_eq!((g.bbox.w, g.bbox.h), (8.0, 8.0));
        assert_eq!((g.bbox.cx, g.bbox.cy), (5.0, 5.0));
    }

    #[test]
    fn cap_applies_to_the_smaller_side() {
        let specs = [spec(10.0, 1.0)];
        let mut g = PseudoGT::init(Point::new(5.0, 5.0), 10.0, &specs);
        g.end_of_epoch_update(&[(BBox::new(5.0, 5.0, 9.0, 11.0), 0.5)], 1);
        assert_eq!((g.bbox.w, g.bbox.h), (9.0, 11.0));
    }

    #[test]
    fn center_immutable_and_cap_guard_over_many_updates() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let specs = [spec(10.0, 1.0)];
        let mut g = PseudoGT::init(Point::new(7.0, 3.0), 10.0, &specs);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for epoch in 1..200 {
            let candidates: Vec<(BBox, f64)> = (0..5)
                .map(|_| {
                    (
                        BBox::new(
                            rng.gen_range(0.0..20.0),
                            rng.gen_range(0.0..20.0),
                            rng.gen_range(2.0..15.0),
                            rng.gen_range(2.0..15.0),
                        ),
                        rng.gen::<f64>(),
                    )
                })
                .collect();
            let before = (g.bbox.w, g.bbox.h);
            g.end_of_epoch_update(&candidates, epoch);
            assert_eq!((g.bbox.cx, g.bbox.cy), (7.0, 3.0));
            if (g.bbox.w, g.bbox.h) != before {
                assert!(g.bbox.w.min(g.bbox.h) < g.cap);
            }
        }
        assert_eq!(g.history.len(), 200);
    }
}
