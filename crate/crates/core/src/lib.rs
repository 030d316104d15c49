//! Point-supervised crowd detection at desk scale.
//!
//! Training consumes only head-point annotations. Bounding boxes are bootstrapped
//! from nearest-neighbor head distances (pseudo ground truth), refined online from
//! the detector's own qualifying predictions, and regressed under a band constraint
//! that exploits perspective-induced size uniformity along image rows. A curriculum
//! schedule feeds easy images first. Everything runs on CPU with a small two-scale
//! conv detector and hand-written gradients.
//!
//! Module map:
//! - [`geometry`]: points, boxes, IoU, NN distances, anchor transform
//! - [`synthcrowd`]: synthetic perspective scene generator + PGM/JSON io
//! - [`anchors`]: anchor specs from clustered NN distances, grids, IoU matching
//! - [`pseudogt`]: pseudo ground-truth initialization and online updating
//! - [`losses`]: band statistics, locally-constrained regression loss, BCE, OHEM
//! - [`tinydet`]: the two-scale conv detector with manual forward/backward/SGD
//! - [`curriculum`]: per-image difficulty and fold scheduling
//! - [`evalmetrics`]: NMS, detection protocol, AP, MAE/MSE, GAME
//! - [`trainer`]: augmentation, epoch loop, variant ladder Pv0-Pv3, prediction

pub mod anchors;
pub mod curriculum;
pub mod evalmetrics;
pub mod geometry;
pub mod losses;
pub mod pseudogt;
pub mod synthcrowd;
pub mod tinydet;
pub mod trainer;

pub use geometry::{BBox, Point, RegDeltas};
pub use synthcrowd::{Scene, SceneSpec};
