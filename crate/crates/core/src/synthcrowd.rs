//! Synthetic perspective crowd scenes.
//!
//! Heads are rendered as radial-falloff blobs whose diameter grows linearly
//! with the image row (`s(y) = s0 + slope*y`), so heads shrink toward the top
//! of the image the way they do under perspective. Placement density increases
//! toward the top: the nearest-neighbor size prior is tight in the crowded
//! remote rows and loose in the sparse bottom rows, which is the regime the
//! pseudo-box refinement is supposed to fix.
//!
//! Training code must go through [`load_train_view`], which never materializes
//! the `true_boxes` field; the full [`load_scene`] is for evaluation.

use crate::geometry::{BBox, Point};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot place {placed} of {requested} heads under the separation constraint within {attempts} attempts")]
    SpecInfeasible {
        requested: usize,
        placed: usize,
        attempts: usize,
    },
    #[error("invalid scene spec: {0}")]
    BadSpec(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },
}

/// Parameters of the scene generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Head diameter at the top row (pixels).
    pub base_size: f64,
    /// Growth of head diameter per pixel row.
    pub slope: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// Additive Gaussian pixel noise, intensity units in [0,1].
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            base_size: 6.0,
            slope: 0.05,
            n_min: 25,
            n_max: 45,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Head diameter at row `y`.
    pub fn size_at(&self, y: f64) -> f64 {
        self.base_size + self.slope * y
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.base_size < 2.0 {
            return Err(SceneError::BadSpec(format!(
                "base_size must be >= 2, got {}",
                self.base_size
            )));
        }
        if self.slope < 0.0 {
            return Err(SceneError::BadSpec(format!(
                "slope must be >= 0, got {}",
                self.slope
            )));
        }
        if self.n_min < 2 || self.n_max < self.n_min {
            return Err(SceneError::BadSpec(format!(
                "need 2 <= n_min <= n_max, got [{}, {}]",
                self.n_min, self.n_max
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::BadSpec("zero image extent".into()));
        }
        Ok(())
    }
}

/// Row-major grayscale grid with intensities in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn zeros(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            data: vec![0.0; w * h],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    /// Snap every intensity to the nearest of the 256 PGM levels, so that a
    /// save/load round trip is lossless.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = (*v * 255.0).round().clamp(0.0, 255.0) / 255.0;
        }
    }
}

/// One rendered scene. `true_boxes` exist for evaluation only; the trainer
/// reads scenes through [`TrainView`] and never sees them.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub image: GrayImage,
    pub points: Vec<Point>,
    pub true_boxes: Vec<BBox>,
}

/// Points-only view of a stored scene: what the trainer is allowed to load.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub id: String,
    pub image: GrayImage,
    pub points: Vec<Point>,
}

const MAX_REJECTION_ATTEMPTS: usize = 100_000;

/// Generate `n_scenes` scenes, deterministic per (spec.seed, scene index).
pub fn generate(spec: &SceneSpec, n_scenes: usize) -> Result<Vec<Scene>, SceneError> {
    spec.validate()?;
    (0..n_scenes).map(|i| generate_one(spec, i)).collect()
}

fn generate_one(spec: &SceneSpec, index: usize) -> Result<Scene, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);

    let (w, h) = (spec.width as f64, spec.height as f64);
    let n_target = rng.gen_range(spec.n_min..=spec.n_max);

    // Place head centers. Bias toward small y so the top is crowded, with a
    // uniform component keeping the bottom sparse but populated. Margins keep
    // each box fully inside the image.
    let mut points: Vec<Point> = Vec::with_capacity(n_target);
    let mut sizes: Vec<f64> = Vec::with_capacity(n_target);
    let mut attempts = 0usize;
    while points.len() < n_target && attempts < MAX_REJECTION_ATTEMPTS {
        attempts += 1;
        let u: f64 = rng.gen();
        let y_frac = if rng.gen::<f64>() < 0.85 {
            1.0 - u.sqrt() // density decreasing linearly from top to bottom
        } else {
            u
        };
        let y = y_frac * h;
        let s = spec.size_at(y);
        let x: f64 = rng.gen_range(0.0..w);
        // reject placements whose box would clip the border
        if y < s / 2.0 || y > h - s / 2.0 || x < s / 2.0 || x > w - s / 2.0 {
            continue;
        }
        let ok = points.iter().zip(&sizes).all(|(q, qs)| {
            let min_sep = 0.5 * s.max(*qs);
            Point::new(x, y).dist(q) >= min_sep
        });
        if ok {
            points.push(Point::new(x, y));
            sizes.push(s);
        }
    }
    if points.len() < n_target {
        return Err(SceneError::SpecInfeasible {
            requested: n_target,
            placed: points.len(),
            attempts,
        });
    }

    let true_boxes: Vec<BBox> = points
        .iter()
        .zip(&sizes)
        .map(|(p, s)| {
            BBox::square(*p, *s)
                .clip_to(w, h)
                .expect("margin check keeps boxes inside the image")
        })
        .collect();

    let mut image = GrayImage::zeros(spec.width, spec.height);
    for (p, s) in points.iter().zip(&sizes) {
        let peak = rng.gen_range(0.6..1.0);
        render_blob(&mut image, p, *s, peak);
    }
    if spec.noise_sigma > 0.0 {
        for v in &mut image.data {
            *v += gaussian(&mut rng) * spec.noise_sigma;
        }
    }
    for v in &mut image.data {
        *v = v.clamp(0.0, 1.0);
    }
    image.quantize();

    Ok(Scene {
        id: format!("scene_{index:04}"),
        image,
        points,
        true_boxes,
    })
}

/// Filled parabolic blob: intensity peak at the center, falling to zero at
/// radius `diameter/2`. Overlaps blend with max so blob extents stay visible.
fn render_blob(img: &mut GrayImage, center: &Point, diameter: f64, peak: f64) {
    let r = diameter / 2.0;
    let x0 = ((center.x - r).floor().max(0.0)) as usize;
    let y0 = ((center.y - r).floor().max(0.0)) as usize;
    let x1 = ((center.x + r).ceil().min(img.w as f64)) as usize;
    let y1 = ((center.y + r).ceil().min(img.h as f64)) as usize;
    for py in y0..y1 {
        for px in x0..x1 {
            let dx = px as f64 + 0.5 - center.x;
            let dy = py as f64 + 0.5 - center.y;
            let q = (dx * dx + dy * dy) / (r * r);
            if q < 1.0 {
                let v = peak * (1.0 - q);
                if v > img.get(px, py) {
                    img.set(px, py, v);
                }
            }
        }
    }
}

/// Box-Muller transform; two uniforms in, one normal out.
fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

// ---------------------------------------------------------------------------
// File formats: binary PGM (P5, maxval 255) + one JSON document per scene.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneJson {
    id: String,
    width: usize,
    height: usize,
    points: Vec<[f64; 2]>,
    true_boxes: Vec<[f64; 4]>,
}

#[derive(Deserialize)]
struct TrainJson {
    id: String,
    width: usize,
    height: usize,
    points: Vec<[f64; 2]>,
    // true_boxes intentionally absent: serde skips the field without ever
    // parsing its values into anything typed
}

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let pgm_path = dir.join(format!("{}.pgm", scene.id));
    let mut pgm = Vec::with_capacity(scene.image.data.len() + 32);
    write!(
        pgm,
        "P5\n{} {}\n255\n",
        scene.image.w, scene.image.h
    )
    .expect("in-memory write");
    pgm.extend(
        scene
            .image
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(&pgm_path, pgm).map_err(|e| io_err(&pgm_path, e))?;

    let json_path = dir.join(format!("{}.json", scene.id));
    let doc = SceneJson {
        id: scene.id.clone(),
        width: scene.image.w,
        height: scene.image.h,
        points: scene.points.iter().map(|p| [p.x, p.y]).collect(),
        true_boxes: scene
            .true_boxes
            .iter()
            .map(|b| [b.cx, b.cy, b.w, b.h])
            .collect(),
    };
    let body = serde_json::to_string(&doc).expect("scene serializes");
    fs::write(&json_path, body).map_err(|e| io_err(&json_path, e))?;
    Ok(())
}

fn read_pgm(path: &Path) -> Result<GrayImage, SceneError> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| io_err(path, e))?;
    let fmt = |offset: usize, msg: &str| SceneError::Format {
        path: path.display().to_string(),
        offset,
        msg: msg.to_string(),
    };
    if raw.len() < 2 || &raw[0..2] != b"P5" {
        return Err(fmt(0, "not a binary PGM (missing P5 magic)"));
    }
    // header: three whitespace-separated ASCII integers after the magic
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && raw[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt(start, "expected integer in PGM header"));
        }
        let text = std::str::from_utf8(&raw[start..pos]).expect("digits are utf8");
        *field = text
            .parse()
            .map_err(|_| fmt(start, "PGM header field out of range"))?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(fmt(pos, "only maxval 255 is supported"));
    }
    if pos >= raw.len() || !raw[pos].is_ascii_whitespace() {
        return Err(fmt(pos, "missing single whitespace after maxval"));
    }
    pos += 1;
    let expected = w * h;
    if raw.len() - pos < expected {
        return Err(fmt(raw.len(), "truncated pixel data"));
    }
    let data = raw[pos..pos + expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok(GrayImage { w, h, data })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&body).map_err(|e| SceneError::Format {
        path: path.display().to_string(),
        offset: e.column(),
        msg: e.to_string(),
    })
}

pub fn load_scene(dir: &Path, id: &str) -> Result<Scene, SceneError> {
    let image = read_pgm(&dir.join(format!("{id}.pgm")))?;
    let json_path = dir.join(format!("{id}.json"));
    let doc: SceneJson = read_json(&json_path)?;
    if doc.points.len() != doc.true_boxes.len() {
        return Err(SceneError::Format {
            path: json_path.display().to_string(),
            offset: 0,
            msg: format!(
                "{} points but {} true boxes",
                doc.points.len(),
                doc.true_boxes.len()
            ),
        });
    }
    check_dims(&json_path, &image, doc.width, doc.height)?;
    Ok(Scene {
        id: doc.id,
        image,
        points: doc.points.iter().map(|p| Point::new(p[0], p[1])).collect(),
        true_boxes: doc
            .true_boxes
            .iter()
            .map(|b| BBox::new(b[0], b[1], b[2], b[3]))
            .collect(),
    })
}

/// Load a scene without ever touching its `true_boxes` field.
pub fn load_train_view(dir: &Path, id: &str) -> Result<TrainView, SceneError> {
    let image = read_pgm(&dir.join(format!("{id}.pgm")))?;
    let json_path = dir.join(format!("{id}.json"));
    let doc: TrainJson = read_json(&json_path)?;
    check_dims(&json_path, &image, doc.width, doc.height)?;
    Ok(TrainView {
        id: doc.id,
        image,
        points: doc.points.iter().map(|p| Point::new(p[0], p[1])).collect(),
    })
}

fn check_dims(
    path: &Path,
    image: &GrayImage,
    width: usize,
    height: usize,
) -> Result<(), SceneError> {
    if image.w != width || image.h != height {
        return Err(SceneError::Format {
            path: path.display().to_string(),
            offset: 0,
            msg: format!(
                "annotation says {}x{} but image is {}x{}",
                width, height, image.w, image.h
            ),
        });
    }
    Ok(())
}
