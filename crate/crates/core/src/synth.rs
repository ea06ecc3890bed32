//! Seeded synthetic scenes with planted ground truth: colored and textured
//! shapes on a textured background, exact masks and near-one-hot score
//! tensors.
//!
//! Shape classes come from a foreground pool and a distractor pool, every
//! scene holding at least one foreground shape. The shape with the lowest
//! class index is salient and all other shapes are not.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, DatasetManifest, GroundTruthMask, ImageBuffer, ManifestEntry, SemanticScoreMap, Split};
use crate::semantics::OTHERS_CLASS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Channels of the emitted score tensors.
    pub n_classes: usize,
    /// Classes that can be salient. Each must be lower than every
    /// distractor class.
    pub foreground_pool: Vec<usize>,
    pub distractor_pool: Vec<usize>,
    /// Upper bound on foreground shapes per scene (at least one is drawn).
    pub max_foreground: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Shape half-extent range as fractions of the smaller image side.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Score of the true class; the remainder is spread uniformly.
    pub correct_weight: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            n_classes: 21,
            foreground_pool: (1..=4).collect(),
            distractor_pool: (5..=10).collect(),
            max_foreground: 1,
            min_shapes: 2,
            max_shapes: 4,
            min_radius: 0.18,
            max_radius: 0.30,
            correct_weight: 0.9,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.width < 16 || self.height < 16 {
            return bad("synthetic scenes must be at least 16x16".into());
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return bad(format!("invalid shape count range {}..={}", self.min_shapes, self.max_shapes));
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius && self.max_radius < 0.5) {
            return bad("shape radii must satisfy 0 < min_radius <= max_radius < 0.5".into());
        }
        if self.foreground_pool.is_empty() || self.max_foreground == 0 {
            return bad("need at least one foreground class".into());
        }
        if self.distractor_pool.len() + self.max_foreground.min(self.foreground_pool.len()) < self.max_shapes {
            return bad("class pools too small for max_shapes".into());
        }
        let mut pool: Vec<usize> = self.foreground_pool.iter().chain(&self.distractor_pool).copied().collect();
        let n_pool = pool.len();
        pool.sort_unstable();
        pool.dedup();
        if pool.len() != n_pool || pool.iter().any(|&c| c == OTHERS_CLASS || c >= self.n_classes) {
            return bad(format!("class pools must hold distinct classes in 1..{}", self.n_classes));
        }
        let fg_max = self.foreground_pool.iter().max().copied().unwrap_or(0);
        if self.distractor_pool.iter().any(|&d| d < fg_max) {
            return bad("distractor classes must exceed every foreground class".into());
        }
        if !(self.correct_weight > 1.0 / self.n_classes as f32 && self.correct_weight <= 1.0) {
            return bad("correct_weight must exceed the uniform share and be at most 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
        }
    }

    /// Bounding box grown by `margin`: (x0, y0, x1, y1).
    fn bounds(&self, margin: f64) -> (f64, f64, f64, f64) {
        let (x0, y0, x1, y1) = match *self {
            Shape::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
        };
        (x0 - margin, y0 - margin, x1 + margin, y1 + margin)
    }
}

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

/// A generated scene with its planted layout.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: ImageBuffer,
    pub mask: GroundTruthMask,
    pub scores: SemanticScoreMap,
    /// True class of every pixel.
    pub layout: Vec<u16>,
    /// Shape classes in drawing order.
    pub classes: Vec<usize>,
    pub salient_class: usize,
}

const PALETTE: [[f64; 3]; 8] = [
    [210.0, 50.0, 40.0],
    [40.0, 170.0, 60.0],
    [50.0, 80.0, 210.0],
    [220.0, 200.0, 40.0],
    [170.0, 60.0, 190.0],
    [40.0, 190.0, 200.0],
    [230.0, 130.0, 30.0],
    [120.0, 70.0, 40.0],
];

fn class_color(class: usize) -> [f64; 3] {
    let base = PALETTE[(class - 1) % PALETTE.len()];
    let shade = 1.0 - 0.25 * ((class - 1) / PALETTE.len()) as f64;
    base.map(|c| c * shade)
}

/// Texture value in roughly [-1, 1] at a pixel.
fn texture(kind: usize, x: f64, y: f64, angle: f64, period: f64) -> f64 {
    let u = x * angle.cos() + y * angle.sin();
    let v = -x * angle.sin() + y * angle.cos();
    match kind % 3 {
        0 => 0.0,
        1 => (2.0 * PI * u / period).sin(),
        _ => {
            let a = (u / period).floor() as i64 + (v / period).floor() as i64;
            if a.rem_euclid(2) == 0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Generates scene `index` of the dataset seeded by `seed`.
pub fn generate_scene(cfg: &SynthConfig, seed: u64, index: usize) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);

    let want = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    let n_fg = rng.random_range(1..=cfg.max_foreground.min(cfg.foreground_pool.len()).min(want));
    let mut fg = cfg.foreground_pool.clone();
    let mut distractors = cfg.distractor_pool.clone();
    let mut classes: Vec<usize> = (0..want)
        .map(|i| {
            let pool = if i < n_fg { &mut fg } else { &mut distractors };
            pool.swap_remove(rng.random_range(0..pool.len()))
        })
        .collect();
    // popped from the back: foreground shapes are placed first
    classes.reverse();
    let mut shapes: Vec<(Shape, usize)> = Vec::new();
    let min_dim = wf.min(hf);
    let mut attempts = 0;
    while shapes.len() < want && attempts < 500 {
        attempts += 1;
        // shrink gradually when the scene is crowded
        let shrink = 1.0 - 0.6 * (attempts as f64 / 500.0);
        let rx = rng.random_range(cfg.min_radius..=cfg.max_radius) * min_dim * shrink;
        let ry = rx * rng.random_range(0.7..1.4);
        let (rx, ry) = (rx.min(wf / 2.0 - 3.0), ry.min(hf / 2.0 - 3.0));
        let cx = rng.random_range(rx + 2.0..wf - rx - 2.0);
        let cy = rng.random_range(ry + 2.0..hf - ry - 2.0);
        let shape = if rng.random_bool(0.5) {
            Shape::Ellipse { cx, cy, rx, ry }
        } else {
            Shape::Rect {
                x0: cx - rx,
                y0: cy - ry,
                x1: cx + rx,
                y1: cy + ry,
            }
        };
        let b = shape.bounds(3.0);
        if shapes.iter().any(|(s, _)| overlaps(s.bounds(3.0), b)) {
            continue;
        }
        shapes.push((shape, classes.pop().expect("one class per wanted shape")));
    }
    if shapes.is_empty() {
        return Err(Error::Invariant("could not place any synthetic shape".into()));
    }

    let bg_base: [f64; 3] = std::array::from_fn(|_| rng.random_range(90.0..170.0));
    let bg_angle = rng.random_range(0.0..PI);
    let bg_period = rng.random_range(6.0..14.0);
    let looks: Vec<([f64; 3], f64, f64)> = shapes
        .iter()
        .map(|&(_, class)| {
            let base = class_color(class);
            let jitter: [f64; 3] = std::array::from_fn(|i| base[i] + rng.random_range(-15.0..15.0));
            (jitter, rng.random_range(0.0..PI), rng.random_range(4.0..9.0))
        })
        .collect();

    let salient_class = shapes.iter().map(|&(_, c)| c).min().expect("non-empty");
    let mut pixels = Vec::with_capacity(3 * w * h);
    let mut layout = vec![OTHERS_CLASS as u16; w * h];
    let mut mask = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = shapes.iter().position(|(s, _)| s.contains(px, py));
            let noise = rng.random_range(-8.0..8.0);
            let rgb = match hit {
                Some(i) => {
                    let class = shapes[i].1;
                    layout[y * w + x] = class as u16;
                    mask[y * w + x] = u8::from(class == salient_class);
                    let (base, angle, period) = looks[i];
                    let t = 30.0 * texture(class, px, py, angle, period);
                    base.map(|c| c + t + noise)
                }
                None => {
                    let t = 18.0 * texture(1, px, py, bg_angle, bg_period);
                    bg_base.map(|c| c + t + noise)
                }
            };
            pixels.extend(rgb.map(to_u8));
        }
    }

    let n_c = cfg.n_classes;
    let rest = (1.0 - cfg.correct_weight) / (n_c - 1) as f32;
    let mut scores = vec![rest; w * h * n_c];
    for (p, &class) in layout.iter().enumerate() {
        scores[p * n_c + class as usize] = cfg.correct_weight;
    }

    Ok(SyntheticScene {
        image: ImageBuffer::new(w, h, pixels)?,
        mask: GroundTruthMask::new(w, h, mask)?,
        scores: SemanticScoreMap::new(w, h, n_c, scores)?,
        layout,
        classes: shapes.iter().map(|&(_, c)| c).collect(),
        salient_class,
    })
}

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Writes scenes `indices` under `dir` as `scene_XXXX.png`,
/// `scene_XXXX_mask.png` and `scene_XXXX.spst`, plus `manifest.tsv`.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    cfg: &SynthConfig,
    indices: Range<usize>,
    seed: u64,
) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    cfg.validate()?;
    if indices.is_empty() {
        return Err(Error::InvalidArgument("scene count must be at least 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<ManifestEntry> = indices
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(cfg, seed, i)?;
            let name = scene_name(i);
            let entry = ManifestEntry {
                image: dir.join(format!("{name}.png")),
                mask: Some(dir.join(format!("{name}_mask.png"))),
                scores: dir.join(format!("{name}.spst")),
            };
            io::write_image(&scene.image, &entry.image)?;
            io::write_mask(&scene.mask, entry.mask.as_ref().expect("set above"))?;
            io::write_score_tensor(&scene.scores, &entry.scores)?;
            Ok(entry)
        })
        .collect::<Result<_>>()?;
    io::write_manifest(dir.join("manifest.tsv"), &entries)?;
    Ok(DatasetManifest {
        split: Split::Train,
        entries,
    })
}
