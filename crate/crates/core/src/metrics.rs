//! Saliency benchmark metrics: fixed-threshold PR curves, adaptive-threshold
//! F-measure and MAE, plus dataset-level reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::SaliencyMap;
use crate::io::{self, DatasetManifest, GroundTruthMask};
use crate::stats::pairwise_sum;

pub const N_THRESHOLDS: usize = 256;

/// Tolerance used to snap `255 S` onto an integer level, so maps read back
/// from 8-bit PNGs binarize exactly at their stored level.
const LEVEL_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub beta_squared: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { beta_squared: 0.3 }
    }
}

fn check_dims(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<()> {
    if (map.height(), map.width()) != (gt.height(), gt.width()) {
        return Err(Error::dims(
            "saliency map",
            (gt.height(), gt.width()),
            (map.height(), map.width()),
        ));
    }
    Ok(())
}

/// Highest threshold `t` in 0..=255 with `255 s >= t`.
fn level(s: f64) -> usize {
    let v = 255.0 * s.clamp(0.0, 1.0);
    let r = v.round();
    let v = if (v - r).abs() < LEVEL_SNAP { r } else { v };
    v.floor() as usize
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall at every threshold 0..=255, where a pixel is
/// predicted salient iff `255 S >= threshold`. Empty predictions have
/// precision 1.
pub fn pr_curve(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<Vec<PrPoint>> {
    check_dims(map, gt)?;
    let positives = gt.salient_count();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut hist_pos = [0usize; N_THRESHOLDS];
    let mut hist_neg = [0usize; N_THRESHOLDS];
    for (&s, &g) in map.values().iter().zip(gt.values()) {
        let l = level(s);
        if g == 1 {
            hist_pos[l] += 1;
        } else {
            hist_neg[l] += 1;
        }
    }
    let mut points = vec![
        PrPoint {
            threshold: 0,
            precision: 0.0,
            recall: 0.0
        };
        N_THRESHOLDS
    ];
    let (mut tp, mut fp) = (0, 0);
    for t in (0..N_THRESHOLDS).rev() {
        tp += hist_pos[t];
        fp += hist_neg[t];
        points[t] = PrPoint {
            threshold: t as u8,
            precision: ratio_or(tp, tp + fp, 1.0),
            recall: tp as f64 / positives as f64,
        };
    }
    Ok(points)
}

/// Twice the map mean, clamped to [0,1].
pub fn adaptive_threshold(map: &SaliencyMap) -> f64 {
    (2.0 * map.mean()).clamp(0.0, 1.0)
}

/// Precision and recall with a pixel predicted salient iff `S >= tau`.
pub fn precision_recall_at(map: &SaliencyMap, gt: &GroundTruthMask, tau: f64) -> Result<(f64, f64)> {
    check_dims(map, gt)?;
    let positives = gt.salient_count();
    if positives == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let (mut tp, mut predicted) = (0, 0);
    for (&s, &g) in map.values().iter().zip(gt.values()) {
        if s >= tau {
            predicted += 1;
            tp += g as usize;
        }
    }
    Ok((ratio_or(tp, predicted, 1.0), tp as f64 / positives as f64))
}

/// Weighted harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64, cfg: &MetricConfig) -> f64 {
    let b2 = cfg.beta_squared;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

pub fn mae(map: &SaliencyMap, gt: &GroundTruthMask) -> Result<f64> {
    check_dims(map, gt)?;
    let diffs: Vec<f64> = map
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&s, &g)| (s - g as f64).abs())
        .collect();
    Ok(pairwise_sum(&diffs) / diffs.len() as f64)
}

/// Every metric for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub curve: Vec<PrPoint>,
    pub adaptive_threshold: f64,
    pub adaptive_precision: f64,
    pub adaptive_recall: f64,
    pub f_measure: f64,
    pub mae: f64,
}

pub fn evaluate_image(map: &SaliencyMap, gt: &GroundTruthMask, cfg: &MetricConfig) -> Result<ImageMetrics> {
    let curve = pr_curve(map, gt)?;
    let tau = adaptive_threshold(map);
    let (p, r) = precision_recall_at(map, gt, tau)?;
    Ok(ImageMetrics {
        curve,
        adaptive_threshold: tau,
        adaptive_precision: p,
        adaptive_recall: r,
        f_measure: f_measure(p, r, cfg),
        mae: mae(map, gt)?,
    })
}

/// Dataset-level means over images (macro average).
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub n_images: usize,
    pub curve: Vec<PrPoint>,
    pub adaptive_precision: f64,
    pub adaptive_recall: f64,
    /// Mean of per-image adaptive F-measures.
    pub f_measure: f64,
    pub mae: f64,
}

impl Report {
    /// Aggregates per-image metrics in the given order.
    pub fn from_images(images: &[ImageMetrics]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyInput("evaluation set"));
        }
        let n = images.len() as f64;
        let mean_of = |f: &dyn Fn(&ImageMetrics) -> f64| {
            let v: Vec<f64> = images.iter().map(f).collect();
            pairwise_sum(&v) / n
        };
        let curve = (0..N_THRESHOLDS)
            .map(|t| PrPoint {
                threshold: t as u8,
                precision: mean_of(&|m| m.curve[t].precision),
                recall: mean_of(&|m| m.curve[t].recall),
            })
            .collect();
        Ok(Self {
            n_images: images.len(),
            curve,
            adaptive_precision: mean_of(&|m| m.adaptive_precision),
            adaptive_recall: mean_of(&|m| m.adaptive_recall),
            f_measure: mean_of(&|m| m.f_measure),
            mae: mean_of(&|m| m.mae),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# images={}; macro-averaged; empty prediction -> precision 1; precision=recall=0 -> F 0",
            self.n_images
        );
        out.push_str("threshold,precision,recall\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{}", p.threshold, sig9(p.precision), sig9(p.recall));
        }
        out.push_str("adaptive_precision,adaptive_recall,f_measure,mae\n");
        let _ = writeln!(
            out,
            "{},{},{},{}",
            sig9(self.adaptive_precision),
            sig9(self.adaptive_recall),
            sig9(self.f_measure),
            sig9(self.mae)
        );
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// Formats with 9 significant digits.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, v)
    } else {
        format!("{v:.8e}")
    }
}

/// Path of the saliency map expected for a manifest entry.
pub fn map_path(maps_dir: &Path, entry_name: &str) -> std::path::PathBuf {
    maps_dir.join(format!("{entry_name}.png"))
}

/// Evaluates `<maps_dir>/<stem>.png` against every entry's mask.
pub fn evaluate_dataset(maps_dir: impl AsRef<Path>, manifest: &DatasetManifest, cfg: &MetricConfig) -> Result<Report> {
    let maps_dir = maps_dir.as_ref();
    if manifest.is_empty() {
        return Err(Error::EmptyInput("evaluation manifest"));
    }
    let per_image: Vec<ImageMetrics> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let name = entry.name();
            let run = || -> Result<ImageMetrics> {
                let map = io::load_saliency_map(map_path(maps_dir, &name))?;
                let mask_path = entry
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("entry has no ground-truth mask".into()))?;
                let gt = io::load_mask(mask_path, map.height(), map.width())?;
                evaluate_image(&map, &gt, cfg)
            };
            run().map_err(|e| e.in_entry(name.clone()))
        })
        .collect::<Result<_>>()?;
    Report::from_images(&per_image)
}
