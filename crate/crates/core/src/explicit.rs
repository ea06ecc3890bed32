//! Explicit semantic priors: per class pair, the average salient fraction of
//! class `k` over training images in which `k` and `t` co-occur.
//!
//! At test time every pixel of class `k` receives the sum of `sp[k][t]` over
//! the classes `t` present in the image.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{MapRole, SaliencyMap};
use crate::io::{self, DatasetManifest, GroundTruthMask};
use crate::semantics::{argmax_labels, LabelMap};

pub const DEFAULT_EPSILON: f64 = 1e-8;

fn check_dims(labels: &LabelMap, mask: &GroundTruthMask) -> Result<()> {
    if (labels.height(), labels.width()) != (mask.height(), mask.width()) {
        return Err(Error::dims(
            "ground-truth mask",
            (labels.height(), labels.width()),
            (mask.height(), mask.width()),
        ));
    }
    Ok(())
}

/// Fraction of class-`k` pixels that are salient; 0 when `k` is absent.
pub fn class_density(labels: &LabelMap, mask: &GroundTruthMask, k: usize) -> Result<f64> {
    check_dims(labels, mask)?;
    let (mut count, mut salient) = (0usize, 0usize);
    for (&l, &g) in labels.labels().iter().zip(mask.values()) {
        if l as usize == k {
            count += 1;
            salient += g as usize;
        }
    }
    Ok(if count == 0 { 0.0 } else { salient as f64 / count as f64 })
}

/// 1 iff both classes occur in `labels` (for `k == t`, iff `k` occurs).
pub fn cooccurrence(labels: &LabelMap, k: usize, t: usize) -> u8 {
    let (mut has_k, mut has_t) = (false, false);
    for &l in labels.labels() {
        has_k |= l as usize == k;
        has_t |= l as usize == t;
        if has_k && has_t {
            return 1;
        }
    }
    0
}

fn densities(labels: &LabelMap, mask: &GroundTruthMask) -> (Vec<f64>, Vec<bool>) {
    let n_c = labels.n_classes();
    let mut count = vec![0usize; n_c];
    let mut salient = vec![0usize; n_c];
    for (&l, &g) in labels.labels().iter().zip(mask.values()) {
        count[l as usize] += 1;
        salient[l as usize] += g as usize;
    }
    let p = count
        .iter()
        .zip(&salient)
        .map(|(&c, &s)| if c == 0 { 0.0 } else { s as f64 / c as f64 })
        .collect();
    (p, count.iter().map(|&c| c > 0).collect())
}

/// Running sums of `p_k * theta_kt` and `theta_kt` over training images.
/// Sums are order-independent, so per-image accumulators may be merged.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorAccumulator {
    n_classes: usize,
    numerator: Vec<f64>,
    denominator: Vec<f64>,
    n_images: usize,
}

impl PriorAccumulator {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            numerator: vec![0.0; n_classes * n_classes],
            denominator: vec![0.0; n_classes * n_classes],
            n_images: 0,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn numerator(&self, k: usize, t: usize) -> f64 {
        self.numerator[k * self.n_classes + t]
    }

    pub fn denominator(&self, k: usize, t: usize) -> f64 {
        self.denominator[k * self.n_classes + t]
    }

    pub fn add_image(&mut self, labels: &LabelMap, mask: &GroundTruthMask) -> Result<()> {
        check_dims(labels, mask)?;
        if labels.n_classes() != self.n_classes {
            return Err(Error::DimensionMismatch {
                what: "class count",
                expected: self.n_classes.to_string(),
                found: labels.n_classes().to_string(),
            });
        }
        let (p, present) = densities(labels, mask);
        let n = self.n_classes;
        for k in (0..n).filter(|&k| present[k]) {
            for t in (0..n).filter(|&t| present[t]) {
                self.numerator[k * n + t] += p[k];
                self.denominator[k * n + t] += 1.0;
            }
        }
        self.n_images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &PriorAccumulator) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::DimensionMismatch {
                what: "class count",
                expected: self.n_classes.to_string(),
                found: other.n_classes.to_string(),
            });
        }
        for (a, b) in self.numerator.iter_mut().zip(&other.numerator) {
            *a += b;
        }
        for (a, b) in self.denominator.iter_mut().zip(&other.denominator) {
            *a += b;
        }
        self.n_images += other.n_images;
        Ok(())
    }

    pub fn finish(&self, epsilon: f64) -> ExplicitPriorTable {
        let sp = self
            .numerator
            .iter()
            .zip(&self.denominator)
            .map(|(&num, &den)| num / (den + epsilon))
            .collect();
        ExplicitPriorTable {
            n_classes: self.n_classes,
            epsilon,
            n_images: self.n_images,
            sp,
        }
    }
}

/// The learned `n_c x n_c` prior matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitPriorTable {
    n_classes: usize,
    epsilon: f64,
    n_images: usize,
    sp: Vec<f64>,
}

impl ExplicitPriorTable {
    /// Builds a table from a row-major matrix. Values must lie in [0,1).
    pub fn from_matrix(n_classes: usize, epsilon: f64, n_images: usize, sp: Vec<f64>) -> Result<Self> {
        if sp.len() != n_classes * n_classes {
            return Err(Error::InvalidArgument(format!(
                "prior matrix for {n_classes} classes needs {} values, got {}",
                n_classes * n_classes,
                sp.len()
            )));
        }
        if let Some(v) = sp.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("prior value {v} outside [0,1)")));
        }
        Ok(Self {
            n_classes,
            epsilon,
            n_images,
            sp,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn sp(&self, k: usize, t: usize) -> f64 {
        self.sp[k * self.n_classes + t]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.sp
    }

    /// Text form: `n_c epsilon n_t`, then one row per class with 17
    /// significant digits per value.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {:.16e} {}\n", self.n_classes, self.epsilon, self.n_images);
        for row in self.sp.chunks(self.n_classes) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_atomic(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|reason| Error::corrupt(path, reason))
    }

    fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or("missing header")?.split_whitespace().collect();
        if header.len() != 3 {
            return Err(format!("header needs 3 fields, found {}", header.len()));
        }
        let n_classes: usize = header[0].parse().map_err(|e| format!("n_c: {e}"))?;
        let epsilon: f64 = header[1].parse().map_err(|e| format!("epsilon: {e}"))?;
        let n_images: usize = header[2].parse().map_err(|e| format!("n_t: {e}"))?;
        let mut sp = Vec::with_capacity(n_classes * n_classes);
        for r in 0..n_classes {
            let line = lines.next().ok_or_else(|| format!("missing row {r}"))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| format!("row {r}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if row.len() != n_classes {
                return Err(format!("row {r} has {} values, expected {n_classes}", row.len()));
            }
            sp.extend(row);
        }
        if lines.next().is_some() {
            return Err("trailing data after matrix".into());
        }
        Self::from_matrix(n_classes, epsilon, n_images, sp).map_err(|e| e.to_string())
    }
}

/// Learns the prior table from every entry of a training manifest.
pub fn train_explicit_priors(train: &DatasetManifest) -> Result<ExplicitPriorTable> {
    Ok(accumulate_manifest(train)?.finish(DEFAULT_EPSILON))
}

/// Per-image accumulation over a manifest, merged in manifest order.
pub fn accumulate_manifest(train: &DatasetManifest) -> Result<PriorAccumulator> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training manifest"));
    }
    let parts: Vec<PriorAccumulator> = train
        .entries
        .par_iter()
        .map(|entry| {
            let inner = || -> Result<PriorAccumulator> {
                let scores = io::load_score_tensor(&entry.scores)?;
                let mask_path = entry
                    .mask
                    .as_ref()
                    .ok_or(Error::InvalidArgument("training entry without mask".into()))?;
                let mask = io::load_mask(mask_path, scores.height(), scores.width())?;
                let labels = argmax_labels(&scores);
                let mut acc = PriorAccumulator::new(scores.n_classes());
                acc.add_image(&labels, &mask)?;
                Ok(acc)
            };
            inner().map_err(|e| e.in_entry(entry.name()))
        })
        .collect::<Result<_>>()?;
    let mut total = PriorAccumulator::new(parts[0].n_classes);
    for (part, entry) in parts.iter().zip(&train.entries) {
        total.merge(part).map_err(|e| e.in_entry(entry.name()))?;
    }
    Ok(total)
}

/// Unnormalized explicit saliency per pixel.
pub fn explicit_raw(labels: &LabelMap, table: &ExplicitPriorTable) -> Result<Vec<f64>> {
    let n = table.n_classes;
    if labels.n_classes() != n {
        return Err(Error::DimensionMismatch {
            what: "class count",
            expected: n.to_string(),
            found: labels.n_classes().to_string(),
        });
    }
    let present = labels.presence();
    let value: Vec<f64> = (0..n)
        .map(|k| {
            if !present[k] {
                return 0.0;
            }
            (0..n).filter(|&t| present[t]).map(|t| table.sp(k, t)).sum()
        })
        .collect();
    Ok(labels.labels().iter().map(|&l| value[l as usize]).collect())
}

/// Explicit saliency map, min-max normalized (a constant map becomes zeros).
pub fn explicit_saliency(labels: &LabelMap, table: &ExplicitPriorTable) -> Result<SaliencyMap> {
    let raw = explicit_raw(labels, table)?;
    Ok(SaliencyMap::new(labels.width(), labels.height(), raw, MapRole::Explicit)?.normalized())
}
