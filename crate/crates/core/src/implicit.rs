//! Region-level training data and the implicit saliency map.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{feature_names, FeatureExtractor, RegionFeatureVector};
use crate::forest::{RegressionForest, TrainingSample};
use crate::fusion::{MapRole, SaliencyMap};
use crate::io::{self, DatasetManifest, GroundTruthMask, ImageBuffer, SemanticScoreMap};
use crate::semantics::argmax_labels;
use crate::superpixel::{slic_segment_with, Segmentation, SlicParams};
use crate::textons::TextonDictionary;

/// Minimum fraction of a region's pixels that must agree for it to be
/// labeled (inclusive).
pub const AGREEMENT_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Salient,
    Background,
    Ambiguous,
}

impl RegionLabel {
    /// Regression target, or `None` for ambiguous regions.
    pub fn target(self) -> Option<f64> {
        match self {
            RegionLabel::Salient => Some(1.0),
            RegionLabel::Background => Some(0.0),
            RegionLabel::Ambiguous => None,
        }
    }
}

/// Salient when at least 80% of a region's pixels are salient, background
/// when at least 80% are not, ambiguous otherwise.
pub fn label_training_regions(seg: &Segmentation, mask: &GroundTruthMask) -> Result<Vec<RegionLabel>> {
    if (seg.height(), seg.width()) != (mask.height(), mask.width()) {
        return Err(Error::dims(
            "ground-truth mask",
            (seg.height(), seg.width()),
            (mask.height(), mask.width()),
        ));
    }
    let values = mask.values();
    Ok((0..seg.n_regions())
        .map(|q| {
            let pixels = seg.region_pixels(q);
            let n = pixels.len() as f64;
            let salient = pixels.iter().filter(|&&p| values[p as usize] == 1).count() as f64;
            if salient >= AGREEMENT_FRACTION * n {
                RegionLabel::Salient
            } else if n - salient >= AGREEMENT_FRACTION * n {
                RegionLabel::Background
            } else {
                RegionLabel::Ambiguous
            }
        })
        .collect())
}

/// Everything one annotated image contributes to training.
#[derive(Debug, Clone)]
pub struct ImageRegions {
    pub features: Vec<RegionFeatureVector>,
    pub labels: Vec<RegionLabel>,
    pub sizes: Vec<usize>,
}

impl ImageRegions {
    pub fn compute(
        image: &ImageBuffer,
        scores: &SemanticScoreMap,
        mask: &GroundTruthMask,
        dict: &TextonDictionary,
        slic: &SlicParams,
    ) -> Result<Self> {
        let labels = argmax_labels(scores);
        let seg = slic_segment_with(image, slic)?;
        let features = FeatureExtractor::new(image, scores, &labels, &seg, dict)?.all_regions()?;
        Ok(Self {
            features,
            labels: label_training_regions(&seg, mask)?,
            sizes: (0..seg.n_regions()).map(|q| seg.region_size(q)).collect(),
        })
    }

    /// Non-ambiguous regions as training samples, in region order.
    pub fn samples(&self) -> Vec<TrainingSample> {
        self.features
            .iter()
            .zip(&self.labels)
            .filter_map(|(f, l)| {
                l.target().map(|target| TrainingSample {
                    features: f.as_slice().to_vec(),
                    target,
                })
            })
            .collect()
    }
}

/// Segments, describes and labels every training image; ambiguous regions are
/// dropped. Samples follow manifest order.
pub fn build_training_set(
    train: &DatasetManifest,
    dict: &TextonDictionary,
    slic: &SlicParams,
) -> Result<Vec<TrainingSample>> {
    let per_image: Vec<Vec<TrainingSample>> = train
        .entries
        .par_iter()
        .map(|entry| {
            let loaded = io::load_entry(entry)?;
            let mask = loaded
                .mask
                .ok_or_else(|| Error::InvalidArgument("training entry without mask".into()).in_entry(entry.name()))?;
            ImageRegions::compute(&loaded.image, &loaded.scores, &mask, dict, slic)
                .map(|r| r.samples())
                .map_err(|e| e.in_entry(entry.name()))
        })
        .collect::<Result<_>>()?;
    Ok(per_image.concat())
}

/// Paints one value per region.
pub fn region_map(seg: &Segmentation, region_values: &[f64], role: MapRole) -> Result<SaliencyMap> {
    if region_values.len() != seg.n_regions() {
        return Err(Error::DimensionMismatch {
            what: "region values",
            expected: seg.n_regions().to_string(),
            found: region_values.len().to_string(),
        });
    }
    let values = seg.labels().iter().map(|&q| region_values[q as usize]).collect();
    SaliencyMap::new(seg.width(), seg.height(), values, role)
}

/// Forest prediction for every region of `seg`.
pub fn region_predictions(
    image: &ImageBuffer,
    scores: &SemanticScoreMap,
    seg: &Segmentation,
    dict: &TextonDictionary,
    forest: &RegressionForest,
) -> Result<Vec<f64>> {
    let labels = argmax_labels(scores);
    let ex = FeatureExtractor::new(image, scores, &labels, seg, dict)?;
    if ex.dim() != forest.feature_dim() {
        return Err(Error::DimensionMismatch {
            what: "forest feature dimension",
            expected: forest.feature_dim().to_string(),
            found: ex.dim().to_string(),
        });
    }
    (0..seg.n_regions())
        .map(|q| forest.predict(ex.region(q)?.as_slice()))
        .collect()
}

/// Region-constant implicit map, min-max normalized.
pub fn implicit_saliency(
    image: &ImageBuffer,
    scores: &SemanticScoreMap,
    seg: &Segmentation,
    dict: &TextonDictionary,
    forest: &RegressionForest,
) -> Result<SaliencyMap> {
    let preds = region_predictions(image, scores, seg, dict, forest)?;
    Ok(region_map(seg, &preds, MapRole::Implicit)?.normalized())
}

/// Writes samples as CSV: one column per feature, then `target`.
pub fn write_training_csv(samples: &[TrainingSample], n_classes: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut names = feature_names(n_classes);
    names.push("target".into());
    let mut out = names.join(",");
    out.push('\n');
    for s in samples {
        if s.features.len() + 1 != names.len() {
            return Err(Error::DimensionMismatch {
                what: "training sample features",
                expected: (names.len() - 1).to_string(),
                found: s.features.len().to_string(),
            });
        }
        for v in &s.features {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", s.target);
    }
    io::write_atomic(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textons::N_TEXTONS;

    fn strips(w: usize, h: usize, n: usize) -> Segmentation {
        Segmentation::from_labels(w, h, (0..w * h).map(|p| ((p % w) * n / w) as u32).collect()).unwrap()
    }

    #[test]
    fn eighty_percent_rule() {
        let seg = Segmentation::from_labels(5, 2, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]).unwrap();
        let mask = GroundTruthMask::new(5, 2, vec![1, 1, 1, 1, 0, 1, 1, 0, 0, 0]).unwrap();
        // region 0: 4/5 = 80% salient (inclusive); region 1: 2/5 salient.
        assert_eq!(
            label_training_regions(&seg, &mask).unwrap(),
            vec![RegionLabel::Salient, RegionLabel::Ambiguous]
        );

        let seg = strips(4, 2, 2);
        let mask = GroundTruthMask::new(4, 2, vec![1, 1, 1, 0, 1, 1, 0, 1]).unwrap();
        // region 0 fully salient, region 1 50/50
        assert_eq!(
            label_training_regions(&seg, &mask).unwrap(),
            vec![RegionLabel::Salient, RegionLabel::Ambiguous]
        );

        let empty = GroundTruthMask::new(4, 2, vec![0; 8]).unwrap();
        assert!(label_training_regions(&seg, &empty)
            .unwrap()
            .iter()
            .all(|&l| l == RegionLabel::Background));
    }

    #[test]
    fn label_counts_partition_regions() {
        let seg = strips(20, 3, 7);
        let values: Vec<u8> = (0..60).map(|p| u8::from((p * 7) % 11 < 5)).collect();
        let mask = GroundTruthMask::new(20, 3, values).unwrap();
        let labels = label_training_regions(&seg, &mask).unwrap();
        assert_eq!(labels.len(), seg.n_regions());
    }

    fn dict() -> TextonDictionary {
        TextonDictionary::from_centers((0..N_TEXTONS).map(|i| [i as f64; 18]).collect()).unwrap()
    }

    #[test]
    fn constant_forest_gives_zero_map() {
        let img = ImageBuffer::filled(6, 4, [9, 9, 9]).unwrap();
        let scores = SemanticScoreMap::new(6, 4, 3, vec![0.0; 72]).unwrap();
        let seg = strips(6, 4, 3);
        let forest = RegressionForest::constant(43, 0.4).unwrap();
        let map = implicit_saliency(&img, &scores, &seg, &dict(), &forest).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
        let wrong = RegressionForest::constant(79, 0.4).unwrap();
        assert!(implicit_saliency(&img, &scores, &seg, &dict(), &wrong).is_err());
    }

    #[test]
    fn two_region_predictions_normalize_to_extremes() {
        let img = ImageBuffer::filled(6, 4, [9, 9, 9]).unwrap();
        let scores = SemanticScoreMap::new(6, 4, 3, vec![0.0; 72]).unwrap();
        let seg = strips(6, 4, 2);
        // Centroid x is 0.25 on the left, 0.75 on the right.
        let forest = RegressionForest::from_stumps(43, &[(0, 0.5, 0.2, 0.8)]).unwrap();
        let preds = region_predictions(&img, &scores, &seg, &dict(), &forest).unwrap();
        assert_eq!(preds, vec![0.2, 0.8]);
        let map = implicit_saliency(&img, &scores, &seg, &dict(), &forest).unwrap();
        for p in 0..24 {
            assert_eq!(map.values()[p], if p % 6 < 3 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.csv");
        let s = TrainingSample {
            features: vec![0.5; 43],
            target: 1.0,
        };
        write_training_csv(&[s], 3, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("centroid_x,centroid_y,") && header.ends_with("sp2_2,target"));
        assert_eq!(lines.next().unwrap().split(',').count(), 44);
    }
}
