//! Regional descriptors: geometry, color statistics, textons and the two
//! semantic feature blocks.
//!
//! Layout of a [`RegionFeatureVector`] (`37 + 2 n_c` values):
//!
//! | slots        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 0..2         | mean normalized centroid (x, y)                     |
//! | 2..6         | bounding box (x_min, y_min, x_max, y_max) / (w, h)  |
//! | 6            | bounding box aspect ratio (width / height)          |
//! | 7            | boundary pixel count / (2 (h + w))                  |
//! | 8            | area / (h w)                                        |
//! | 9            | total area of adjacent regions / (h w), clamped     |
//! | 10..13       | RGB variances                                       |
//! | 13..16       | L*a*b* variances                                    |
//! | 16..19       | mean RGB                                            |
//! | 19..22       | HSV variances (hue circular)                        |
//! | 22..37       | texton histogram                                    |
//! | 37..37+n_c   | class-label histogram of the region                 |
//! | 37+n_c..     | region-masked class scores / (h w)                  |
//!
//! Normalized coordinates use pixel centers, `(x + 0.5) / w`.

use std::ops::Range;

use crate::color::{rgb_to_hsv, LabConverter};
use crate::error::{Error, Result};
use crate::io::{ImageBuffer, SemanticScoreMap};
use crate::semantics::LabelMap;
use crate::stats::Moments;
use crate::superpixel::{neighbors4, Segmentation};
use crate::textons::{TextonDictionary, TextonMap, N_TEXTONS};

pub const GEOMETRIC: Range<usize> = 0..10;
pub const COLOR: Range<usize> = 10..22;
pub const TEXTON: Range<usize> = 22..37;
pub const FIXED_DIM: usize = 37;

pub const fn feature_dim(n_classes: usize) -> usize {
    FIXED_DIM + 2 * n_classes
}

pub fn local_semantic_range(n_classes: usize) -> Range<usize> {
    FIXED_DIM..FIXED_DIM + n_classes
}

pub fn global_semantic_range(n_classes: usize) -> Range<usize> {
    FIXED_DIM + n_classes..feature_dim(n_classes)
}

/// Column names for the feature layout, e.g. for CSV headers.
pub fn feature_names(n_classes: usize) -> Vec<String> {
    let fixed = [
        "centroid_x",
        "centroid_y",
        "bbox_x_min",
        "bbox_y_min",
        "bbox_x_max",
        "bbox_y_max",
        "bbox_aspect",
        "perimeter",
        "area",
        "neighbor_area",
        "var_r",
        "var_g",
        "var_b",
        "var_l",
        "var_a",
        "var_lab_b",
        "mean_r",
        "mean_g",
        "mean_b",
        "var_hue",
        "var_s",
        "var_v",
    ];
    let mut names: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    names.extend((0..N_TEXTONS).map(|i| format!("texton_{i}")));
    names.extend((0..n_classes).map(|k| format!("sp1_{k}")));
    names.extend((0..n_classes).map(|k| format!("sp2_{k}")));
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureVector(Vec<f64>);

impl RegionFeatureVector {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_size(seg: &Segmentation, what: &'static str, h: usize, w: usize) -> Result<()> {
    if (seg.height(), seg.width()) != (h, w) {
        return Err(Error::dims(what, (seg.height(), seg.width()), (h, w)));
    }
    Ok(())
}

pub fn geometric_features(seg: &Segmentation, q: usize) -> Result<[f64; 10]> {
    seg.check_region(q)?;
    let (w, h) = (seg.width(), seg.height());
    let labels = seg.labels();
    let pixels = seg.region_pixels(q);
    let n = pixels.len() as f64;

    let (mut sx, mut sy) = (0.0, 0.0);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    let mut boundary = 0usize;
    let mut adjacent: Vec<usize> = Vec::new();
    for &p in pixels {
        let p = p as usize;
        let (x, y) = (p % w, p / w);
        sx += (x as f64 + 0.5) / w as f64;
        sy += (y as f64 + 0.5) / h as f64;
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
        let ns = neighbors4(p, w, h);
        let mut on_boundary = ns.iter().any(Option::is_none);
        for nb in ns.into_iter().flatten() {
            let l = labels[nb] as usize;
            if l != q {
                on_boundary = true;
                adjacent.push(l);
            }
        }
        boundary += usize::from(on_boundary);
    }
    adjacent.sort_unstable();
    adjacent.dedup();
    let image_area = (w * h) as f64;
    let neighbor_area: f64 = adjacent.iter().map(|&r| seg.region_size(r) as f64).sum::<f64>() / image_area;
    let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    Ok([
        sx / n,
        sy / n,
        x0 as f64 / w as f64,
        y0 as f64 / h as f64,
        (x1 + 1) as f64 / w as f64,
        (y1 + 1) as f64 / h as f64,
        if bh > 0.0 { bw / bh } else { 0.0 },
        boundary as f64 / (2 * (h + w)) as f64,
        n / image_area,
        neighbor_area.min(1.0),
    ])
}

pub fn color_features(image: &ImageBuffer, seg: &Segmentation, q: usize) -> Result<[f64; 12]> {
    seg.check_region(q)?;
    check_size(seg, "image", image.height(), image.width())?;
    let conv = LabConverter::new();
    let mut rgb = [Moments::default(); 3];
    let mut lab = [Moments::default(); 3];
    let mut hsv = [Moments::default(); 2];
    let (mut hue_c, mut hue_s) = (0.0, 0.0);
    for &p in seg.region_pixels(q) {
        let px = image.pixel_at(p as usize);
        for c in 0..3 {
            rgb[c].push(px[c] as f64 / 255.0);
        }
        let l = conv.convert(px);
        lab[0].push(l[0] / 100.0);
        lab[1].push((l[1] + 128.0) / 255.0);
        lab[2].push((l[2] + 128.0) / 255.0);
        let [hh, s, v] = rgb_to_hsv(px);
        let angle = hh * std::f64::consts::TAU;
        hue_c += angle.cos();
        hue_s += angle.sin();
        hsv[0].push(s);
        hsv[1].push(v);
    }
    let n = seg.region_size(q) as f64;
    let hue_var = (1.0 - (hue_c * hue_c + hue_s * hue_s).sqrt() / n).clamp(0.0, 1.0);
    Ok([
        rgb[0].variance(),
        rgb[1].variance(),
        rgb[2].variance(),
        lab[0].variance(),
        lab[1].variance(),
        lab[2].variance(),
        rgb[0].mean(),
        rgb[1].mean(),
        rgb[2].mean(),
        hue_var,
        hsv[0].variance(),
        hsv[1].variance(),
    ])
}

/// Class-label histogram of region `q` (sums to 1).
pub fn local_semantic_feature(labels: &LabelMap, seg: &Segmentation, q: usize) -> Result<Vec<f64>> {
    seg.check_region(q)?;
    check_size(seg, "label map", labels.height(), labels.width())?;
    let mut hist = vec![0.0; labels.n_classes()];
    for &p in seg.region_pixels(q) {
        hist[labels.labels()[p as usize] as usize] += 1.0;
    }
    let n = seg.region_size(q) as f64;
    hist.iter_mut().for_each(|v| *v /= n);
    Ok(hist)
}

/// Per-class score mass inside region `q`, divided by the image area.
pub fn global_semantic_feature(scores: &SemanticScoreMap, seg: &Segmentation, q: usize) -> Result<Vec<f64>> {
    seg.check_region(q)?;
    check_size(seg, "score tensor", scores.height(), scores.width())?;
    let mut mass = vec![0.0; scores.n_classes()];
    for &p in seg.region_pixels(q) {
        for (m, &c) in mass.iter_mut().zip(scores.scores_at(p as usize)) {
            *m += c as f64;
        }
    }
    let area = (scores.width() * scores.height()) as f64;
    mass.iter_mut().for_each(|v| *v /= area);
    Ok(mass)
}

/// Computes region descriptors for one image, filtering it once.
pub struct FeatureExtractor<'a> {
    image: &'a ImageBuffer,
    scores: &'a SemanticScoreMap,
    labels: &'a LabelMap,
    seg: &'a Segmentation,
    textons: TextonMap,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(
        image: &'a ImageBuffer,
        scores: &'a SemanticScoreMap,
        labels: &'a LabelMap,
        seg: &'a Segmentation,
        dict: &TextonDictionary,
    ) -> Result<Self> {
        check_size(seg, "image", image.height(), image.width())?;
        check_size(seg, "score tensor", scores.height(), scores.width())?;
        check_size(seg, "label map", labels.height(), labels.width())?;
        if labels.n_classes() != scores.n_classes() {
            return Err(Error::DimensionMismatch {
                what: "class count",
                expected: scores.n_classes().to_string(),
                found: labels.n_classes().to_string(),
            });
        }
        Ok(Self {
            image,
            scores,
            labels,
            seg,
            textons: TextonMap::compute(image, dict),
        })
    }

    pub fn dim(&self) -> usize {
        feature_dim(self.scores.n_classes())
    }

    pub fn region(&self, q: usize) -> Result<RegionFeatureVector> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend(geometric_features(self.seg, q)?);
        v.extend(color_features(self.image, self.seg, q)?);
        v.extend(self.textons.histogram(self.seg, q)?);
        v.extend(local_semantic_feature(self.labels, self.seg, q)?);
        v.extend(global_semantic_feature(self.scores, self.seg, q)?);
        if v.len() != self.dim() {
            return Err(Error::Invariant(format!("feature length {} != {}", v.len(), self.dim())));
        }
        Ok(RegionFeatureVector(v))
    }

    /// Descriptors of every region, in region order.
    pub fn all_regions(&self) -> Result<Vec<RegionFeatureVector>> {
        (0..self.seg.n_regions()).map(|q| self.region(q)).collect()
    }
}

/// Full descriptor of region `q`. Filters the whole image; use
/// [`FeatureExtractor`] when describing many regions of one image.
pub fn assemble_features(
    image: &ImageBuffer,
    scores: &SemanticScoreMap,
    labels: &LabelMap,
    seg: &Segmentation,
    q: usize,
    dict: &TextonDictionary,
) -> Result<RegionFeatureVector> {
    FeatureExtractor::new(image, scores, labels, seg, dict)?.region(q)
}
