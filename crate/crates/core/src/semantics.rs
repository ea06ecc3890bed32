//! Per-pixel class labels from score tensors.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::io::SemanticScoreMap;

/// Index of the catch-all "others" class.
pub const OTHERS_CLASS: usize = 0;

/// Class names in index order: "others", then the 20 PASCAL VOC classes.
pub const VOC_CLASSES: [&str; 21] = [
    "others",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    n_classes: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, n_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "label map of {}x{} needs {} labels, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        if n_classes == 0 || n_classes > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!("unsupported class count {n_classes}")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {l} >= n_c = {n_classes}")));
        }
        Ok(Self {
            width,
            height,
            n_classes,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// `presence[k]` is true iff some pixel has label `k`.
    pub fn presence(&self) -> Vec<bool> {
        let mut present = vec![false; self.n_classes];
        for &l in &self.labels {
            present[l as usize] = true;
        }
        present
    }
}

/// Labels each pixel with the index of its highest score; the lowest index
/// wins ties.
pub fn argmax_labels(scores: &SemanticScoreMap) -> LabelMap {
    let labels = scores
        .as_raw()
        .chunks_exact(scores.n_classes())
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    LabelMap {
        width: scores.width(),
        height: scores.height(),
        n_classes: scores.n_classes(),
        labels,
    }
}

pub fn present_classes(labels: &LabelMap) -> BTreeSet<usize> {
    labels
        .presence()
        .into_iter()
        .enumerate()
        .filter_map(|(k, p)| p.then_some(k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_and_tie_rule() {
        let t = SemanticScoreMap::new(2, 1, 2, vec![0.9, 0.1, 0.5, 0.5]).unwrap();
        assert_eq!(argmax_labels(&t).labels(), &[0, 0]);
        let t = SemanticScoreMap::new(1, 1, 3, vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(argmax_labels(&t).labels(), &[1]);
    }

    #[test]
    fn presence_examples() {
        let zeros = LabelMap::new(3, 3, 4, vec![0; 9]).unwrap();
        assert_eq!(present_classes(&zeros), BTreeSet::from([0]));
        let halves = LabelMap::new(4, 2, 3, vec![1, 1, 2, 2, 1, 1, 2, 2]).unwrap();
        assert_eq!(present_classes(&halves), BTreeSet::from([1, 2]));
    }

    #[test]
    fn label_range_is_validated() {
        assert!(LabelMap::new(1, 1, 2, vec![2]).is_err());
    }

    proptest! {
        #[test]
        fn argmax_matches_max_scan(values in prop::collection::vec(0.0f32..1.0, 8 * 8 * 5)) {
            let t = SemanticScoreMap::new(8, 8, 5, values).unwrap();
            let labels = argmax_labels(&t);
            for p in 0..64 {
                let row = t.scores_at(p);
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let first = row.iter().position(|&v| v == max).unwrap();
                prop_assert_eq!(labels.labels()[p] as usize, first);
            }
        }

        #[test]
        fn presence_is_histogram_support(labels in prop::collection::vec(0u16..6, 1..100)) {
            let n = labels.len();
            let map = LabelMap::new(n, 1, 6, labels.clone()).unwrap();
            let mut hist = [0usize; 6];
            for &l in &labels {
                hist[l as usize] += 1;
            }
            let support: BTreeSet<usize> = (0..6).filter(|&k| hist[k] > 0).collect();
            prop_assert_eq!(present_classes(&map), support);
        }
    }
}
