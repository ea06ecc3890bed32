//! Random-forest regression: bootstrap-sampled CART trees with
//! variance-reduction splits over random feature subsets.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const FOREST_MAGIC: &[u8; 4] = b"SPRF";
pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(feature_dim))`.
    pub features_per_split: Option<usize>,
    /// Set programmatically; not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            tree_count: 200,
            max_depth: 20,
            min_leaf: 5,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn resolve(&self, feature_dim: usize) -> Result<ResolvedParams> {
        if self.tree_count == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidArgument("tree_count and min_leaf must be positive".into()));
        }
        let fps = self
            .features_per_split
            .unwrap_or_else(|| (feature_dim as f64).sqrt().ceil() as usize);
        if fps == 0 || fps > feature_dim {
            return Err(Error::InvalidArgument(format!(
                "features_per_split {fps} not in [1, {feature_dim}]"
            )));
        }
        Ok(ResolvedParams {
            tree_count: self.tree_count,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            features_per_split: fps,
            seed: self.seed,
        })
    }
}

/// Parameters as stored in a trained forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf(f64),
    /// Left child follows immediately (preorder); `right` is its index.
    Split { feature: u32, threshold: f64, right: u32 },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        i + 1
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Leaf(_) => (0, i + 1),
                Node::Split { .. } => {
                    let (dl, next) = walk(nodes, i + 1);
                    let (dr, end) = walk(nodes, next);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    params: ResolvedParams,
    feature_dim: usize,
    trees: Vec<Tree>,
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

/// Highest sum-of-squares reduction over the candidate features, thresholds
/// at midpoints between consecutive distinct values, each side holding at
/// least `min_leaf` samples. Ties keep the lowest feature, then the lowest
/// threshold.
pub(crate) fn best_split(
    samples: &[TrainingSample],
    idx: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let m = idx.len();
    let total: f64 = idx.iter().map(|&i| samples[i].target).sum();
    let total_sq: f64 = idx.iter().map(|&i| samples[i].target.powi(2)).sum();
    let parent = sse(total, total_sq, m as f64);
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    for &f in candidates {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (samples[i].features[f], samples[i].target)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut ls, mut lsq) = (0.0, 0.0);
        for i in 1..m {
            let y = pairs[i - 1].1;
            ls += y;
            lsq += y * y;
            if i < min_leaf || m - i < min_leaf {
                continue;
            }
            let (a, b) = (pairs[i - 1].0, pairs[i].0);
            if a == b {
                continue;
            }
            let children = sse(ls, lsq, i as f64) + sse(total - ls, total_sq - lsq, (m - i) as f64);
            let gain = parent - children;
            if best.is_none_or(|s| gain > s.gain) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best.filter(|s| s.gain > 1e-12)
}

struct Grower<'a> {
    samples: &'a [TrainingSample],
    params: ResolvedParams,
    feature_dim: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) {
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.samples[i].target).sum::<f64>() / n;
        let pure = idx.iter().all(|&i| self.samples[i].target == self.samples[idx[0]].target);
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf || pure {
            self.nodes.push(Node::Leaf(mean));
            return;
        }
        let mut candidates = index::sample(&mut self.rng, self.feature_dim, self.params.features_per_split).into_vec();
        candidates.sort_unstable();
        let Some(split) = best_split(self.samples, &idx, &candidates, self.params.min_leaf) else {
            self.nodes.push(Node::Leaf(mean));
            return;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.samples[i].features[split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            right: 0,
        });
        self.grow(left, depth + 1);
        let right_at = self.nodes.len() as u32;
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(right, depth + 1);
    }
}

/// Trains a forest; each tree uses its own ChaCha stream of the master seed,
/// so results do not depend on thread scheduling.
pub fn train_forest(samples: &[TrainingSample], params: &ForestParams) -> Result<RegressionForest> {
    let first = samples.first().ok_or(Error::EmptyInput("training samples"))?;
    let feature_dim = first.features.len();
    if feature_dim == 0 {
        return Err(Error::InvalidArgument("training samples have no features".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != feature_dim {
            return Err(Error::DimensionMismatch {
                what: "training sample features",
                expected: feature_dim.to_string(),
                found: format!("{} (sample {i})", s.features.len()),
            });
        }
        if !(0.0..=1.0).contains(&s.target) || s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has a target outside [0,1] or non-finite features"
            )));
        }
    }
    if samples.iter().all(|s| s.target == first.target) {
        log::warn!(
            "all {} training targets equal {}; the forest will be constant",
            samples.len(),
            first.target
        );
    }
    let resolved = params.resolve(feature_dim)?;
    let n = samples.len();
    let trees = (0..resolved.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
            rng.set_stream(t as u64);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut grower = Grower {
                samples,
                params: resolved,
                feature_dim,
                rng,
                nodes: Vec::new(),
            };
            grower.grow(bootstrap, 0);
            Tree { nodes: grower.nodes }
        })
        .collect();
    Ok(RegressionForest {
        params: resolved,
        feature_dim,
        trees,
    })
}

impl RegressionForest {
    pub fn params(&self) -> &ResolvedParams {
        &self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn max_tree_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }

    /// Mean of the per-tree leaf values.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "feature vector",
                expected: self.feature_dim.to_string(),
                found: features.len().to_string(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(features)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Per-tree predictions, in tree order.
    pub fn tree_predictions(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.predict(features)?;
        Ok(self.trees.iter().map(|t| t.predict(features)).collect())
    }

    pub fn leaf_range(&self) -> (f64, f64) {
        self.trees
            .iter()
            .flat_map(|t| &t.nodes)
            .filter_map(|n| match n {
                Node::Leaf(v) => Some(*v),
                _ => None,
            })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Single-tree forest from an explicit leaf value; handy for tests and
    /// degenerate models.
    pub fn constant(feature_dim: usize, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidArgument(format!("leaf value {value} outside [0,1]")));
        }
        Ok(Self {
            params: ResolvedParams {
                tree_count: 1,
                max_depth: 0,
                min_leaf: 1,
                features_per_split: 1,
                seed: 0,
            },
            feature_dim,
            trees: vec![Tree {
                nodes: vec![Node::Leaf(value)],
            }],
        })
    }

    /// Forest of depth-one trees `x[feature] <= threshold ? left : right`.
    pub fn from_stumps(feature_dim: usize, stumps: &[(usize, f64, f64, f64)]) -> Result<Self> {
        if stumps.is_empty() {
            return Err(Error::EmptyInput("stumps"));
        }
        let trees = stumps
            .iter()
            .map(|&(feature, threshold, left, right)| {
                if feature >= feature_dim || ![left, right].iter().all(|v| (0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidArgument("invalid stump".into()));
                }
                Ok(Tree {
                    nodes: vec![
                        Node::Split {
                            feature: feature as u32,
                            threshold,
                            right: 2,
                        },
                        Node::Leaf(left),
                        Node::Leaf(right),
                    ],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: ResolvedParams {
                tree_count: trees.len(),
                max_depth: 1,
                min_leaf: 1,
                features_per_split: 1,
                seed: 0,
            },
            feature_dim,
            trees,
        })
    }

    /// Little-endian `SPRF` stream: magic, version, params, then each tree's
    /// nodes in preorder (tag 0: leaf f64; tag 1: feature u32, threshold f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FOREST_MAGIC);
        out.extend_from_slice(&FOREST_VERSION.to_le_bytes());
        let p = &self.params;
        for v in [p.tree_count, p.max_depth, p.min_leaf, p.features_per_split] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&p.seed.to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        for tree in &self.trees {
            for node in &tree.nodes {
                match *node {
                    Node::Leaf(v) => {
                        out.push(0);
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                    Node::Split { feature, threshold, .. } => {
                        out.push(1);
                        out.extend_from_slice(&feature.to_le_bytes());
                        out.extend_from_slice(&threshold.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FOREST_MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != FOREST_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let tree_count = r.u32()? as usize;
        let max_depth = r.u32()? as usize;
        let min_leaf = r.u32()? as usize;
        let features_per_split = r.u32()? as usize;
        let seed = r.u64()?;
        let feature_dim = r.u32()? as usize;
        if tree_count == 0 {
            return Err("forest without trees".into());
        }
        let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
        for t in 0..tree_count {
            let mut nodes = Vec::new();
            read_subtree(&mut r, &mut nodes, 0, max_depth, feature_dim).map_err(|e| format!("tree {t}: {e}"))?;
            trees.push(Tree { nodes });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            params: ResolvedParams {
                tree_count,
                max_depth,
                min_leaf,
                features_per_split,
                seed,
            },
            feature_dim,
            trees,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() >= 4 && &bytes[..4] != FOREST_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "SPRF",
            });
        }
        if bytes.len() >= 8 {
            let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
            if version != FOREST_VERSION {
                return Err(Error::Version {
                    path: path.to_path_buf(),
                    found: version,
                    expected: FOREST_VERSION,
                });
            }
        }
        Self::from_bytes(&bytes).map_err(|reason| Error::corrupt(path, reason))
    }
}

fn read_subtree(
    r: &mut Reader,
    nodes: &mut Vec<Node>,
    depth: usize,
    max_depth: usize,
    feature_dim: usize,
) -> std::result::Result<(), String> {
    match r.take(1)?[0] {
        0 => {
            let v = r.f64()?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("leaf value {v} outside [0,1]"));
            }
            nodes.push(Node::Leaf(v));
        }
        1 => {
            if depth >= max_depth {
                return Err("tree deeper than max_depth".into());
            }
            let feature = r.u32()?;
            let threshold = r.f64()?;
            if feature as usize >= feature_dim || threshold.is_nan() {
                return Err(format!("invalid split on feature {feature}"));
            }
            let at = nodes.len();
            nodes.push(Node::Split {
                feature,
                threshold,
                right: 0,
            });
            read_subtree(r, nodes, depth + 1, max_depth, feature_dim)?;
            let right_at = nodes.len() as u32;
            if let Node::Split { right, .. } = &mut nodes[at] {
                *right = right_at;
            }
            read_subtree(r, nodes, depth + 1, max_depth, feature_dim)?;
        }
        tag => return Err(format!("unknown node tag {tag}")),
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err("unexpected end of file".into());
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
