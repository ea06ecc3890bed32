//! Saliency maps and the adaptive explicit/implicit blend.

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// Which stage produced a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapRole {
    Explicit,
    Implicit,
    Fused,
}

/// A real-valued `h x w` map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    role: MapRole,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, role: MapRole) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "saliency map of {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("saliency map holds non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            values,
            role,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> MapRole {
        self.role
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// Min-max normalization to [0,1]; a map without contrast becomes all zeros.
    pub fn normalized(mut self) -> Self {
        min_max_in_place(&mut self.values);
        self
    }

    fn check_same_size(&self, other: &SaliencyMap) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::dims(
                "saliency maps",
                (self.height, self.width),
                (other.height, other.width),
            ));
        }
        Ok(())
    }
}

pub(crate) fn min_max_in_place(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub alpha: f64,
    pub gamma: f64,
}

/// `alpha` is the mean of the implicit map, `gamma = 1 - alpha`.
pub fn compute_weights(implicit: &SaliencyMap) -> FusionWeights {
    let alpha = implicit.mean().clamp(0.0, 1.0);
    FusionWeights {
        alpha,
        gamma: 1.0 - alpha,
    }
}

/// The per-pixel blend `alpha * explicit + gamma * implicit`, before the
/// final rescale.
pub fn blend(explicit: &SaliencyMap, implicit: &SaliencyMap) -> Result<(SaliencyMap, FusionWeights)> {
    explicit.check_same_size(implicit)?;
    let w = compute_weights(implicit);
    let values = explicit
        .values
        .iter()
        .zip(&implicit.values)
        .map(|(&e, &i)| w.alpha * e + w.gamma * i)
        .collect();
    let map = SaliencyMap::new(explicit.width, explicit.height, values, MapRole::Fused)?;
    Ok((map, w))
}

/// Blends both maps and applies [`final_rescale`].
pub fn fuse(explicit: &SaliencyMap, implicit: &SaliencyMap) -> Result<SaliencyMap> {
    let (blended, _) = blend(explicit, implicit)?;
    Ok(final_rescale(&blended))
}

/// Fraction of pixels that must reach [`SALIENT_LEVEL`] after rescaling.
pub const MIN_SALIENT_FRACTION: f64 = 0.1;
/// Value at which a pixel counts as salient for the coverage rule.
pub const SALIENT_LEVEL: f64 = 0.5;

/// Min-max normalizes, then, if fewer than 10% of pixels reach 0.5, applies
/// `v -> v^g` with `g` chosen so the 90th-percentile value lands on 0.5.
pub fn final_rescale(map: &SaliencyMap) -> SaliencyMap {
    let mut values = map.values.clone();
    min_max_in_place(&mut values);
    let n = values.len();
    let salient = values.iter().filter(|&&v| v >= SALIENT_LEVEL).count();
    if (salient as f64) < MIN_SALIENT_FRACTION * n as f64 {
        let p90 = percentile_nearest_rank(&values, 0.9);
        if p90 > 0.0 {
            let g = SALIENT_LEVEL.ln() / p90.ln();
            for v in values.iter_mut() {
                *v = v.powf(g).clamp(0.0, 1.0);
            }
        }
    }
    SaliencyMap {
        width: map.width,
        height: map.height,
        values,
        role: map.role,
    }
}

/// Nearest-rank percentile: the `ceil(q n)`-th smallest value.
pub(crate) fn percentile_nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}
