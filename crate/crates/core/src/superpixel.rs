//! SLIC oversegmentation with 4-connectivity enforcement.

use std::collections::VecDeque;

use crate::color::LabConverter;
use crate::error::{Error, Result};
use crate::io::ImageBuffer;

pub const DEFAULT_TARGET_REGIONS: usize = 200;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub target_regions: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            target_regions: DEFAULT_TARGET_REGIONS,
            compactness: DEFAULT_COMPACTNESS,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

/// A region label map: every pixel carries a region index in `[0, n_regions)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    regions: Vec<Vec<u32>>,
}

impl Segmentation {
    /// Wraps an existing label map. Labels must cover `[0, n)` without gaps.
    /// Connectivity is not checked here; [`slic_segment`] guarantees it.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "label map of {}x{} needs {} labels, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        let n = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut regions = vec![Vec::new(); n];
        for (i, &l) in labels.iter().enumerate() {
            regions[l as usize].push(i as u32);
        }
        if let Some(q) = regions.iter().position(|r| r.is_empty()) {
            return Err(Error::InvalidArgument(format!("region {q} is empty")));
        }
        Ok(Self {
            width,
            height,
            labels,
            regions,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Linear pixel indices of region `q`, in raster order.
    pub fn region_pixels(&self, q: usize) -> &[u32] {
        &self.regions[q]
    }

    pub fn region_size(&self, q: usize) -> usize {
        self.regions[q].len()
    }

    pub(crate) fn check_region(&self, q: usize) -> Result<()> {
        if q >= self.regions.len() {
            return Err(Error::InvalidArgument(format!(
                "region {q} out of range (n_r = {})",
                self.regions.len()
            )));
        }
        Ok(())
    }

    /// Flood fill under 4-connectivity from the first pixel of `q` reaches
    /// every pixel of `q`.
    pub fn is_region_connected(&self, q: usize) -> bool {
        let pixels = &self.regions[q];
        let mut seen = vec![false; self.labels.len()];
        let mut queue = VecDeque::from([pixels[0] as usize]);
        seen[pixels[0] as usize] = true;
        let mut reached = 0;
        while let Some(p) = queue.pop_front() {
            reached += 1;
            for n in neighbors4(p, self.width, self.height).into_iter().flatten() {
                if !seen[n] && self.labels[n] as usize == q {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        reached == pixels.len()
    }
}

#[inline]
pub(crate) fn neighbors4(p: usize, width: usize, height: usize) -> [Option<usize>; 4] {
    let (x, y) = (p % width, p / width);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < width).then(|| p + 1),
        (y > 0).then(|| p - width),
        (y + 1 < height).then(|| p + width),
    ]
}

/// Symmetric, irreflexive region adjacency under 4-connectivity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionAdjacency {
    neighbors: Vec<Vec<usize>>,
}

impl RegionAdjacency {
    /// Sorted neighbor list of region `q`.
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.neighbors[q]
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Each adjacent pair once, as `(low, high)`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }
}

pub fn region_adjacency(seg: &Segmentation) -> RegionAdjacency {
    let (w, h) = (seg.width, seg.height);
    let mut neighbors = vec![Vec::new(); seg.n_regions()];
    for y in 0..h {
        for x in 0..w {
            let a = seg.labels[y * w + x] as usize;
            if x + 1 < w {
                let b = seg.labels[y * w + x + 1] as usize;
                if a != b {
                    neighbors[a].push(b);
                    neighbors[b].push(a);
                }
            }
            if y + 1 < h {
                let b = seg.labels[(y + 1) * w + x] as usize;
                if a != b {
                    neighbors[a].push(b);
                    neighbors[b].push(a);
                }
            }
        }
    }
    for ns in &mut neighbors {
        ns.sort_unstable();
        ns.dedup();
    }
    RegionAdjacency { neighbors }
}

/// SLIC with the default iteration count.
pub fn slic_segment(image: &ImageBuffer, target_regions: usize, compactness: f64) -> Result<Segmentation> {
    slic_segment_with(
        image,
        &SlicParams {
            target_regions,
            compactness,
            iterations: DEFAULT_ITERATIONS,
        },
    )
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

pub fn slic_segment_with(image: &ImageBuffer, params: &SlicParams) -> Result<Segmentation> {
    let (w, h) = (image.width(), image.height());
    let n = w * h;
    let k = params.target_regions;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "target_regions must be in [1, {n}], got {k}"
        )));
    }
    if !(params.compactness >= 0.0) {
        return Err(Error::InvalidArgument("compactness must be non-negative".into()));
    }

    let conv = LabConverter::new();
    let lab: Vec<[f64; 3]> = (0..n).map(|i| conv.convert(image.pixel_at(i))).collect();

    let step = (n as f64 / k as f64).sqrt();
    let nx = ((k as f64 * w as f64 / h as f64).sqrt().round() as usize).clamp(1, w.min(k));
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, h);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let mut cx = (((i as f64 + 0.5) * sx) as usize).min(w - 1);
            let mut cy = (((j as f64 + 0.5) * sy) as usize).min(h - 1);
            if sx >= 3.0 && sy >= 3.0 {
                (cx, cy) = lowest_gradient(&lab, w, h, cx, cy);
            }
            centers.push(Center {
                lab: lab[cy * w + cx],
                x: cx as f64,
                y: cy as f64,
            });
        }
    }

    let mut labels: Vec<u32> = (0..n)
        .map(|p| {
            let i = (((p % w) as f64 / sx) as usize).min(nx - 1);
            let j = (((p / w) as f64 / sy) as usize).min(ny - 1);
            (j * nx + i) as u32
        })
        .collect();

    let radius = sx.max(sy).ceil() as isize;
    let spatial_weight = params.compactness / step;
    let mut dist = vec![f64::INFINITY; n];
    for _ in 0..params.iterations {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);
            let x0 = (cx - radius).max(0) as usize;
            let x1 = ((cx + radius) as usize).min(w - 1);
            let y0 = (cy - radius).max(0) as usize;
            let y1 = ((cy + radius) as usize).min(h - 1);
            for y in y0..=y1 {
                let dy = y as f64 - c.y;
                for x in x0..=x1 {
                    let p = y * w + x;
                    let l = &lab[p];
                    let d_lab = ((l[0] - c.lab[0]).powi(2) + (l[1] - c.lab[1]).powi(2) + (l[2] - c.lab[2]).powi(2)).sqrt();
                    let dx = x as f64 - c.x;
                    let d = d_lab + spatial_weight * (dx * dx + dy * dy).sqrt();
                    if d < dist[p] {
                        dist[p] = d;
                        labels[p] = ci as u32;
                    }
                }
            }
        }

        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            let a = &mut acc[l as usize];
            a[0] += lab[p][0];
            a[1] += lab[p][1];
            a[2] += lab[p][2];
            a[3] += (p % w) as f64;
            a[4] += (p / w) as f64;
            a[5] += 1.0;
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                *c = Center {
                    lab: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
                    x: a[3] / a[5],
                    y: a[4] / a[5],
                };
            }
        }
    }

    let min_size = ((step * step) / 4.0).floor().max(1.0) as usize;
    let labels = enforce_connectivity(&labels, w, h, min_size);
    Segmentation::from_labels(w, h, labels)
}

/// Moves a seed to the lowest Lab gradient position in its 3x3 neighborhood;
/// the seed itself wins ties.
fn lowest_gradient(lab: &[[f64; 3]], w: usize, h: usize, cx: usize, cy: usize) -> (usize, usize) {
    let grad = |x: usize, y: usize| -> f64 {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return f64::INFINITY;
        }
        let (l, r) = (&lab[y * w + x - 1], &lab[y * w + x + 1]);
        let (u, d) = (&lab[(y - 1) * w + x], &lab[(y + 1) * w + x]);
        (0..3).map(|c| (r[c] - l[c]).powi(2) + (d[c] - u[c]).powi(2)).sum()
    };
    let mut best = (cx, cy);
    let mut best_g = grad(cx, cy);
    for y in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
        for x in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
            let g = grad(x, y);
            if g < best_g {
                best_g = g;
                best = (x, y);
            }
        }
    }
    best
}

/// Splits every label into its 4-connected components, merges orphan
/// components (all but the largest of each label) and components smaller than
/// `min_size` into their largest adjacent region, then relabels in raster
/// order of first appearance.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: usize) -> Vec<u32> {
    let n = labels.len();
    const UNSET: u32 = u32::MAX;
    let mut comp = vec![UNSET; n];
    let mut comp_pixels: Vec<Vec<u32>> = Vec::new();
    let mut comp_label: Vec<u32> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != UNSET {
            continue;
        }
        let id = comp_pixels.len() as u32;
        let label = labels[start];
        let mut pixels = Vec::new();
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            pixels.push(p as u32);
            for q in neighbors4(p, w, h).into_iter().flatten() {
                if comp[q] == UNSET && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_pixels.push(pixels);
        comp_label.push(label);
    }

    let n_comp = comp_pixels.len();
    let n_labels = comp_label.iter().max().map_or(0, |&m| m as usize + 1);
    let mut largest: Vec<Option<usize>> = vec![None; n_labels];
    for c in 0..n_comp {
        let slot = &mut largest[comp_label[c] as usize];
        match *slot {
            Some(best) if comp_pixels[best].len() >= comp_pixels[c].len() => {}
            _ => *slot = Some(c),
        }
    }
    let is_orphan = |c: usize| largest[comp_label[c] as usize] != Some(c);

    let mut parent: Vec<usize> = (0..n_comp).collect();
    let mut size: Vec<usize> = comp_pixels.iter().map(Vec::len).collect();
    let mut members: Vec<Vec<usize>> = (0..n_comp).map(|c| vec![c]).collect();
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }

    let mut candidates: Vec<usize> = (0..n_comp)
        .filter(|&c| is_orphan(c) || comp_pixels[c].len() < min_size)
        .collect();
    candidates.sort_by_key(|&c| (comp_pixels[c].len(), c));

    for c in candidates {
        let root = find(&mut parent, c);
        if root != c || (!is_orphan(c) && size[root] >= min_size) {
            continue;
        }
        let mut best: Option<(usize, usize)> = None;
        for &m in &members[root] {
            for &p in &comp_pixels[m] {
                for q in neighbors4(p as usize, w, h).into_iter().flatten() {
                    let r = find(&mut parent, comp[q] as usize);
                    if r == root {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bs, br)) => size[r] > bs || (size[r] == bs && r < br),
                    };
                    if better {
                        best = Some((size[r], r));
                    }
                }
            }
        }
        if let Some((_, target)) = best {
            parent[root] = target;
            size[target] += size[root];
            let moved = std::mem::take(&mut members[root]);
            members[target].extend(moved);
        }
    }

    let mut region_of_root = vec![UNSET; n_comp];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for p in 0..n {
        let r = find(&mut parent, comp[p] as usize);
        if region_of_root[r] == UNSET {
            region_of_root[r] = next;
            next += 1;
        }
        out[p] = region_of_root[r];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn halves(w: usize, h: usize) -> Segmentation {
        let labels = (0..w * h).map(|p| u32::from(p % w >= w / 2)).collect();
        Segmentation::from_labels(w, h, labels).unwrap()
    }

    fn quadrants(w: usize, h: usize) -> Segmentation {
        let labels = (0..w * h)
            .map(|p| {
                let (x, y) = (p % w, p / w);
                (u32::from(y >= h / 2) << 1) | u32::from(x >= w / 2)
            })
            .collect();
        Segmentation::from_labels(w, h, labels).unwrap()
    }

    #[test]
    fn single_region_target() {
        let img = ImageBuffer::filled(17, 9, [30, 60, 90]).unwrap();
        let seg = slic_segment(&img, 1, 10.0).unwrap();
        assert_eq!(seg.n_regions(), 1);
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn out_of_range_target() {
        let img = ImageBuffer::filled(4, 4, [0, 0, 0]).unwrap();
        assert!(slic_segment(&img, 0, 10.0).is_err());
        assert!(slic_segment(&img, 17, 10.0).is_err());
        assert_eq!(slic_segment(&img, 16, 10.0).unwrap().n_regions(), 16);
    }

    #[test]
    fn uniform_image_splits_into_quadrants() {
        let img = ImageBuffer::filled(120, 120, [128, 128, 128]).unwrap();
        let seg = slic_segment(&img, 4, 10.0).unwrap();
        assert_eq!(seg.n_regions(), 4);
        let mut centroids = Vec::new();
        for q in 0..4 {
            let px = seg.region_pixels(q);
            let area = px.len() as f64;
            assert!((area - 3600.0).abs() <= 0.25 * 3600.0, "area {area}");
            let cx = px.iter().map(|&p| (p % 120) as f64 + 0.5).sum::<f64>() / area;
            let cy = px.iter().map(|&p| (p / 120) as f64 + 0.5).sum::<f64>() / area;
            centroids.push((cx, cy));
        }
        for (ex, ey) in [(30.0, 30.0), (90.0, 30.0), (30.0, 90.0), (90.0, 90.0)] {
            assert!(
                centroids.iter().any(|&(cx, cy)| (cx - ex).abs() < 6.0 && (cy - ey).abs() < 6.0),
                "no centroid near ({ex},{ey}): {centroids:?}"
            );
        }
    }

    #[test]
    fn adjacency_examples() {
        let one = Segmentation::from_labels(3, 3, vec![0; 9]).unwrap();
        assert!(region_adjacency(&one).pairs().is_empty());
        assert_eq!(region_adjacency(&halves(4, 4)).pairs(), vec![(0, 1)]);
        let adj = region_adjacency(&quadrants(6, 6));
        assert_eq!(adj.pairs(), vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert!(!adj.are_adjacent(0, 3) && !adj.are_adjacent(1, 2));
    }

    #[test]
    fn from_labels_rejects_gaps() {
        assert!(Segmentation::from_labels(2, 1, vec![0, 2]).is_err());
        assert!(Segmentation::from_labels(2, 1, vec![0]).is_err());
    }

    #[test]
    fn orphan_components_are_merged() {
        // Label 0 has a big component and a 1-pixel orphan inside label 1.
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 1, 1,
            0, 0, 1, 0,
            0, 0, 1, 1,
        ];
        let out = enforce_connectivity(&labels, 4, 3, 1);
        assert_eq!(out, vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1]);
    }

    fn smooth_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..12)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(5.0..40.0),
                    [rng.random(), rng.random(), rng.random()],
                )
            })
            .collect();
        let mut pixels = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let mut c = [0.3, 0.3, 0.3];
                for (bx, by, r, col) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    let wgt = (-d2 / (2.0 * r * r)).exp();
                    for k in 0..3 {
                        c[k] = c[k] * (1.0 - wgt) + col[k] * wgt;
                    }
                }
                let noise: f64 = rng.random_range(-0.03..0.03);
                pixels.extend(c.map(|v| ((v + noise).clamp(0.0, 1.0) * 255.0) as u8));
            }
        }
        ImageBuffer::new(w, h, pixels).unwrap()
    }

    #[test]
    fn natural_like_image_meets_invariants() {
        let img = smooth_image(160, 120, 3);
        let seg = slic_segment(&img, 80, 10.0).unwrap();
        assert!((40..=120).contains(&seg.n_regions()), "{}", seg.n_regions());
        for q in 0..seg.n_regions() {
            assert!(seg.is_region_connected(q));
        }
        assert_eq!(seg, slic_segment(&img, 80, 10.0).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn slic_cover_and_connectivity(
            w in 4usize..40, h in 4usize..40, k in 1usize..30,
            bytes in prop::collection::vec(any::<u8>(), 40 * 40 * 3),
        ) {
            let img = ImageBuffer::new(w, h, bytes[..w * h * 3].to_vec()).unwrap();
            let seg = slic_segment(&img, k, 10.0).unwrap();
            let n = seg.n_regions();
            prop_assert!(seg.labels().iter().all(|&l| (l as usize) < n));
            for q in 0..n {
                prop_assert!(seg.region_size(q) > 0);
                prop_assert!(seg.is_region_connected(q));
            }
        }

        #[test]
        fn adjacency_matches_pixel_pair_scan(
            labels in prop::collection::vec(0u32..5, 36)
        ) {
            let mut labels = labels;
            // make labels contiguous
            let mut map = std::collections::BTreeMap::new();
            for l in labels.iter_mut() {
                let next = map.len() as u32;
                *l = *map.entry(*l).or_insert(next);
            }
            let seg = Segmentation::from_labels(6, 6, labels.clone()).unwrap();
            let adj = region_adjacency(&seg);
            let n = seg.n_regions();
            for a in 0..n {
                prop_assert!(!adj.are_adjacent(a, a));
                for b in 0..n {
                    let brute = (0..36).any(|p| {
                        let (x, y) = (p % 6, p / 6);
                        let right = x + 1 < 6 && labels[p] as usize == a && labels[p + 1] as usize == b;
                        let left = x + 1 < 6 && labels[p] as usize == b && labels[p + 1] as usize == a;
                        let down = y + 1 < 6 && labels[p] as usize == a && labels[p + 6] as usize == b;
                        let up = y + 1 < 6 && labels[p] as usize == b && labels[p + 6] as usize == a;
                        a != b && (right || left || down || up)
                    });
                    prop_assert_eq!(adj.are_adjacent(a, b), brute);
                }
            }
        }
    }
}
