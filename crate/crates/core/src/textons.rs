//! Texton features: an 18-filter bank on mean-subtracted grayscale, a
//! 15-word k-means dictionary over filter responses, and per-region texton
//! histograms.
//!
//! The bank holds, for sigma in {1, 2} and four orientations, an even
//! (second-derivative) and odd (first-derivative) elongated Gaussian filter,
//! plus an isotropic Gaussian and a Laplacian of Gaussian. Every kernel is
//! scaled to unit absolute sum, so no response exceeds the largest absolute
//! input intensity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{self, ImageBuffer};
use crate::superpixel::Segmentation;

pub const N_FILTERS: usize = 18;
pub const N_TEXTONS: usize = 15;
pub const MAX_SAMPLES: usize = 100_000;
pub const MAX_KMEANS_ITERATIONS: usize = 50;

pub type Response = [f32; N_FILTERS];

struct Kernel {
    radius: usize,
    weights: Vec<f32>,
}

impl Kernel {
    fn from_fn(radius: usize, zero_mean: bool, f: impl Fn(f64, f64) -> f64) -> Self {
        let side = 2 * radius + 1;
        let mut w: Vec<f64> = (0..side * side)
            .map(|i| f((i % side) as f64 - radius as f64, (i / side) as f64 - radius as f64))
            .collect();
        if zero_mean {
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            w.iter_mut().for_each(|v| *v -= mean);
        }
        let abs_sum: f64 = w.iter().map(|v| v.abs()).sum();
        Self {
            radius,
            weights: w.iter().map(|v| (v / abs_sum) as f32).collect(),
        }
    }
}

/// The fixed 18-filter bank.
pub struct FilterBank {
    kernels: Vec<Kernel>,
    max_radius: usize,
}

impl Default for FilterBank {
    fn default() -> Self {
        Self::new()
    }
}

impl FilterBank {
    pub fn new() -> Self {
        let mut kernels = Vec::with_capacity(N_FILTERS);
        for sigma in [1.0f64, 2.0] {
            let (su, sv) = (sigma, 2.0 * sigma);
            let radius = (2.5 * sv).ceil() as usize;
            for o in 0..4 {
                let theta = o as f64 * std::f64::consts::FRAC_PI_4;
                let (c, s) = (theta.cos(), theta.sin());
                let envelope = move |x: f64, y: f64| {
                    let u = x * c + y * s;
                    let v = -x * s + y * c;
                    (u, (-(u * u) / (2.0 * su * su) - (v * v) / (2.0 * sv * sv)).exp())
                };
                kernels.push(Kernel::from_fn(radius, true, move |x, y| {
                    let (u, g) = envelope(x, y);
                    (u * u / su.powi(4) - 1.0 / (su * su)) * g
                }));
                kernels.push(Kernel::from_fn(radius, true, move |x, y| {
                    let (u, g) = envelope(x, y);
                    -u / (su * su) * g
                }));
            }
        }
        let sigma = 2.0f64;
        kernels.push(Kernel::from_fn((2.5 * sigma).ceil() as usize, false, |x, y| {
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        }));
        kernels.push(Kernel::from_fn((3.0 * sigma).ceil() as usize, true, |x, y| {
            let r2 = x * x + y * y;
            (r2 / sigma.powi(4) - 2.0 / (sigma * sigma)) * (-r2 / (2.0 * sigma * sigma)).exp()
        }));
        let max_radius = kernels.iter().map(|k| k.radius).max().unwrap_or(0);
        Self { kernels, max_radius }
    }

    /// Per-pixel responses on the image's mean-subtracted luma, with
    /// replicated borders.
    pub fn responses(&self, image: &ImageBuffer) -> Vec<Response> {
        let (w, h) = (image.width(), image.height());
        let gray = image.grayscale();
        let mean = gray.iter().map(|&v| v as f64).sum::<f64>() / gray.len() as f64;
        let pad = self.max_radius;
        let (pw, ph) = (w + 2 * pad, h + 2 * pad);
        let mut padded = vec![0f32; pw * ph];
        for py in 0..ph {
            let y = py.saturating_sub(pad).min(h - 1);
            for px in 0..pw {
                let x = px.saturating_sub(pad).min(w - 1);
                padded[py * pw + px] = gray[y * w + x] - mean as f32;
            }
        }

        let mut out = vec![[0f32; N_FILTERS]; w * h];
        let planes: Vec<Vec<f32>> = self
            .kernels
            .par_iter()
            .map(|k| {
                let side = 2 * k.radius + 1;
                let off = pad - k.radius;
                let mut plane = vec![0f32; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0f32;
                        for ky in 0..side {
                            let row = &padded[(y + off + ky) * pw + x + off..][..side];
                            let kw = &k.weights[ky * side..][..side];
                            acc += row.iter().zip(kw).map(|(a, b)| a * b).sum::<f32>();
                        }
                        plane[y * w + x] = acc;
                    }
                }
                plane
            })
            .collect();
        for (f, plane) in planes.iter().enumerate() {
            for (dst, &v) in out.iter_mut().zip(plane) {
                dst[f] = v;
            }
        }
        out
    }
}

/// 15 cluster centers in filter-response space.
#[derive(Debug, Clone, PartialEq)]
pub struct TextonDictionary {
    centers: Vec<[f64; N_FILTERS]>,
    seed: Option<u64>,
}

impl TextonDictionary {
    pub fn from_centers(centers: Vec<[f64; N_FILTERS]>) -> Result<Self> {
        if centers.len() != N_TEXTONS {
            return Err(Error::InvalidArgument(format!(
                "texton dictionary needs {N_TEXTONS} centers, got {}",
                centers.len()
            )));
        }
        if centers.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite texton center".into()));
        }
        Ok(Self { centers, seed: None })
    }

    pub fn centers(&self) -> &[[f64; N_FILTERS]] {
        &self.centers
    }

    /// Seed the dictionary was built with; unknown for loaded files.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Nearest center; lowest index wins ties.
    pub fn nearest(&self, r: &Response) -> usize {
        nearest(&self.centers, r)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("TXTN 1 {N_TEXTONS} {N_FILTERS}\n");
        for c in &self.centers {
            let cells: Vec<String> = c.iter().map(|v| format!("{v:.16e}")).collect();
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
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        if header.split_whitespace().collect::<Vec<_>>() != ["TXTN", "1", "15", "18"] {
            return Err(Error::corrupt(path, format!("bad header {header:?}")));
        }
        let mut centers = Vec::with_capacity(N_TEXTONS);
        for (i, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::corrupt(path, format!("row {i}: {e}")))?;
            let row: [f64; N_FILTERS] = vals
                .try_into()
                .map_err(|_| Error::corrupt(path, format!("row {i} does not hold {N_FILTERS} values")))?;
            centers.push(row);
        }
        Self::from_centers(centers).map_err(|e| Error::corrupt(path, e.to_string()))
    }
}

fn sq_dist(c: &[f64; N_FILTERS], r: &Response) -> f64 {
    c.iter().zip(r).map(|(a, &b)| (a - b as f64).powi(2)).sum()
}

fn nearest(centers: &[[f64; N_FILTERS]], r: &Response) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, r);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Draws this image's share of the dictionary's response samples.
pub fn sample_responses(
    bank: &FilterBank,
    image: &ImageBuffer,
    image_index: usize,
    n_images: usize,
    seed: u64,
) -> Vec<Response> {
    let responses = bank.responses(image);
    let quota = MAX_SAMPLES.div_ceil(n_images.max(1));
    if responses.len() <= quota {
        return responses;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(image_index as u64 + 1);
    let mut picks = index::sample(&mut rng, responses.len(), quota).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| responses[i]).collect()
}

/// k-means++ seeded from `seed`, then at most 50 Lloyd iterations.
pub fn kmeans_dictionary(samples: &[Response], seed: u64) -> Result<TextonDictionary> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("texton samples"));
    }
    let samples = if samples.len() > MAX_SAMPLES {
        &samples[..MAX_SAMPLES]
    } else {
        samples
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let to_f64 = |r: &Response| r.map(|v| v as f64);

    let mut centers = vec![to_f64(&samples[rng.random_range(0..samples.len())])];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(&centers[0], s)).collect();
    while centers.len() < N_TEXTONS {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = samples.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..samples.len())
        };
        let c = to_f64(&samples[pick]);
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(&c, s));
        }
        centers.push(c);
    }

    let mut assignment: Vec<usize> = vec![usize::MAX; samples.len()];
    for _ in 0..MAX_KMEANS_ITERATIONS {
        let next: Vec<usize> = samples.par_iter().map(|s| nearest(&centers, s)).collect();
        let changed = next != assignment;
        assignment = next;
        let mut sums = vec![[0f64; N_FILTERS]; N_TEXTONS];
        let mut counts = vec![0usize; N_TEXTONS];
        for (s, &a) in samples.iter().zip(&assignment) {
            counts[a] += 1;
            for (acc, &v) in sums[a].iter_mut().zip(s) {
                *acc += v as f64;
            }
        }
        for ((c, sum), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                *c = sum.map(|v| v / n as f64);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(TextonDictionary {
        centers,
        seed: Some(seed),
    })
}

/// Builds a dictionary from up to 100k responses subsampled across images.
pub fn build_texton_dictionary(train_images: &[ImageBuffer], seed: u64) -> Result<TextonDictionary> {
    if train_images.is_empty() {
        return Err(Error::EmptyInput("texton training images"));
    }
    let bank = FilterBank::new();
    let n = train_images.len();
    let samples: Vec<Response> = train_images
        .par_iter()
        .enumerate()
        .map(|(i, img)| sample_responses(&bank, img, i, n, seed))
        .collect::<Vec<_>>()
        .concat();
    kmeans_dictionary(&samples, seed)
}

/// Nearest-texton index for every pixel of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextonMap {
    width: usize,
    height: usize,
    assignment: Vec<u8>,
}

impl TextonMap {
    pub fn compute(image: &ImageBuffer, dict: &TextonDictionary) -> Self {
        Self::compute_with(&FilterBank::new(), image, dict)
    }

    pub fn compute_with(bank: &FilterBank, image: &ImageBuffer, dict: &TextonDictionary) -> Self {
        let assignment = bank
            .responses(image)
            .par_iter()
            .map(|r| dict.nearest(r) as u8)
            .collect();
        Self {
            width: image.width(),
            height: image.height(),
            assignment,
        }
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    /// Normalized texton histogram of region `q`.
    pub fn histogram(&self, seg: &Segmentation, q: usize) -> Result<[f64; N_TEXTONS]> {
        seg.check_region(q)?;
        if (seg.width(), seg.height()) != (self.width, self.height) {
            return Err(Error::dims(
                "segmentation",
                (self.height, self.width),
                (seg.height(), seg.width()),
            ));
        }
        let mut hist = [0f64; N_TEXTONS];
        let pixels = seg.region_pixels(q);
        for &p in pixels {
            hist[self.assignment[p as usize] as usize] += 1.0;
        }
        let n = pixels.len() as f64;
        hist.iter_mut().for_each(|v| *v /= n);
        Ok(hist)
    }
}

/// Texton histogram of one region, filtering the whole image.
pub fn texton_histogram(
    image: &ImageBuffer,
    seg: &Segmentation,
    q: usize,
    dict: &TextonDictionary,
) -> Result<[f64; N_TEXTONS]> {
    TextonMap::compute(image, dict).histogram(seg, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes(w: usize, h: usize) -> ImageBuffer {
        let mut img = ImageBuffer::filled(w, h, [0, 0, 0]).unwrap();
        for y in 0..h {
            for x in 0..w {
                if (x / 3) % 2 == 0 {
                    img.set_pixel(x, y, [255, 255, 255]);
                }
            }
        }
        img
    }

    fn checker(w: usize, h: usize) -> ImageBuffer {
        let mut img = ImageBuffer::filled(w, h, [0, 0, 0]).unwrap();
        for y in 0..h {
            for x in 0..w {
                if (x / 4 + y / 4) % 2 == 0 {
                    img.set_pixel(x, y, [255, 255, 255]);
                }
            }
        }
        img
    }

    fn whole(w: usize, h: usize) -> Segmentation {
        Segmentation::from_labels(w, h, vec![0; w * h]).unwrap()
    }

    #[test]
    fn bank_shape_and_normalization() {
        let bank = FilterBank::new();
        assert_eq!(bank.kernels.len(), N_FILTERS);
        for k in &bank.kernels {
            let s: f32 = k.weights.iter().map(|v| v.abs()).sum();
            assert!((s - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_images_cluster_at_origin() {
        let imgs = vec![ImageBuffer::filled(20, 20, [90, 90, 90]).unwrap(); 2];
        let dict = build_texton_dictionary(&imgs, 1).unwrap();
        assert_eq!(dict.centers().len(), N_TEXTONS);
        assert!(dict.centers().iter().flatten().all(|v| v.abs() < 1e-6));
        let h = texton_histogram(&imgs[0], &whole(20, 20), 0, &dict).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_when_all_pixels_hit_one_center() {
        let mut centers = vec![[5.0; N_FILTERS]; N_TEXTONS];
        centers[3] = [0.0; N_FILTERS];
        let dict = TextonDictionary::from_centers(centers).unwrap();
        let img = ImageBuffer::filled(8, 8, [10, 200, 30]).unwrap();
        let h = texton_histogram(&img, &whole(8, 8), 0, &dict).unwrap();
        let mut expected = [0.0; N_TEXTONS];
        expected[3] = 1.0;
        assert_eq!(h, expected);
    }

    #[test]
    fn two_textures_are_separated() {
        let imgs = vec![stripes(48, 48), checker(48, 48)];
        let dict = build_texton_dictionary(&imgs, 7).unwrap();
        let a = texton_histogram(&imgs[0], &whole(48, 48), 0, &dict).unwrap();
        let b = texton_histogram(&imgs[1], &whole(48, 48), 0, &dict).unwrap();
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 > 0.5, "L1 = {l1}");
    }

    #[test]
    fn dictionary_is_deterministic() {
        let imgs = vec![stripes(32, 24), checker(24, 32)];
        assert_eq!(
            build_texton_dictionary(&imgs, 11).unwrap(),
            build_texton_dictionary(&imgs, 11).unwrap()
        );
        assert!(build_texton_dictionary(&[], 11).is_err());
    }

    #[test]
    fn assignment_matches_brute_force_scan() {
        let imgs = vec![stripes(20, 20), checker(20, 20)];
        let dict = build_texton_dictionary(&imgs, 3).unwrap();
        let bank = FilterBank::new();
        let map = TextonMap::compute_with(&bank, &imgs[1], &dict);
        for (r, &a) in bank.responses(&imgs[1]).iter().zip(map.assignment()) {
            let d: Vec<f64> = dict
                .centers()
                .iter()
                .map(|c| c.iter().zip(r).map(|(x, &y)| (x - y as f64).powi(2)).sum())
                .collect();
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(a as usize, d.iter().position(|&v| v == min).unwrap());
        }
    }

    #[test]
    fn text_round_trip() {
        let imgs = vec![stripes(20, 20)];
        let mut dict = build_texton_dictionary(&imgs, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        dict.save(&p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("TXTN 1 15 18\n"));
        dict.seed = None;
        assert_eq!(TextonDictionary::load(&p).unwrap(), dict);
        fs::write(&p, "TXTN 1 15 18\n1 2 3\n").unwrap();
        assert!(TextonDictionary::load(&p).is_err());
    }
}
