//! File formats: RGB images, binary ground-truth masks, SPST semantic score
//! tensors, saliency map PNGs and tab-separated dataset manifests.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::fusion::{MapRole, SaliencyMap};
use crate::superpixel::Segmentation;

/// Per-pixel simplex tolerance used to decide whether a tensor is already
/// normalized.
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;

pub const SPST_MAGIC: &[u8; 4] = b"SPST";
pub const SPST_VERSION: u32 = 1;
const SPST_HEADER_LEN: usize = 20;

/// An 8-bit RGB raster stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixel_at(y * self.width + x)
    }

    /// Pixel by linear (row-major) index.
    pub fn pixel_at(&self, index: usize) -> [u8; 3] {
        let o = index * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Luma in [0,1] (Rec. 601 weights).
    pub fn grayscale(&self) -> Vec<f32> {
        self.pixels
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
            .collect()
    }
}

/// Binary ground-truth map, one byte per pixel holding 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl GroundTruthMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "mask of {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// Binarizes 8-bit gray levels with the `> 127` rule.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Self::new(width, height, gray.iter().map(|&g| u8::from(g > 127)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn salient_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Per-pixel class confidences, `h x w x n_c`, stored in (y, x, c) order.
///
/// Every pixel's scores are non-negative and sum to one (within
/// [`SIMPLEX_TOLERANCE`]); tensors that violate this on ingestion are
/// treated as logits and softmax-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticScoreMap {
    width: usize,
    height: usize,
    n_classes: usize,
    scores: Vec<f32>,
}

impl SemanticScoreMap {
    /// Builds a score map, normalizing it if it is not already a per-pixel
    /// probability simplex.
    pub fn new(width: usize, height: usize, n_classes: usize, mut scores: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument("score tensor dimensions must be positive".into()));
        }
        let expected = width * height * n_classes;
        if scores.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "score tensor needs {expected} values, got {}",
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("score tensor holds non-finite values".into()));
        }
        if !is_simplex(&scores, n_classes) {
            softmax_rows(&mut scores, n_classes);
        }
        Ok(Self {
            width,
            height,
            n_classes,
            scores,
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

    pub fn as_raw(&self) -> &[f32] {
        &self.scores
    }

    pub fn scores(&self, x: usize, y: usize) -> &[f32] {
        self.scores_at(y * self.width + x)
    }

    /// Scores of the pixel with linear index `index`.
    pub fn scores_at(&self, index: usize) -> &[f32] {
        let o = index * self.n_classes;
        &self.scores[o..o + self.n_classes]
    }
}

fn is_simplex(scores: &[f32], n_classes: usize) -> bool {
    scores.chunks_exact(n_classes).all(|row| {
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        row.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_TOLERANCE
    })
}

fn softmax_rows(scores: &mut [f32], n_classes: usize) {
    for row in scores.chunks_exact_mut(n_classes) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (dst, e) in row.iter_mut().zip(exps) {
            *dst = (e / total) as f32;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub scores: PathBuf,
}

impl ManifestEntry {
    /// Identifier used for output file names: the image file stem.
    pub fn name(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.to_string_lossy().into_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn map_image_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => Error::io(path, e),
        ImageError::IoError(e) => Error::corrupt(path, e.to_string()),
        ImageError::Decoding(e) => Error::corrupt(path, e.to_string()),
        ImageError::Unsupported(e) => Error::Unsupported {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        other => Error::corrupt(path, other.to_string()),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format().is_none() {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: "unrecognized image format".into(),
        });
    }
    reader.decode().map_err(|e| map_image_error(path, e))
}

/// Loads an 8-bit raster as RGB. Gray rasters are replicated across channels
/// and alpha is dropped; channel values are never rescaled.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw(),
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_rgb8().into_raw()
        }
        other => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                reason: format!("expected 8 bits per channel, found {:?}", other.color()),
            })
        }
    };
    ImageBuffer::new(w, h, pixels)
}

/// Loads a grayscale mask of size `height x width` and binarizes it
/// (`> 127` is salient).
pub fn load_mask(path: impl AsRef<Path>, height: usize, width: usize) -> Result<GroundTruthMask> {
    let path = path.as_ref();
    let gray = decode(path)?.to_luma8();
    let found = (gray.height() as usize, gray.width() as usize);
    if found != (height, width) {
        return Err(Error::dims("ground-truth mask", (height, width), found).in_entry(path.display().to_string()));
    }
    GroundTruthMask::from_gray(width, height, gray.as_raw())
}

/// Reads an SPST score tensor and normalizes it onto the per-pixel simplex.
pub fn load_score_tensor(path: impl AsRef<Path>) -> Result<SemanticScoreMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < SPST_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != SPST_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "SPST",
            });
        }
        return Err(Error::corrupt(path, "header shorter than 20 bytes"));
    }
    if &bytes[..4] != SPST_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SPST",
        });
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, h, w, n_c) = (field(0), field(1), field(2), field(3));
    if version != SPST_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: SPST_VERSION,
        });
    }
    if h == 0 || w == 0 || n_c == 0 {
        return Err(Error::corrupt(path, "zero dimension in header"));
    }
    let expected = (h as usize)
        .checked_mul(w as usize)
        .and_then(|v| v.checked_mul(n_c as usize))
        .filter(|v| v.checked_mul(4).is_some())
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.to_path_buf(),
            height: h,
            width: w,
            channels: n_c,
        })?;
    let payload = &bytes[SPST_HEADER_LEN..];
    if payload.len() != expected * 4 {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            found: payload.len() / 4,
            expected,
        });
    }
    let scores = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SemanticScoreMap::new(w as usize, h as usize, n_c as usize, scores).map_err(|e| match e {
        Error::InvalidArgument(reason) => Error::corrupt(path, reason),
        other => other,
    })
}

/// Writes a score map in SPST format.
pub fn write_score_tensor(map: &SemanticScoreMap, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(SPST_HEADER_LEN + map.scores.len() * 4);
    bytes.extend_from_slice(SPST_MAGIC);
    for v in [SPST_VERSION, map.height as u32, map.width as u32, map.n_classes as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in &map.scores {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path.as_ref(), &bytes)
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn encode_png(img: DynamicImage, path: &Path) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::corrupt(path, e.to_string()))?;
    write_atomic(path, buf.get_ref())
}

/// Quantizes a value in [0,1] to 8 bits, rounding half up.
pub fn quantize_unit(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Writes a saliency map as an 8-bit grayscale PNG (`round(255 S)`).
pub fn write_saliency_map(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let gray: Vec<u8> = map.values().iter().map(|&v| quantize_unit(v)).collect();
    let img = image::GrayImage::from_raw(map.width() as u32, map.height() as u32, gray)
        .ok_or_else(|| Error::Invariant("saliency buffer size".into()))?;
    encode_png(DynamicImage::ImageLuma8(img), path.as_ref())
}

/// Reads a saliency map PNG back into [0,1] values.
pub fn load_saliency_map(path: impl AsRef<Path>) -> Result<SaliencyMap> {
    let path = path.as_ref();
    let gray = decode(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let values = gray.as_raw().iter().map(|&g| g as f64 / 255.0).collect();
    SaliencyMap::new(w, h, values, MapRole::Fused)
}

/// Writes an 8-bit RGB image as PNG, or binary PPM when the extension is
/// `.ppm`.
pub fn write_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = image::RgbImage::from_raw(image.width as u32, image.height as u32, image.pixels.clone())
        .ok_or_else(|| Error::Invariant("image buffer size".into()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
        let mut buf = Vec::new();
        PnmEncoder::new(&mut buf)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
            .map_err(|e| Error::corrupt(path, e.to_string()))?;
        return write_atomic(path, &buf);
    }
    encode_png(DynamicImage::ImageRgb8(img), path)
}

/// Writes a mask as an 8-bit PNG with values 0 and 255.
pub fn write_mask(mask: &GroundTruthMask, path: impl AsRef<Path>) -> Result<()> {
    let gray = mask.values.iter().map(|&v| v * 255).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, gray)
        .ok_or_else(|| Error::Invariant("mask buffer size".into()))?;
    encode_png(DynamicImage::ImageLuma8(img), path.as_ref())
}

/// Writes superpixel labels as a 16-bit grayscale PNG.
pub fn write_label_map(seg: &Segmentation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if seg.n_regions() > u16::MAX as usize + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} regions do not fit a 16-bit label map",
            seg.n_regions()
        )));
    }
    let raw = seg.labels().iter().map(|&l| l as u16).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(seg.width() as u32, seg.height() as u32, raw)
        .ok_or_else(|| Error::Invariant("label buffer size".into()))?;
    encode_png(DynamicImage::ImageLuma16(img), path)
}

/// Parses a manifest of `<image>\t<mask|->\t<tensor>` lines. Relative paths
/// resolve against the manifest's directory; blank lines and `#` comments are
/// skipped.
pub fn parse_manifest(path: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let resolve = |line: usize, field: &str| -> Result<PathBuf> {
        let p = base.join(field);
        if !p.exists() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line,
                reason: format!("{} does not exist", p.display()),
            });
        }
        Ok(p)
    };

    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let image = resolve(line, fields[0])?;
        let mask = match fields[1] {
            "-" | "" => None,
            m => Some(resolve(line, m)?),
        };
        if split == Split::Train && mask.is_none() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line,
                reason: "training entries require a mask".into(),
            });
        }
        let scores = resolve(line, fields[2])?;
        entries.push(ManifestEntry { image, mask, scores });
    }
    Ok(DatasetManifest { split, entries })
}

/// Writes a manifest. Paths under `path`'s directory are stored relative to it.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut out = String::new();
    for e in entries {
        let mask = e.mask.as_deref().map(rel).unwrap_or_else(|| "-".into());
        out.push_str(&format!("{}\t{}\t{}\n", rel(&e.image), mask, rel(&e.scores)));
    }
    write_atomic(path, out.as_bytes())
}

/// An entry's decoded inputs.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub name: String,
    pub image: ImageBuffer,
    pub mask: Option<GroundTruthMask>,
    pub scores: SemanticScoreMap,
}

/// Loads and cross-checks the files of one manifest entry.
pub fn load_entry(entry: &ManifestEntry) -> Result<LoadedEntry> {
    let name = entry.name();
    let inner = || -> Result<LoadedEntry> {
        let image = load_image(&entry.image)?;
        let scores = load_score_tensor(&entry.scores)?;
        if (scores.height, scores.width) != (image.height, image.width) {
            return Err(Error::dims(
                "score tensor",
                (image.height, image.width),
                (scores.height, scores.width),
            ));
        }
        let mask = match &entry.mask {
            Some(p) => Some(load_mask(p, image.height, image.width)?),
            None => None,
        };
        Ok(LoadedEntry {
            name: name.clone(),
            image,
            mask,
            scores,
        })
    };
    inner().map_err(|e| e.in_entry(name.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn spst_bytes(h: u32, w: u32, c: u32, values: &[f32]) -> Vec<u8> {
        let mut b = b"SPST".to_vec();
        for v in [1u32, h, w, c] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn white_png_reads_exactly() {
        let dir = tmp();
        let p = dir.path().join("white.png");
        image::RgbImage::from_raw(1, 1, vec![255, 255, 255]).unwrap().save(&p).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.as_raw(), &[255, 255, 255]);
    }

    #[test]
    fn ppm_round_trip_is_byte_exact() {
        let dir = tmp();
        let p = dir.path().join("img.ppm");
        let bytes = vec![1, 2, 3, 40, 50, 60, 255, 0, 128, 7, 8, 9];
        let img = ImageBuffer::new(2, 2, bytes.clone()).unwrap();
        write_image(&img, &p).unwrap();
        assert_eq!(&fs::read(&p).unwrap()[..2], b"P6");
        assert_eq!(load_image(&p).unwrap().as_raw(), bytes.as_slice());
    }

    #[test]
    fn truncated_png_is_corrupt() {
        let dir = tmp();
        let p = dir.path().join("t.png");
        let img = ImageBuffer::filled(16, 16, [10, 20, 30]).unwrap();
        write_image(&img, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn sixteen_bit_image_is_rejected() {
        let dir = tmp();
        let p = dir.path().join("deep.png");
        image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_raw(1, 1, vec![1, 2, 3])
            .unwrap()
            .save(&p)
            .unwrap();
        assert!(matches!(load_image(&p), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }

    #[test]
    fn mask_threshold_boundary() {
        let dir = tmp();
        let p = dir.path().join("m.png");
        image::GrayImage::from_raw(4, 1, vec![0, 127, 128, 255]).unwrap().save(&p).unwrap();
        let m = load_mask(&p, 1, 4).unwrap();
        assert_eq!(m.values(), &[0, 0, 1, 1]);
    }

    #[test]
    fn black_mask_is_all_zero() {
        let dir = tmp();
        let p = dir.path().join("m.png");
        image::GrayImage::new(3, 2).save(&p).unwrap();
        assert!(load_mask(&p, 2, 3).unwrap().values().iter().all(|&v| v == 0));
    }

    #[test]
    fn soft_edge_mask_matches_per_pixel_rule() {
        let dir = tmp();
        let p = dir.path().join("soft.png");
        let gray: Vec<u8> = (0..64u32).map(|i| ((i * 37 + 11) % 256) as u8).collect();
        image::GrayImage::from_raw(8, 8, gray.clone()).unwrap().save(&p).unwrap();
        let m = load_mask(&p, 8, 8).unwrap();
        for (g, v) in gray.iter().zip(m.values()) {
            assert_eq!(*v, if *g > 127 { 1 } else { 0 });
        }
    }

    #[test]
    fn mask_size_mismatch() {
        let dir = tmp();
        let p = dir.path().join("m.png");
        image::GrayImage::new(3, 2).save(&p).unwrap();
        let err = load_mask(&p, 3, 3).unwrap_err();
        assert!(matches!(err.root(), Error::DimensionMismatch { .. }));
    }

    #[test]
    fn one_hot_tensor_is_unchanged() {
        let dir = tmp();
        let p = dir.path().join("t.spst");
        let vals = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        fs::write(&p, spst_bytes(1, 2, 3, &vals)).unwrap();
        let t = load_score_tensor(&p).unwrap();
        assert_eq!(t.as_raw(), &vals);
        assert_eq!((t.height(), t.width(), t.n_classes()), (1, 2, 3));
    }

    #[test]
    fn zero_logits_become_uniform() {
        let dir = tmp();
        let p = dir.path().join("t.spst");
        fs::write(&p, spst_bytes(1, 1, 2, &[0.0, 0.0])).unwrap();
        assert_eq!(load_score_tensor(&p).unwrap().as_raw(), &[0.5, 0.5]);
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let dir = tmp();
        let p = dir.path().join("t.spst");
        fs::write(&p, spst_bytes(2, 2, 2, &[0.0; 7])).unwrap();
        assert!(matches!(
            load_score_tensor(&p),
            Err(Error::LengthMismatch { found: 7, expected: 8, .. })
        ));
    }

    #[test]
    fn bad_magic_and_overflow() {
        let dir = tmp();
        let p = dir.path().join("t.spst");
        let mut b = spst_bytes(1, 1, 1, &[1.0]);
        b[0] = b'X';
        fs::write(&p, &b).unwrap();
        assert!(matches!(load_score_tensor(&p), Err(Error::BadMagic { .. })));
        fs::write(&p, spst_bytes(u32::MAX, u32::MAX, u32::MAX, &[])).unwrap();
        assert!(matches!(load_score_tensor(&p), Err(Error::DimensionOverflow { .. })));
        let mut v = spst_bytes(1, 1, 1, &[1.0]);
        v[4] = 2;
        fs::write(&p, &v).unwrap();
        assert!(matches!(load_score_tensor(&p), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn saliency_png_values_and_rounding() {
        let dir = tmp();
        let p = dir.path().join("s.png");
        let map = SaliencyMap::new(3, 1, vec![1.0, 0.5, 0.0], MapRole::Fused).unwrap();
        write_saliency_map(&map, &p).unwrap();
        let gray = image::open(&p).unwrap().to_luma8();
        assert_eq!(gray.as_raw(), &[255, 128, 0]);
    }

    #[test]
    fn unwritable_path_errors() {
        let map = SaliencyMap::new(1, 1, vec![0.0], MapRole::Fused).unwrap();
        assert!(matches!(
            write_saliency_map(&map, "/nonexistent/dir/s.png"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn manifest_parsing() {
        let dir = tmp();
        let m = dir.path().join("m.tsv");
        fs::write(&m, "").unwrap();
        assert_eq!(parse_manifest(&m, Split::Train).unwrap().len(), 0);

        for f in ["a.png", "a_mask.png", "a.spst", "b.png", "b_mask.png", "b.spst"] {
            fs::write(dir.path().join(f), b"x").unwrap();
        }
        fs::write(&m, "a.png\ta_mask.png\ta.spst\n# comment\n\nb.png\tb_mask.png\tb.spst\n").unwrap();
        let man = parse_manifest(&m, Split::Train).unwrap();
        assert_eq!(man.len(), 2);
        assert_eq!(man.entries[0].image, dir.path().join("a.png"));
        assert_eq!(man.entries[1].name(), "b");

        fs::write(&m, "a.png\t-\ta.spst\n").unwrap();
        assert!(matches!(
            parse_manifest(&m, Split::Train),
            Err(Error::Manifest { line: 1, .. })
        ));
        assert!(parse_manifest(&m, Split::Test).unwrap().entries[0].mask.is_none());

        fs::write(&m, "missing.png\t-\ta.spst\n").unwrap();
        assert!(matches!(parse_manifest(&m, Split::Test), Err(Error::Manifest { .. })));
    }

    #[test]
    fn manifest_write_then_parse() {
        let dir = tmp();
        for f in ["a.png", "a.spst"] {
            fs::write(dir.path().join(f), b"x").unwrap();
        }
        let e = ManifestEntry {
            image: dir.path().join("a.png"),
            mask: None,
            scores: dir.path().join("a.spst"),
        };
        let m = dir.path().join("m.tsv");
        write_manifest(&m, std::slice::from_ref(&e)).unwrap();
        assert_eq!(fs::read_to_string(&m).unwrap(), "a.png\t-\ta.spst\n");
        assert_eq!(parse_manifest(&m, Split::Test).unwrap().entries, vec![e]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn saliency_round_trip_within_half_level(values in prop::collection::vec(0.0f64..=1.0, 1..64)) {
                let dir = tmp();
                let p = dir.path().join("s.png");
                let n = values.len();
                let map = SaliencyMap::new(n, 1, values.clone(), MapRole::Fused).unwrap();
                write_saliency_map(&map, &p).unwrap();
                let back = load_saliency_map(&p).unwrap();
                for (a, b) in values.iter().zip(back.values()) {
                    prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
                }
            }

            #[test]
            fn ingestion_yields_simplex(
                logits in prop::collection::vec(-20.0f32..20.0, 12),
            ) {
                let t = SemanticScoreMap::new(2, 2, 3, logits).unwrap();
                for row in t.as_raw().chunks(3) {
                    let s: f64 = row.iter().map(|&v| v as f64).sum();
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((s - 1.0).abs() <= SIMPLEX_TOLERANCE);
                }
            }
        }
    }
}
