//! End-to-end training and inference.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explicit::{explicit_saliency, ExplicitPriorTable, PriorAccumulator, DEFAULT_EPSILON};
use crate::forest::{train_forest, ForestParams, RegressionForest};
use crate::fusion::{blend, final_rescale, FusionWeights, MapRole, SaliencyMap};
use crate::implicit::{region_map, region_predictions, ImageRegions, RegionLabel};
use crate::io::{self, DatasetManifest, ImageBuffer, SemanticScoreMap};
use crate::semantics::{argmax_labels, LabelMap};
use crate::stats::pairwise_sum;
use crate::superpixel::{slic_segment_with, Segmentation, SlicParams, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS, DEFAULT_TARGET_REGIONS};
use crate::textons::{kmeans_dictionary, sample_responses, FilterBank, TextonDictionary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_classes: usize,
    pub superpixel_target: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub forest: ForestParams,
    /// Seeds the texton dictionary and the forest.
    pub seed: u64,
    pub epsilon: f64,
    pub priors_path: PathBuf,
    pub textons_path: PathBuf,
    pub forest_path: PathBuf,
    /// Worker threads; `None` uses every logical core.
    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_classes: 21,
            superpixel_target: DEFAULT_TARGET_REGIONS,
            compactness: DEFAULT_COMPACTNESS,
            slic_iterations: DEFAULT_ITERATIONS,
            forest: ForestParams::default(),
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            priors_path: "priors.txt".into(),
            textons_path: "textons.txt".into(),
            forest_path: "forest.sprf".into(),
            jobs: None,
        }
    }
}

impl PipelineConfig {
    pub fn slic(&self) -> SlicParams {
        SlicParams {
            target_regions: self.superpixel_target,
            compactness: self.compactness,
            iterations: self.slic_iterations,
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            seed: self.seed,
            ..self.forest
        }
    }

    /// Resolves relative artifact paths against `dir`.
    pub fn with_artifact_dir(mut self, dir: &Path) -> Self {
        for p in [&mut self.priors_path, &mut self.textons_path, &mut self.forest_path] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_classes > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("n_classes {} out of range", self.n_classes)));
        }
        if self.superpixel_target == 0 || self.slic_iterations == 0 {
            return Err(Error::InvalidArgument("superpixel target and iterations must be positive".into()));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::InvalidArgument("compactness must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub priors: ExplicitPriorTable,
    pub textons: TextonDictionary,
    pub forest: RegressionForest,
}

impl TrainedModel {
    pub fn save(&self, cfg: &PipelineConfig) -> Result<()> {
        for p in [&cfg.priors_path, &cfg.textons_path, &cfg.forest_path] {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        self.priors.save(&cfg.priors_path)?;
        self.textons.save(&cfg.textons_path)?;
        self.forest.save(&cfg.forest_path)
    }

    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            priors: ExplicitPriorTable::load(&cfg.priors_path)?,
            textons: TextonDictionary::load(&cfg.textons_path)?,
            forest: RegressionForest::load(&cfg.forest_path)?,
        })
    }
}

/// Summary statistics of the fusion weight over the training images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub n_images: usize,
    pub n_regions: usize,
    pub n_salient: usize,
    pub n_background: usize,
    pub n_ambiguous: usize,
    pub n_texton_samples: usize,
    pub alpha: AlphaStats,
    pub seed: u64,
}

impl TrainReport {
    pub fn to_log(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images\t{}", self.n_images);
        let _ = writeln!(s, "regions\t{}", self.n_regions);
        let _ = writeln!(s, "salient_samples\t{}", self.n_salient);
        let _ = writeln!(s, "background_samples\t{}", self.n_background);
        let _ = writeln!(s, "ambiguous_regions\t{}", self.n_ambiguous);
        let _ = writeln!(s, "texton_samples\t{}", self.n_texton_samples);
        let _ = writeln!(s, "alpha_mean\t{}", self.alpha.mean);
        let _ = writeln!(s, "alpha_min\t{}", self.alpha.min);
        let _ = writeln!(s, "alpha_max\t{}", self.alpha.max);
        let _ = writeln!(s, "texton_seed\t{}", self.seed);
        let _ = writeln!(s, "forest_seed\t{}", self.seed);
        s
    }
}

fn check_classes(scores: &SemanticScoreMap, expected: usize) -> Result<()> {
    if scores.n_classes() != expected {
        return Err(Error::DimensionMismatch {
            what: "score tensor classes",
            expected: expected.to_string(),
            found: scores.n_classes().to_string(),
        });
    }
    Ok(())
}

struct ImageTraining {
    priors: PriorAccumulator,
    regions: ImageRegions,
}

/// Learns the prior table, the texton dictionary and the forest from an
/// annotated manifest.
pub fn train(manifest: &DatasetManifest, cfg: &PipelineConfig) -> Result<(TrainedModel, TrainReport)> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::EmptyInput("training manifest"));
    }
    let n = manifest.len();
    let slic = cfg.slic();

    info!("sampling filter responses from {n} images");
    let bank = FilterBank::new();
    let responses: Vec<_> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let image = io::load_image(&entry.image).map_err(|e| e.in_entry(entry.name()))?;
            Ok(sample_responses(&bank, &image, i, n, cfg.seed))
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let textons = kmeans_dictionary(&responses, cfg.seed)?;

    info!("segmenting and describing training images");
    let per_image: Vec<ImageTraining> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let run = || -> Result<ImageTraining> {
                let loaded = io::load_entry(entry)?;
                check_classes(&loaded.scores, cfg.n_classes)?;
                let mask = loaded
                    .mask
                    .ok_or_else(|| Error::InvalidArgument("training entry without mask".into()))?;
                let labels = argmax_labels(&loaded.scores);
                let mut priors = PriorAccumulator::new(cfg.n_classes);
                priors.add_image(&labels, &mask)?;
                let regions = ImageRegions::compute(&loaded.image, &loaded.scores, &mask, &textons, &slic)?;
                Ok(ImageTraining { priors, regions })
            };
            run().map_err(|e| e.in_entry(entry.name()))
        })
        .collect::<Result<_>>()?;

    let mut acc = PriorAccumulator::new(cfg.n_classes);
    let mut samples = Vec::new();
    let (mut n_regions, mut n_salient, mut n_background, mut n_ambiguous) = (0, 0, 0, 0);
    for img in &per_image {
        acc.merge(&img.priors)?;
        n_regions += img.regions.labels.len();
        for l in &img.regions.labels {
            match l {
                RegionLabel::Salient => n_salient += 1,
                RegionLabel::Background => n_background += 1,
                RegionLabel::Ambiguous => n_ambiguous += 1,
            }
        }
        samples.extend(img.regions.samples());
    }
    let priors = acc.finish(cfg.epsilon);
    if samples.is_empty() {
        return Err(Error::EmptyInput("unambiguous training regions"));
    }
    info!("training forest on {} regions", samples.len());
    let forest = train_forest(&samples, &cfg.forest_params())?;

    let alphas: Vec<f64> = per_image
        .par_iter()
        .map(|img| training_alpha(&img.regions, &forest))
        .collect::<Result<_>>()?;
    let alpha = AlphaStats {
        mean: pairwise_sum(&alphas) / alphas.len() as f64,
        min: alphas.iter().copied().fold(f64::INFINITY, f64::min),
        max: alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    if n_salient == 0 {
        warn!("no salient training regions");
    }

    let report = TrainReport {
        n_images: n,
        n_regions,
        n_salient,
        n_background,
        n_ambiguous,
        n_texton_samples: responses.len().min(crate::textons::MAX_SAMPLES),
        alpha,
        seed: cfg.seed,
    };
    Ok((TrainedModel { priors, textons, forest }, report))
}

/// Mean of the normalized implicit map of a training image.
fn training_alpha(regions: &ImageRegions, forest: &RegressionForest) -> Result<f64> {
    let preds: Vec<f64> = regions
        .features
        .iter()
        .map(|f| forest.predict(f.as_slice()))
        .collect::<Result<_>>()?;
    let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(0.0);
    }
    let weighted: Vec<f64> = preds
        .iter()
        .zip(&regions.sizes)
        .map(|(&p, &s)| (p - lo) / (hi - lo) * s as f64)
        .collect();
    let total: usize = regions.sizes.iter().sum();
    Ok(pairwise_sum(&weighted) / total as f64)
}

/// Every intermediate of one inference.
#[derive(Debug, Clone)]
pub struct Inference {
    pub labels: LabelMap,
    pub segmentation: Segmentation,
    pub explicit: SaliencyMap,
    pub implicit: SaliencyMap,
    pub weights: FusionWeights,
    /// Blend before the final rescale.
    pub blended: SaliencyMap,
    pub fused: SaliencyMap,
}

pub fn infer(model: &TrainedModel, image: &ImageBuffer, scores: &SemanticScoreMap, cfg: &PipelineConfig) -> Result<Inference> {
    check_classes(scores, model.priors.n_classes())?;
    if (scores.height(), scores.width()) != (image.height(), image.width()) {
        return Err(Error::dims(
            "score tensor",
            (image.height(), image.width()),
            (scores.height(), scores.width()),
        ));
    }
    let labels = argmax_labels(scores);
    let explicit = explicit_saliency(&labels, &model.priors)?;
    let segmentation = slic_segment_with(image, &cfg.slic())?;
    let preds = region_predictions(image, scores, &segmentation, &model.textons, &model.forest)?;
    let implicit = region_map(&segmentation, &preds, MapRole::Implicit)?.normalized();
    let (blended, weights) = blend(&explicit, &implicit)?;
    let fused = final_rescale(&blended);
    Ok(Inference {
        labels,
        segmentation,
        explicit,
        implicit,
        weights,
        blended,
        fused,
    })
}

/// What [`infer_manifest`] writes besides the fused maps.
#[derive(Debug, Clone, Default)]
pub struct InferOutputs {
    pub save_intermediates: bool,
    pub superpixels_dir: Option<PathBuf>,
}

/// Infers every entry and writes `<out_dir>/<stem>.png`, plus
/// `<stem>_explicit.png` and `<stem>_implicit.png` on request. Returns the
/// fused map paths in manifest order.
pub fn infer_manifest(
    model: &TrainedModel,
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    out_dir: &Path,
    outputs: &InferOutputs,
) -> Result<Vec<PathBuf>> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("inference manifest"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if let Some(dir) = &outputs.superpixels_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let name = entry.name();
            let run = || -> Result<PathBuf> {
                let image = io::load_image(&entry.image)?;
                let scores = io::load_score_tensor(&entry.scores)?;
                let result = infer(model, &image, &scores, cfg)?;
                let fused = out_dir.join(format!("{name}.png"));
                io::write_saliency_map(&result.fused, &fused)?;
                if outputs.save_intermediates {
                    io::write_saliency_map(&result.explicit, out_dir.join(format!("{name}_explicit.png")))?;
                    io::write_saliency_map(&result.implicit, out_dir.join(format!("{name}_implicit.png")))?;
                }
                if let Some(dir) = &outputs.superpixels_dir {
                    io::write_label_map(&result.segmentation, dir.join(format!("{name}_superpixels.png")))?;
                }
                Ok(fused)
            };
            run().map_err(|e| e.in_entry(name.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_dataset, SynthConfig};

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            n_classes: 21,
            superpixel_target: 60,
            forest: ForestParams {
                tree_count: 10,
                ..Default::default()
            },
            seed: 5,
            ..Default::default()
        }
    }

    fn synth() -> SynthConfig {
        SynthConfig {
            width: 64,
            height: 48,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults() {
        let c = PipelineConfig::default();
        assert_eq!((c.n_classes, c.superpixel_target), (21, 200));
        assert_eq!(c.epsilon, 1e-8);
        assert_eq!(c.forest.tree_count, 200);
        let d = PipelineConfig::default().with_artifact_dir(Path::new("/tmp/m"));
        assert_eq!(d.forest_path, Path::new("/tmp/m/forest.sprf"));
    }

    #[test]
    fn empty_manifest_rejected() {
        let m = DatasetManifest {
            split: io::Split::Train,
            entries: vec![],
        };
        assert!(matches!(train(&m, &small_cfg()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn train_save_load_infer() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path().join("data"), &synth(), 0..6, 3).unwrap();
        let cfg = small_cfg().with_artifact_dir(&dir.path().join("model"));
        let (model, report) = train(&m, &cfg).unwrap();
        assert_eq!(report.n_images, 6);
        assert_eq!(report.n_regions, report.n_salient + report.n_background + report.n_ambiguous);
        assert!(report.alpha.min <= report.alpha.mean && report.alpha.mean <= report.alpha.max);
        model.save(&cfg).unwrap();
        let back = TrainedModel::load(&cfg).unwrap();
        assert_eq!(back.forest, model.forest);
        assert_eq!(back.forest.to_bytes(), model.forest.to_bytes());

        let (again, _) = train(&m, &cfg).unwrap();
        assert_eq!(again.forest.to_bytes(), model.forest.to_bytes());

        let out = dir.path().join("out");
        let paths = infer_manifest(
            &back,
            &m,
            &cfg,
            &out,
            &InferOutputs {
                save_intermediates: true,
                superpixels_dir: None,
            },
        )
        .unwrap();
        assert_eq!(paths.len(), 6);
        assert_eq!(fs::read_dir(&out).unwrap().count(), 18);

        let loaded = io::load_entry(&m.entries[0]).unwrap();
        let r = infer(&back, &loaded.image, &loaded.scores, &cfg).unwrap();
        assert_eq!(r.fused, crate::fusion::fuse(&r.explicit, &r.implicit).unwrap());
        assert_eq!((r.fused.width(), r.fused.height()), (64, 48));
    }

    #[test]
    fn class_count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &synth(), 0..2, 3).unwrap();
        let cfg = PipelineConfig {
            n_classes: 7,
            ..small_cfg()
        };
        let err = train(&m, &cfg).unwrap_err();
        assert!(matches!(err, Error::Entry { .. }));
        assert!(matches!(err.root(), Error::DimensionMismatch { .. }));
    }
}
