//! Salient object detection with semantic priors.
//!
//! A per-pixel semantic score tensor drives two saliency estimates: an
//! explicit map built from learned class co-occurrence priors, and an
//! implicit map predicted per superpixel by a regression forest over
//! geometric, color, texture and semantic region features. The two are
//! blended with an image-adaptive weight and rescaled.

pub mod color;
pub mod error;
pub mod explicit;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod implicit;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod semantics;
pub mod stats;
pub mod superpixel;
pub mod synth;
pub mod textons;

pub use error::{Error, Result};
pub use explicit::{explicit_saliency, train_explicit_priors, ExplicitPriorTable, PriorAccumulator};
pub use features::{assemble_features, feature_dim, RegionFeatureVector};
pub use forest::{train_forest, ForestParams, RegressionForest, TrainingSample};
pub use fusion::{final_rescale, fuse, FusionWeights, MapRole, SaliencyMap};
pub use implicit::{implicit_saliency, label_training_regions, RegionLabel};
pub use io::{DatasetManifest, GroundTruthMask, ImageBuffer, ManifestEntry, SemanticScoreMap, Split};
pub use metrics::{evaluate_dataset, MetricConfig, PrPoint, Report};
pub use pipeline::{infer, train, PipelineConfig, TrainedModel};
pub use semantics::{argmax_labels, LabelMap};
pub use superpixel::{slic_segment, Segmentation, SlicParams};
pub use textons::TextonDictionary;
