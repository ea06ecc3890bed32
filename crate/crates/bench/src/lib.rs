//! Shared fixtures for the benchmarks.

use sempri::forest::{train_forest, ForestParams, TrainingSample};
use sempri::implicit::ImageRegions;
use sempri::pipeline::TrainedModel;
use sempri::superpixel::SlicParams;
use sempri::synth::{generate_scene, SynthConfig, SyntheticScene};
use sempri::textons::{kmeans_dictionary, sample_responses, FilterBank};
use sempri::explicit::PriorAccumulator;
use sempri::semantics::argmax_labels;

/// A 300x400 synthetic scene.
pub fn scene(index: usize) -> SyntheticScene {
    let cfg = SynthConfig {
        width: 400,
        height: 300,
        ..Default::default()
    };
    generate_scene(&cfg, 1, index).expect("valid synthetic config")
}

/// A model trained on a handful of 300x400 scenes.
pub fn model(n_images: usize) -> TrainedModel {
    let scenes: Vec<SyntheticScene> = (0..n_images).map(|i| scene(100 + i)).collect();
    let bank = FilterBank::new();
    let responses: Vec<_> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| sample_responses(&bank, &s.image, i, n_images, 0))
        .collect();
    let textons = kmeans_dictionary(&responses, 0).expect("responses");
    let mut priors = PriorAccumulator::new(21);
    let mut samples: Vec<TrainingSample> = Vec::new();
    for s in &scenes {
        priors.add_image(&argmax_labels(&s.scores), &s.mask).expect("sizes match");
        let regions = ImageRegions::compute(&s.image, &s.scores, &s.mask, &textons, &SlicParams::default())
            .expect("regions");
        samples.extend(regions.samples());
    }
    let forest = train_forest(&samples, &ForestParams::default()).expect("samples");
    TrainedModel {
        priors: priors.finish(1e-8),
        textons,
        forest,
    }
}
