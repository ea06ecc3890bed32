use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sempri::forest::RegressionForest;
use sempri::fusion::{MapRole, SaliencyMap};
use sempri::implicit::{build_training_set, implicit_saliency};
use sempri::io::{self, DatasetManifest, GroundTruthMask, ManifestEntry, Split};
use sempri::metrics::{evaluate_dataset, MetricConfig};
use sempri::superpixel::{slic_segment_with, SlicParams};
use sempri::synth::{generate_scene, write_dataset, SynthConfig};
use sempri::textons::{TextonDictionary, N_TEXTONS};

fn dict() -> TextonDictionary {
    TextonDictionary::from_centers((0..N_TEXTONS).map(|i| [i as f64 * 0.01; 18]).collect()).unwrap()
}

fn small() -> SynthConfig {
    SynthConfig {
        width: 64,
        height: 48,
        ..Default::default()
    }
}

fn slic() -> SlicParams {
    SlicParams {
        target_regions: 40,
        ..Default::default()
    }
}

/// Rewrites every entry's mask from its segmentation.
fn remask(m: &DatasetManifest, f: impl Fn(usize, &sempri::superpixel::Segmentation) -> Vec<u8>) {
    for (i, e) in m.entries.iter().enumerate() {
        let img = io::load_image(&e.image).unwrap();
        let seg = slic_segment_with(&img, &slic()).unwrap();
        let mask = GroundTruthMask::new(img.width(), img.height(), f(i, &seg)).unwrap();
        io::write_mask(&mask, e.mask.as_ref().unwrap()).unwrap();
    }
}

#[test]
fn aligned_object_leaves_no_ambiguous_region() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &small(), 0..1, 9).unwrap();
    // the object is a union of superpixels
    remask(&m, |_, seg| seg.labels().iter().map(|&q| u8::from(q % 3 == 0)).collect());
    let samples = build_training_set(&m, &dict(), &slic()).unwrap();
    let img = io::load_image(&m.entries[0].image).unwrap();
    let n_regions = slic_segment_with(&img, &slic()).unwrap().n_regions();
    assert_eq!(samples.len(), n_regions);
    assert!(samples.iter().any(|s| s.target == 1.0));
}

#[test]
fn empty_mask_labels_everything_background() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &small(), 0..1, 9).unwrap();
    remask(&m, |_, seg| vec![0; seg.labels().len()]);
    let samples = build_training_set(&m, &dict(), &slic()).unwrap();
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|s| s.target == 0.0));
}

#[test]
fn sample_count_matches_per_image_count() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &small(), 0..2, 4).unwrap();
    let samples = build_training_set(&m, &dict(), &slic()).unwrap();
    let mut expected = 0;
    let mut targets = Vec::new();
    for e in &m.entries {
        let loaded = io::load_entry(e).unwrap();
        let mask = loaded.mask.unwrap();
        let seg = slic_segment_with(&loaded.image, &slic()).unwrap();
        let mut salient = vec![0usize; seg.n_regions()];
        let mut size = vec![0usize; seg.n_regions()];
        for (p, &q) in seg.labels().iter().enumerate() {
            size[q as usize] += 1;
            salient[q as usize] += mask.values()[p] as usize;
        }
        for q in 0..seg.n_regions() {
            if 5 * salient[q] >= 4 * size[q] {
                expected += 1;
                targets.push(1.0);
            } else if 5 * (size[q] - salient[q]) >= 4 * size[q] {
                expected += 1;
                targets.push(0.0);
            }
        }
    }
    assert_eq!(samples.len(), expected);
    assert_eq!(samples.iter().map(|s| s.target).collect::<Vec<_>>(), targets);
}

#[test]
fn implicit_map_is_region_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..5 {
        let scene = generate_scene(&small(), 3, i).unwrap();
        let seg = slic_segment_with(&scene.image, &slic()).unwrap();
        let stumps: Vec<_> = (0..7)
            .map(|_| (rng.random_range(0..79), rng.random(), rng.random(), rng.random()))
            .collect();
        let forest = RegressionForest::from_stumps(79, &stumps).unwrap();
        let map = implicit_saliency(&scene.image, &scene.scores, &seg, &dict(), &forest).unwrap();
        let mut value = vec![None; seg.n_regions()];
        for (p, &q) in seg.labels().iter().enumerate() {
            let v = map.values()[p];
            assert_eq!(*value[q as usize].get_or_insert(v), v);
        }
        let again = implicit_saliency(&scene.image, &scene.scores, &seg, &dict(), &forest).unwrap();
        assert_eq!(again, map);
    }
}

fn brute_mae_and_curve(map: &[u8], gt: &[u8]) -> (f64, Vec<(f64, f64)>) {
    let mae = map
        .iter()
        .zip(gt)
        .map(|(&m, &g)| (m as f64 / 255.0 - g as f64).abs())
        .sum::<f64>()
        / map.len() as f64;
    let pos = gt.iter().filter(|&&g| g == 1).count() as f64;
    let curve = (0..256)
        .map(|t| {
            let pred: Vec<bool> = map.iter().map(|&m| m as usize >= t).collect();
            let tp = pred.iter().zip(gt).filter(|(&p, &g)| p && g == 1).count() as f64;
            let np = pred.iter().filter(|&&p| p).count() as f64;
            (if np == 0.0 { 1.0 } else { tp / np }, tp / pos)
        })
        .collect();
    (mae, curve)
}

#[test]
fn dataset_report_matches_per_image_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path().join("d"), &small(), 0..5, 12).unwrap();
    let maps = dir.path().join("maps");
    std::fs::create_dir_all(&maps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut oracle = Vec::new();
    for e in &m.entries {
        let gt = io::load_mask(e.mask.as_ref().unwrap(), 48, 64).unwrap();
        let levels: Vec<u8> = gt
            .values()
            .iter()
            .map(|&g| (g as u32 * 150 + rng.random_range(0..=105)) as u8)
            .collect();
        let values = levels.iter().map(|&v| v as f64 / 255.0).collect();
        let map = SaliencyMap::new(64, 48, values, MapRole::Fused).unwrap();
        io::write_saliency_map(&map, maps.join(format!("{}.png", e.name()))).unwrap();
        oracle.push(brute_mae_and_curve(&levels, gt.values()));
    }
    let report = evaluate_dataset(&maps, &m, &MetricConfig::default()).unwrap();
    let mean_mae = oracle.iter().map(|o| o.0).sum::<f64>() / 5.0;
    assert!((report.mae - mean_mae).abs() < 1e-12);
    for t in 0..256 {
        let p = oracle.iter().map(|o| o.1[t].0).sum::<f64>() / 5.0;
        let r = oracle.iter().map(|o| o.1[t].1).sum::<f64>() / 5.0;
        assert!((report.curve[t].precision - p).abs() < 1e-12, "t={t}");
        assert!((report.curve[t].recall - r).abs() < 1e-12, "t={t}");
    }
}

#[test]
fn missing_mask_in_test_manifest_fails_eval() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), &small(), 0..1, 1).unwrap();
    let entry = ManifestEntry {
        mask: None,
        ..m.entries[0].clone()
    };
    let m = DatasetManifest {
        split: Split::Test,
        entries: vec![entry],
    };
    let err = evaluate_dataset(dir.path(), &m, &MetricConfig::default()).unwrap_err();
    assert!(err.to_string().contains("scene_0000"));
}
