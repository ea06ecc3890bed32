use sempri::pipeline::{infer, PipelineConfig};
use sempri_bench::{model, scene};

#[test]
fn fixtures_run_end_to_end() {
    let s = scene(0);
    assert_eq!((s.image.width(), s.image.height()), (400, 300));
    let m = model(2);
    assert_eq!(m.forest.feature_dim(), 79);
    let r = infer(&m, &s.image, &s.scores, &PipelineConfig::default()).unwrap();
    assert_eq!(r.fused.values().len(), 400 * 300);
}
