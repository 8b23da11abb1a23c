use std::fs;

use specphen_core::pipeline::{self, PipelineConfig, Stage};
use specphen_core::synth::{SynthKind, SynthSpec};
use specphen_core::WeightStyle;

fn setup(n_units: usize) -> (tempfile::TempDir, PipelineConfig) {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::new(SynthKind::preset("trend-plus-noise").unwrap(), 21, 19, n_units);
    let inputs = pipeline::write_synthetic_inputs(&spec, &dir.path().join("in")).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.input.panel = Some(inputs.panel);
    cfg.input.polygons = Some(inputs.polygons);
    cfg.input.canonical_names = Some(inputs.names);
    cfg.input.fips_property = "fips".into();
    cfg.output.dir = dir.path().join("out");
    (dir, cfg)
}

#[test]
fn hundred_unit_trend_panel_is_stable() {
    let (_dir, cfg) = setup(100);
    let first = pipeline::run_pipeline(&cfg).unwrap();
    let second = pipeline::run_pipeline(&cfg).unwrap();
    assert_eq!(first.manifest, second.manifest);
    assert_eq!(first.manifest.artifacts.len(), 22);
    assert!(first.analysis.warnings.is_empty(), "{:?}", first.analysis.warnings);
    let features = fs::read_to_string(cfg.output.dir.join("features.csv")).unwrap();
    assert_eq!(features.lines().count(), 101);
    let manifest = fs::read_to_string(cfg.output.dir.join("manifest.json")).unwrap();
    assert!(!manifest.contains("manifest.json"));
}

#[test]
fn bad_polygons_fail_at_ingest_and_write_nothing() {
    let (_dir, cfg) = setup(9);
    fs::write(cfg.input.polygons.as_ref().unwrap(), r#"{"type": "Feature"}"#).unwrap();
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Ingest));
    assert_eq!(fs::read_dir(&cfg.output.dir).unwrap().count(), 0);
}

#[test]
fn missing_input_is_a_config_error() {
    let (_dir, mut cfg) = setup(9);
    cfg.input.panel = Some(cfg.output.dir.join("nope.csv"));
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert!(err.stage().is_none());
    assert!(err.to_string().contains("does not exist"), "{err}");
}

#[test]
fn weight_style_changes_only_spatial_outputs() {
    let (dir, mut cfg) = setup(36);
    let binary = pipeline::run_pipeline(&cfg).unwrap().manifest;
    cfg.spatial.weight_style = WeightStyle::Row;
    cfg.output.dir = dir.path().join("row");
    let row = pipeline::run_pipeline(&cfg).unwrap().manifest;
    for entry in &binary.artifacts {
        let other = row.get(&entry.file).unwrap();
        let spatial = Stage::Spatial.artifacts().contains(&entry.file.as_str());
        assert_eq!(entry.sha256 != other.sha256, spatial, "{}", entry.file);
    }
}
