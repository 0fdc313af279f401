mod common;

use common::*;
use layout_prior::ingest::{load_coco, load_native, save_native};
use layout_prior::rescore::LogitsSidecar;
use layout_prior::synth::GeneratorSpec;
use layout_prior::{CoOccurrenceGraphSet, Matrix};

const NATIVE_FIXTURES: [&str; 4] = [
    "native_small.json",
    "hand_trace.json",
    "eval_gt.json",
    "eval_dets.json",
];

#[test]
fn native_corpora_survive_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    for name in NATIVE_FIXTURES {
        let corpus = load_native(&fixture(name)).unwrap();
        for ext in ["json", "json.gz"] {
            let path = dir.path().join(format!("{name}.{ext}"));
            save_native(&corpus, &path).unwrap();
            assert_eq!(load_native(&path).unwrap(), corpus, "{name} as {ext}");
        }
    }
}

#[test]
fn native_golden_bytes_are_reproduced() {
    let corpus = load_native(&fixture("native_small.json")).unwrap();
    let golden = std::fs::read_to_string(fixture("native_small.json")).unwrap();
    assert_eq!(corpus.to_native_string().unwrap(), golden);
}

#[test]
fn graph_file_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let graphs = CoOccurrenceGraphSet::load(&fixture("hand_trace_graphs.json")).unwrap();
    for ext in ["json", "json.gz"] {
        let path = dir.path().join(format!("g.{ext}"));
        graphs.save(&path).unwrap();
        assert_eq!(CoOccurrenceGraphSet::load(&path).unwrap(), graphs);
    }
    let golden = std::fs::read_to_string(fixture("hand_trace_graphs.json")).unwrap();
    assert_eq!(graphs.to_json_string().unwrap(), golden);
}

#[test]
fn graph_file_version_is_checked() {
    let text = std::fs::read_to_string(fixture("hand_trace_graphs.json")).unwrap();
    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert!(CoOccurrenceGraphSet::from_json_str(&bumped).is_err());
}

#[test]
fn matrix_file_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let m = Matrix::load(&fixture("small.mtx.json")).unwrap();
    assert_eq!(m.shape(), (2, 3));
    for ext in ["json", "json.gz"] {
        let path = dir.path().join(format!("m.mtx.{ext}"));
        m.save(&path).unwrap();
        assert_eq!(Matrix::load(&path).unwrap(), m);
    }
}

#[test]
fn coco_import_then_native_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let coco = load_coco(
        &fixture("coco_images.json"),
        &fixture("coco_annotations.json"),
    )
    .unwrap();
    assert_eq!(coco.len(), 2);
    assert_eq!(coco.n_components(), 3);
    assert_eq!(
        coco.vocabulary.names(),
        &["Icon".to_string(), "Text".to_string()]
    );
    assert_eq!(coco.layouts[0].id, "3");
    let path = dir.path().join("coco.json");
    save_native(&coco, &path).unwrap();
    assert_eq!(load_native(&path).unwrap(), coco);
}

#[test]
fn sidecar_and_generator_spec_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut sidecar = LogitsSidecar::default();
    sidecar.0.insert(
        "a".into(),
        Matrix::load(&fixture("small.mtx.json")).unwrap(),
    );
    let path = dir.path().join("logits.json.gz");
    sidecar.save(&path).unwrap();
    assert_eq!(LogitsSidecar::load(&path).unwrap(), sidecar);

    let spec = GeneratorSpec::two_band_demo(42);
    let path = dir.path().join("spec.json");
    spec.save(&path).unwrap();
    assert_eq!(GeneratorSpec::load(&path).unwrap(), spec);
}
