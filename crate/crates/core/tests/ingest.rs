use std::fs;
use std::path::Path;

use cuefuse_core::ingest::{canonical_bytes, load_dataset, write_dataset, IngestError};
use cuefuse_core::synth::{generate, SynthConfig};
use cuefuse_core::{Condition, JointOutcome, Task};
use serde_json::json;

fn write(dir: &Path, rel: &str, value: &serde_json::Value) {
    let path = dir.join(rel);
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

fn likert(n: usize) -> Vec<i64> {
    (0..n).map(|i| (i % 5) as i64 + 1).collect()
}

fn small_fixture(dir: &Path, context_based_count: usize) {
    write(
        dir,
        "manifest.json",
        &json!({
            "videos": [
                {"id": "a", "outcome": "CD", "annotations": "ann/a.json", "human_expressivity": 5},
                {"id": "b", "outcome": "CD", "annotations": "ann/b.json"}
            ],
            "context_only": {"CD": "shared_cd.json"}
        }),
    );
    write(dir, "shared_cd.json", &json!({"valence": likert(20)}));
    for id in ["a", "b"] {
        write(
            dir,
            &format!("ann/{id}.json"),
            &json!({
                "context_free": {"valence": likert(20), "basic_emotion": vec!["joy"; 20]},
                "context_based": {"valence": likert(context_based_count)}
            }),
        );
    }
}

#[test]
fn short_rating_list_loads_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path(), 19);
    let data = load_dataset(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(data.records.len(), 2);
    assert_eq!(data.warnings.len(), 2);
    assert!(data.warnings[0].message.contains("found 19"));
    let rs = data.records[0].ratings(Condition::ContextBased, Task::Valence).unwrap();
    assert_eq!(rs.len(), 19);
}

#[test]
fn outcome_level_context_ratings_are_shared() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path(), 20);
    let data = load_dataset(&dir.path().join("manifest.json")).unwrap();
    assert!(data.warnings.is_empty());
    let a = data.records[0].ratings(Condition::ContextOnly, Task::Valence).unwrap();
    let b = data.records[1].ratings(Condition::ContextOnly, Task::Valence).unwrap();
    assert_eq!(a, b);
    assert_eq!(data.records[0].outcome, JointOutcome::CD);
    assert_eq!(data.records[0].human_expressivity, Some(5));
    assert_eq!(data.records[1].human_expressivity, None);
}

#[test]
fn empty_rating_list_is_a_schema_violation_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path(), 0);
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(matches!(err, IngestError::SchemaViolation { .. }));
    assert!(err.file().unwrap().ends_with("ann/a.json"), "{err}");
}

#[test]
fn out_of_range_likert_point_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path(), 20);
    write(dir.path(), "shared_cd.json", &json!({"valence": [0, 3, 4]}));
    let err = load_dataset(&dir.path().join("manifest.json")).unwrap_err();
    assert!(err.file().unwrap().ends_with("shared_cd.json"), "{err}");
}

#[test]
fn missing_annotation_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path(), 20);
    fs::remove_file(dir.path().join("ann/b.json")).unwrap();
    match load_dataset(&dir.path().join("manifest.json")) {
        Err(IngestError::MissingFile(p)) => assert!(p.ends_with("ann/b.json")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_fixture(dir.path(), 20);
    write(
        dir.path(),
        "manifest.json",
        &json!({"videos": [
            {"id": "a", "outcome": "CC", "annotations": "ann/a.json"},
            {"id": "a", "outcome": "CC", "annotations": "ann/b.json"}
        ]}),
    );
    assert!(matches!(
        load_dataset(&dir.path().join("manifest.json")),
        Err(IngestError::DuplicateVideoId(id)) if id == "a"
    ));
}

#[test]
fn bad_feature_value_names_file_and_line() {
    let data = generate(&SynthConfig {
        n_videos: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &data.records).unwrap();
    let feature = fs::read_dir(dir.path().join("features")).unwrap().next().unwrap().unwrap().path();
    let text = fs::read_to_string(&feature).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[2] = lines[2].replacen(',', ",oops,", 1).replacen(",", "", 1);
    fs::write(&feature, lines.join("\n")).unwrap();
    let err = load_dataset(&manifest).unwrap_err();
    assert_eq!(err.file().unwrap(), feature.as_path());
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn written_dataset_round_trips_without_warnings() {
    let data = generate(&SynthConfig {
        seed: 4,
        n_videos: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &data.records).unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.records.len(), 30);
    assert_eq!(canonical_bytes(&loaded.records), canonical_bytes(&data.records));
}

