//! Dataset files: manifest, annotations, facial feature CSVs and model predictions.
//!
//! A dataset is a JSON manifest listing videos. Each video points at an
//! annotation JSON and optionally a feature CSV and a predictions JSON, all
//! relative to the manifest's directory. Context-only annotations describe the
//! game outcome rather than the clip, so they may be given once per outcome in
//! the manifest's `context_only` table and are fanned out to every video with
//! that outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{CategoricalDistribution, EmotionError, RatingSet, Task, CANONICAL_RATING_COUNT};

/// Names of the 12 action-unit channels, in file order.
pub const AU_CHANNELS: [&str; 12] = [
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU14", "AU15", "AU17", "AU25", "AU26",
];

/// Exact header of a per-video feature CSV.
pub const FEATURE_CSV_HEADER: [&str; 22] = [
    "timestamp", "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU14", "AU15", "AU17",
    "AU25", "AU26", "gaze_x", "gaze_y", "gaze_z", "gaze_angle_x", "gaze_angle_y", "head_x",
    "head_y", "head_z", "flow_mag",
];

/// Default number of frames sampled from a clip for visual prompting.
pub const DEFAULT_FRAME_SAMPLES: usize = 4;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {detail}")]
    SchemaViolation { file: PathBuf, detail: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("duplicate video id `{0}`")]
    DuplicateVideoId(String),
    #[error("cannot sample {k} frames from a clip of {total} frames")]
    KTooLarge { total: usize, k: usize },
    #[error("frame count and sample count must be positive")]
    ZeroFrames,
    #[error("invalid feature series: {0}")]
    InvalidFeatures(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn schema(file: &Path, detail: impl fmt::Display) -> Self {
        IngestError::SchemaViolation {
            file: file.to_path_buf(),
            detail: detail.to_string(),
        }
    }

    /// The file the error is about, when there is one.
    pub fn file(&self) -> Option<&Path> {
        match self {
            IngestError::SchemaViolation { file, .. } => Some(file),
            IngestError::MissingFile(p) | IngestError::Io { path: p, .. } => Some(p),
            _ => None,
        }
    }
}

/// Prisoner's-dilemma joint outcome; first letter is the target player's choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointOutcome {
    CC,
    CD,
    DC,
    DD,
}

impl JointOutcome {
    pub const ALL: [JointOutcome; 4] = [
        JointOutcome::CC,
        JointOutcome::CD,
        JointOutcome::DC,
        JointOutcome::DD,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JointOutcome::CC => "CC",
            JointOutcome::CD => "CD",
            JointOutcome::DC => "DC",
            JointOutcome::DD => "DD",
        }
    }

    /// Whether the target player cooperated.
    pub fn player_cooperated(self) -> bool {
        matches!(self, JointOutcome::CC | JointOutcome::CD)
    }

    pub fn partner_cooperated(self) -> bool {
        matches!(self, JointOutcome::CC | JointOutcome::DC)
    }
}

impl fmt::Display for JointOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JointOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CC" => Ok(JointOutcome::CC),
            "CD" => Ok(JointOutcome::CD),
            "DC" => Ok(JointOutcome::DC),
            "DD" => Ok(JointOutcome::DD),
            other => Err(format!("unknown joint outcome `{other}`")),
        }
    }
}

/// Annotation condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Face video only.
    ContextFree,
    /// Game description and outcome only.
    ContextOnly,
    /// Both.
    ContextBased,
}

impl Condition {
    pub const ALL: [Condition; 3] = [
        Condition::ContextFree,
        Condition::ContextOnly,
        Condition::ContextBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::ContextFree => "context_free",
            Condition::ContextOnly => "context_only",
            Condition::ContextBased => "context_based",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of a feature CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub timestamp: f64,
    pub au: [f64; 12],
    pub gaze: [f64; 3],
    pub gaze_angle: [f64; 2],
    pub head: [f64; 3],
    pub flow_mag: f64,
}

impl Frame {
    fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(FEATURE_CSV_HEADER.len());
        row.push(self.timestamp);
        row.extend_from_slice(&self.au);
        row.extend_from_slice(&self.gaze);
        row.extend_from_slice(&self.gaze_angle);
        row.extend_from_slice(&self.head);
        row.push(self.flow_mag);
        row
    }

    fn from_row(row: &[f64]) -> Self {
        let mut au = [0.0; 12];
        au.copy_from_slice(&row[1..13]);
        Frame {
            timestamp: row[0],
            au,
            gaze: [row[13], row[14], row[15]],
            gaze_angle: [row[16], row[17]],
            head: [row[18], row[19], row[20]],
            flow_mag: row[21],
        }
    }
}

/// Per-frame facial features of one clip.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureTimeSeries {
    frames: Vec<Frame>,
}

impl FeatureTimeSeries {
    pub fn new(frames: Vec<Frame>) -> Result<Self, IngestError> {
        if frames.len() < 2 {
            return Err(IngestError::InvalidFeatures(format!(
                "need at least 2 frames, got {}",
                frames.len()
            )));
        }
        for (i, frame) in frames.iter().enumerate() {
            let values = frame.to_row();
            if let Some(j) = values.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::InvalidFeatures(format!(
                    "frame {i}: {} is not finite",
                    FEATURE_CSV_HEADER[j]
                )));
            }
            if let Some(j) = frame.au.iter().position(|&v| v < 0.0) {
                return Err(IngestError::InvalidFeatures(format!(
                    "frame {i}: {} intensity {} is negative",
                    AU_CHANNELS[j], frame.au[j]
                )));
            }
            if frame.flow_mag < 0.0 {
                return Err(IngestError::InvalidFeatures(format!(
                    "frame {i}: flow_mag {} is negative",
                    frame.flow_mag
                )));
            }
            if i > 0 && frame.timestamp <= frames[i - 1].timestamp {
                return Err(IngestError::InvalidFeatures(format!(
                    "frame {i}: timestamp {} not after {}",
                    frame.timestamp,
                    frames[i - 1].timestamp
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn read_csv<R: Read>(reader: R, file: &Path) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| IngestError::schema(file, format!("line 1: {e}")))?;
        if !header.iter().map(str::trim).eq(FEATURE_CSV_HEADER) {
            return Err(IngestError::schema(
                file,
                format!(
                    "line 1: header must be `{}`",
                    FEATURE_CSV_HEADER.join(",")
                ),
            ));
        }
        let mut frames = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| IngestError::schema(file, format!("line {line}: {e}")))?;
            let row = record
                .iter()
                .enumerate()
                .map(|(j, field)| {
                    field.trim().parse::<f64>().map_err(|_| {
                        IngestError::schema(
                            file,
                            format!("line {line}, field {}: `{field}` is not a number", FEATURE_CSV_HEADER[j]),
                        )
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let frame = Frame::from_row(&row);
            if let Some(j) = frame.au.iter().position(|&v| v < 0.0) {
                return Err(IngestError::schema(
                    file,
                    format!("line {line}, field {}: negative AU intensity {}", AU_CHANNELS[j], frame.au[j]),
                ));
            }
            frames.push(frame);
        }
        FeatureTimeSeries::new(frames).map_err(|e| IngestError::schema(file, e))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(FEATURE_CSV_HEADER)?;
        for frame in &self.frames {
            wtr.write_record(frame.to_row().iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One reaction clip with everything known about it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub outcome: JointOutcome,
    #[serde(serialize_with = "serialize_annotations")]
    pub annotations: BTreeMap<(Condition, Task), RatingSet>,
    pub features: Option<FeatureTimeSeries>,
    pub model_predictions: BTreeMap<String, CategoricalDistribution<f64>>,
    pub human_expressivity: Option<u8>,
}

fn serialize_annotations<S: serde::Serializer>(
    annotations: &BTreeMap<(Condition, Task), RatingSet>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    let file = AnnotationFile::from_sets(annotations);
    file.serialize(serializer)
}

impl VideoRecord {
    pub fn ratings(&self, condition: Condition, task: Task) -> Option<&RatingSet> {
        self.annotations.get(&(condition, task))
    }

    /// Empirical distribution of one annotation condition.
    pub fn distribution(
        &self,
        condition: Condition,
        task: Task,
    ) -> Option<Result<CategoricalDistribution<f64>, EmotionError>> {
        self.ratings(condition, task)
            .map(CategoricalDistribution::from_ratings)
    }
}

/// Non-fatal observation made while loading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadWarning {
    pub video_id: String,
    pub message: String,
}

/// Records plus the warnings emitted while loading them.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub records: Vec<VideoRecord>,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
    /// Outcome-level context-only annotations: outcome → annotation task file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context_only: BTreeMap<JointOutcome, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub outcome: JointOutcome,
    pub annotations: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_expressivity: Option<i64>,
}

/// Ratings for both tasks under one condition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRatings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basic_emotion: Option<Vec<String>>,
}

impl TaskRatings {
    fn from_sets(valence: Option<&RatingSet>, basic: Option<&RatingSet>) -> Self {
        TaskRatings {
            valence: valence.map(|s| s.indices().iter().map(|&i| i as i64 + 1).collect()),
            basic_emotion: basic.map(|s| s.labels().map(str::to_string).collect()),
        }
    }

    fn into_sets(self, file: &Path, condition: &str) -> Result<Vec<(Task, RatingSet)>, IngestError> {
        let mut out = Vec::new();
        if let Some(points) = self.valence {
            let set = RatingSet::from_likert(&points)
                .map_err(|e| IngestError::schema(file, format!("{condition}.valence: {e}")))?;
            out.push((Task::Valence, set));
        }
        if let Some(labels) = self.basic_emotion {
            let set = RatingSet::from_labels(Task::BasicEmotion.space(), &labels)
                .map_err(|e| IngestError::schema(file, format!("{condition}.basic_emotion: {e}")))?;
            out.push((Task::BasicEmotion, set));
        }
        Ok(out)
    }
}

/// Per-video annotation file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_free: Option<TaskRatings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_only: Option<TaskRatings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_based: Option<TaskRatings>,
}

impl AnnotationFile {
    pub fn from_sets(sets: &BTreeMap<(Condition, Task), RatingSet>) -> Self {
        let pick = |c: Condition| {
            let v = sets.get(&(c, Task::Valence));
            let b = sets.get(&(c, Task::BasicEmotion));
            (v.is_some() || b.is_some()).then(|| TaskRatings::from_sets(v, b))
        };
        AnnotationFile {
            context_free: pick(Condition::ContextFree),
            context_only: pick(Condition::ContextOnly),
            context_based: pick(Condition::ContextBased),
        }
    }
}

fn read_file(path: &Path) -> Result<String, IngestError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(IngestError::MissingFile(path.to_path_buf()))
        }
        Err(source) => Err(IngestError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IngestError> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| {
        IngestError::schema(path, format!("line {}, column {}: {e}", e.line(), e.column()))
    })
}

/// Loads and validates a dataset from its manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, IngestError> {
    let manifest: Manifest = parse_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut shared_context = BTreeMap::new();
    for (outcome, rel) in &manifest.context_only {
        let path = base.join(rel);
        let ratings: TaskRatings = parse_json(&path)?;
        shared_context.insert(*outcome, ratings.into_sets(&path, "context_only")?);
    }

    let mut seen = BTreeSet::new();
    let mut dataset = Dataset::default();
    for entry in manifest.videos {
        if !seen.insert(entry.id.clone()) {
            return Err(IngestError::DuplicateVideoId(entry.id));
        }
        let record = load_entry(base, manifest_path, &entry, &shared_context, &mut dataset.warnings)?;
        dataset.records.push(record);
    }
    Ok(dataset)
}

fn load_entry(
    base: &Path,
    manifest_path: &Path,
    entry: &ManifestEntry,
    shared_context: &BTreeMap<JointOutcome, Vec<(Task, RatingSet)>>,
    warnings: &mut Vec<LoadWarning>,
) -> Result<VideoRecord, IngestError> {
    let ann_path = base.join(&entry.annotations);
    let file: AnnotationFile = parse_json(&ann_path)?;

    let mut annotations = BTreeMap::new();
    if let Some(shared) = shared_context.get(&entry.outcome) {
        for (task, set) in shared {
            annotations.insert((Condition::ContextOnly, *task), set.clone());
        }
    }
    let conditions = [
        (Condition::ContextFree, file.context_free),
        (Condition::ContextOnly, file.context_only),
        (Condition::ContextBased, file.context_based),
    ];
    for (condition, ratings) in conditions {
        if let Some(ratings) = ratings {
            for (task, set) in ratings.into_sets(&ann_path, condition.as_str())? {
                annotations.insert((condition, task), set);
            }
        }
    }
    for ((condition, task), set) in &annotations {
        if set.is_empty() {
            return Err(IngestError::schema(
                &ann_path,
                format!("{condition}.{task}: rating list is empty"),
            ));
        }
        if set.len() != CANONICAL_RATING_COUNT {
            let message = format!(
                "expected {CANONICAL_RATING_COUNT} ratings, found {} ({condition}/{task})",
                set.len()
            );
            tracing::warn!(video_id = %entry.id, "{message}");
            warnings.push(LoadWarning {
                video_id: entry.id.clone(),
                message,
            });
        }
    }

    let features = match &entry.features {
        Some(rel) => {
            let path = base.join(rel);
            let text = read_file(&path)?;
            Some(FeatureTimeSeries::read_csv(text.as_bytes(), &path)?)
        }
        None => None,
    };

    let model_predictions = match &entry.predictions {
        Some(rel) => parse_json(&base.join(rel))?,
        None => BTreeMap::new(),
    };

    let human_expressivity = match entry.human_expressivity {
        Some(h) if (1..=7).contains(&h) => Some(h as u8),
        Some(h) => {
            return Err(IngestError::schema(
                manifest_path,
                format!("video `{}`: human_expressivity {h} outside 1..=7", entry.id),
            ))
        }
        None => None,
    };

    Ok(VideoRecord {
        video_id: entry.id.clone(),
        outcome: entry.outcome,
        annotations,
        features,
        model_predictions,
        human_expressivity,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| IngestError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Writes records as a loadable dataset under `dir` and returns the manifest path.
///
/// Context-only ratings that are identical across all videos of an outcome are
/// written once per outcome; anything else stays in the per-video file.
pub fn write_dataset(dir: &Path, records: &[VideoRecord]) -> Result<PathBuf, IngestError> {
    let mut shared: BTreeMap<JointOutcome, BTreeMap<Task, Option<&RatingSet>>> = BTreeMap::new();
    for record in records {
        let per_task = shared.entry(record.outcome).or_default();
        for task in Task::ALL {
            let set = record.ratings(Condition::ContextOnly, task);
            per_task
                .entry(task)
                .and_modify(|s| {
                    if *s != set {
                        *s = None;
                    }
                })
                .or_insert(set);
        }
    }

    let mut manifest = Manifest::default();
    for (outcome, per_task) in &shared {
        let v = per_task.get(&Task::Valence).copied().flatten();
        let b = per_task.get(&Task::BasicEmotion).copied().flatten();
        if v.is_none() && b.is_none() {
            continue;
        }
        let rel = format!("context_only/{outcome}.json");
        write_file(&dir.join(&rel), &to_json(&TaskRatings::from_sets(v, b)))?;
        manifest.context_only.insert(*outcome, rel);
    }

    for record in records {
        let mut sets = record.annotations.clone();
        if let Some(per_task) = shared.get(&record.outcome) {
            for (task, s) in per_task {
                if s.is_some() {
                    sets.remove(&(Condition::ContextOnly, *task));
                }
            }
        }
        let ann_rel = format!("annotations/{}.json", record.video_id);
        write_file(&dir.join(&ann_rel), &to_json(&AnnotationFile::from_sets(&sets)))?;

        let features = match &record.features {
            Some(series) => {
                let rel = format!("features/{}.csv", record.video_id);
                let mut buf = Vec::new();
                series
                    .write_csv(&mut buf)
                    .map_err(|e| IngestError::schema(&dir.join(&rel), e))?;
                write_file(&dir.join(&rel), &buf)?;
                Some(rel)
            }
            None => None,
        };
        let predictions = if record.model_predictions.is_empty() {
            None
        } else {
            let rel = format!("predictions/{}.json", record.video_id);
            write_file(&dir.join(&rel), &to_json(&record.model_predictions))?;
            Some(rel)
        };
        manifest.videos.push(ManifestEntry {
            id: record.video_id.clone(),
            outcome: record.outcome,
            annotations: ann_rel,
            features,
            predictions,
            human_expressivity: record.human_expressivity.map(i64::from),
        });
    }

    let manifest_path = dir.join("manifest.json");
    write_file(&manifest_path, &to_json(&manifest))?;
    Ok(manifest_path)
}

/// Canonical byte serialization of records, used for determinism checks.
pub fn canonical_bytes(records: &[VideoRecord]) -> Vec<u8> {
    serde_json::to_vec(records).expect("serializable")
}

/// Centered uniform frame sampling: index `i` is `floor((i + 0.5) · total / k)`.
pub fn frame_indices(total_frames: usize, k: usize) -> Result<Vec<usize>, IngestError> {
    if total_frames == 0 || k == 0 {
        return Err(IngestError::ZeroFrames);
    }
    if k > total_frames {
        return Err(IngestError::KTooLarge {
            total: total_frames,
            k,
        });
    }
    Ok((0..k)
        .map(|i| (((2 * i + 1) * total_frames) / (2 * k)).min(total_frames - 1))
        .collect())
}
