//! Dataset-level stages shared by the CLI and the recovery experiment.
//!
//! Per-video work (channel summaries, fusion) runs on the rayon pool; the
//! cohort-level steps (standardization, weight calibration, aggregation) are
//! sequential barriers between them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{CategoricalDistribution, EmotionError, Task};
use crate::expressivity::{
    score_cohort, summarize_channels, ChannelSummary, ExpressivityError, ExpressivityScore,
    WeightCalibration,
};
use crate::fusion::{FusionConfig, FusionError, Fuser};
use crate::ingest::{Condition, JointOutcome, VideoRecord};
use crate::metrics::{
    closeness_analysis, evaluate, ClosenessInput, ClosenessMetric, ClosenessReport, EvalOptions,
    EvaluationReport, MetricsError,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("expressivity: video `{video_id}`: {source}")]
    VideoExpressivity {
        video_id: String,
        #[source]
        source: ExpressivityError,
    },
    #[error("expressivity: {0}")]
    Expressivity(#[from] ExpressivityError),
    #[error("expressivity: video `{0}` has no feature file")]
    MissingFeatures(String),
    #[error("ingest: video `{video_id}` has no {condition}/{task} annotations")]
    MissingAnnotations {
        video_id: String,
        condition: Condition,
        task: Task,
    },
    #[error("ingest: video `{video_id}` has no prediction from model `{model}`")]
    MissingPrediction { video_id: String, model: String },
    #[error("ingest: video `{video_id}`: {source}")]
    Distribution {
        video_id: String,
        #[source]
        source: EmotionError,
    },
    #[error("context: no context distribution for outcome {0}")]
    MissingContext(JointOutcome),
    #[error("fusion: video `{video_id}`: {source}")]
    VideoFusion {
        video_id: String,
        #[source]
        source: FusionError,
    },
    #[error("fusion: {0}")]
    Fusion(#[from] FusionError),
    #[error("fusion: no weight for video `{0}`")]
    MissingWeight(String),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

/// Summaries for every record; fails on the first video without usable features.
pub fn channel_summaries<T: Scalar>(
    records: &[VideoRecord],
) -> Result<Vec<(String, ChannelSummary<T>)>, PipelineError> {
    records
        .par_iter()
        .map(|r| {
            let features = r
                .features
                .as_ref()
                .ok_or_else(|| PipelineError::MissingFeatures(r.video_id.clone()))?;
            let summary = summarize_channels(features).map_err(|source| {
                PipelineError::VideoExpressivity {
                    video_id: r.video_id.clone(),
                    source,
                }
            })?;
            Ok((r.video_id.clone(), summary))
        })
        .collect()
}

/// Channel summaries, standardization, weights and tertiles for a cohort.
pub fn compute_expressivity<T: Scalar>(
    records: &[VideoRecord],
    weight_range: (T, T),
    calibration: WeightCalibration,
) -> Result<Vec<ExpressivityScore<T>>, PipelineError> {
    let summaries = channel_summaries(records)?;
    Ok(score_cohort(&summaries, weight_range, calibration)?)
}

/// Where the face-only cue comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FaceSource {
    /// Context-free human annotations.
    #[default]
    Annotations,
    /// Stored predictions of a named face model.
    Model(String),
}

/// Where the context-only cue comes from.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum ContextSource<T> {
    /// Context-only human annotations.
    #[default]
    Annotations,
    /// One distribution per outcome (for example from a language model).
    PerOutcome(BTreeMap<JointOutcome, CategoricalDistribution<T>>),
}

/// Face, context and truth distributions of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Cues<T> {
    pub video_id: String,
    pub face: CategoricalDistribution<T>,
    pub context: CategoricalDistribution<T>,
    pub truth: CategoricalDistribution<T>,
}

fn annotated<T: Scalar>(
    record: &VideoRecord,
    condition: Condition,
    task: Task,
) -> Result<CategoricalDistribution<T>, PipelineError> {
    let set = record
        .ratings(condition, task)
        .ok_or_else(|| PipelineError::MissingAnnotations {
            video_id: record.video_id.clone(),
            condition,
            task,
        })?;
    CategoricalDistribution::from_ratings(set).map_err(|source| PipelineError::Distribution {
        video_id: record.video_id.clone(),
        source,
    })
}

/// Gathers the cue and truth distributions for every record.
pub fn gather_cues<T: Scalar>(
    records: &[VideoRecord],
    task: Task,
    face: &FaceSource,
    context: &ContextSource<T>,
) -> Result<Vec<Cues<T>>, PipelineError> {
    records
        .iter()
        .map(|r| {
            let face = match face {
                FaceSource::Annotations => annotated(r, Condition::ContextFree, task)?,
                FaceSource::Model(name) => {
                    // `name` may be the full key or a prefix completed by `_<task>`
                    let d = r
                        .model_predictions
                        .get(&format!("{name}_{task}"))
                        .or_else(|| r.model_predictions.get(name))
                        .ok_or_else(|| {
                        PipelineError::MissingPrediction {
                            video_id: r.video_id.clone(),
                            model: name.clone(),
                        }
                    })?;
                    if *d.space() != task.space() {
                        return Err(PipelineError::Distribution {
                            video_id: r.video_id.clone(),
                            source: EmotionError::SpaceMismatch,
                        });
                    }
                    d.cast()
                }
            };
            let context = match context {
                ContextSource::Annotations => annotated(r, Condition::ContextOnly, task)?,
                ContextSource::PerOutcome(map) => map
                    .get(&r.outcome)
                    .cloned()
                    .ok_or(PipelineError::MissingContext(r.outcome))?,
            };
            Ok(Cues {
                video_id: r.video_id.clone(),
                face,
                context,
                truth: annotated(r, Condition::ContextBased, task)?,
            })
        })
        .collect()
}

/// Predictions of both fusion variants, keyed by video id.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedVariants<T> {
    pub without_salience: BTreeMap<String, CategoricalDistribution<T>>,
    pub with_salience: BTreeMap<String, CategoricalDistribution<T>>,
}

pub fn fuse_variants<T: Scalar>(
    cues: &[Cues<T>],
    weights: &BTreeMap<String, T>,
    fuser: &Fuser<T>,
) -> Result<FusedVariants<T>, PipelineError> {
    let fused: Vec<_> = cues
        .par_iter()
        .map(|c| {
            let w = *weights
                .get(&c.video_id)
                .ok_or_else(|| PipelineError::MissingWeight(c.video_id.clone()))?;
            let err = |source| PipelineError::VideoFusion {
                video_id: c.video_id.clone(),
                source,
            };
            let plain = fuser.plain(&c.face, &c.context).map_err(err)?;
            let salient = fuser.salience(&c.face, &c.context, w).map_err(err)?;
            Ok((c.video_id.clone(), plain, salient))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut out = FusedVariants {
        without_salience: BTreeMap::new(),
        with_salience: BTreeMap::new(),
    };
    for (id, plain, salient) in fused {
        out.without_salience.insert(id.clone(), plain);
        out.with_salience.insert(id, salient);
    }
    Ok(out)
}

/// Evaluation of both variants for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub task: Task,
    pub without_salience: EvaluationReport,
    pub with_salience: EvaluationReport,
}

impl VariantComparison {
    /// The task's headline error: MSE for valence, KLD for basic emotion.
    pub fn headline(report: &EvaluationReport) -> f64 {
        match report.task {
            Task::Valence => report.aggregate.mse,
            Task::BasicEmotion => report.aggregate.kld.unwrap_or(f64::NAN),
        }
    }

    pub fn salience_wins(&self) -> bool {
        Self::headline(&self.with_salience) < Self::headline(&self.without_salience)
    }
}

/// Fuses with and without salience and evaluates both against the truths.
#[allow(clippy::too_many_arguments)]
pub fn compare_variants<T: Scalar>(
    records: &[VideoRecord],
    task: Task,
    scores: &[ExpressivityScore<T>],
    fusion: &FusionConfig,
    eval: &EvalOptions,
    face: &FaceSource,
    context: &ContextSource<T>,
    fingerprint: &str,
) -> Result<(VariantComparison, FusedVariants<T>), PipelineError> {
    let cues = gather_cues(records, task, face, context)?;
    let fuser = Fuser::from_config(fusion, task, records)?;
    let weights: BTreeMap<String, T> = scores
        .iter()
        .map(|s| (s.video_id.clone(), s.weight))
        .collect();
    let fused = fuse_variants(&cues, &weights, &fuser)?;
    let truths: BTreeMap<String, CategoricalDistribution<T>> = cues
        .into_iter()
        .map(|c| (c.video_id, c.truth))
        .collect();
    let comparison = VariantComparison {
        task,
        without_salience: evaluate(&fused.without_salience, &truths, task, eval, fingerprint)?,
        with_salience: evaluate(&fused.with_salience, &truths, task, eval, fingerprint)?,
    };
    Ok((comparison, fused))
}

/// Face-closer vs situation-closer proportions per expressivity tertile,
/// using the annotated context-free, context-only and context-based judgments.
pub fn salience_analysis<T: Scalar>(
    records: &[VideoRecord],
    task: Task,
    scores: &[ExpressivityScore<T>],
    metric: ClosenessMetric,
    epsilon: T,
) -> Result<ClosenessReport, PipelineError> {
    let tertiles: BTreeMap<&str, _> = scores
        .iter()
        .map(|s| (s.video_id.as_str(), s.tertile))
        .collect();
    let optional = |r: &VideoRecord, c: Condition| {
        r.distribution(c, task)
            .transpose()
            .map_err(|source| PipelineError::Distribution {
                video_id: r.video_id.clone(),
                source,
            })
    };
    let inputs = records
        .iter()
        .map(|r| {
            let tertile = *tertiles
                .get(r.video_id.as_str())
                .ok_or_else(|| PipelineError::MissingWeight(r.video_id.clone()))?;
            Ok(ClosenessInput {
                video_id: r.video_id.clone(),
                face_only: optional(r, Condition::ContextFree)?.map(|d| d.cast()),
                context_only: optional(r, Condition::ContextOnly)?.map(|d| d.cast()),
                context_based: optional(r, Condition::ContextBased)?.map(|d| d.cast()),
                tertile,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(closeness_analysis(&inputs, metric, epsilon)?)
}
