//! Synthetic cohorts drawn from the salience-adjusted fusion model.
//!
//! Every video gets a face cue, its outcome's context cue and an
//! expressivity score; the context-based judgment is the exact salience
//! fusion of the two cues at the video's true weight. Ratings are then sampled
//! from the three distributions. Expressivity is encoded into feature time
//! series so that the regular scoring path recovers it.
//!
//! Randomness comes from ChaCha8 (`rand_chacha` 0.9) seeded with
//! `seed_from_u64`, one stream per video and per outcome, so results are
//! reproducible across platforms and independent of scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{CategoricalDistribution, LabelSpace, RatingSet, Task};
use crate::expressivity::{ChannelSummary, WeightCalibration};
use crate::fusion::{salience_bci, FusionConfig};
use crate::ingest::{Condition, FeatureTimeSeries, Frame, JointOutcome, VideoRecord};
use crate::metrics::{pearson, EvalOptions};
use crate::pipeline::{
    compare_variants, compute_expressivity, ContextSource, FaceSource, PipelineError,
    VariantComparison,
};

const CONTEXT_STREAM_BASE: u64 = 1 << 40;
const HUMAN_STREAM: u64 = 1 << 41;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// How the true fusion weight depends on expressivity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightLink {
    /// Cohort min-max of the expressivity score mapped onto `weight_range`.
    LinearInExpressivity,
    Constant { w: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub tasks: Vec<Task>,
    pub seed: u64,
    /// Symmetric Dirichlet concentration of the sampled face/context cues.
    pub concentration: f64,
    pub rating_count: usize,
    pub weight_link: WeightLink,
    pub weight_range: (f64, f64),
    /// Probability that a rating is drawn uniformly instead of from its target.
    pub annotation_noise: f64,
    pub frames_per_video: usize,
    /// Number of videos (from the start) that receive a 1..=7 human expressivity rating.
    pub human_rated: usize,
    pub human_correlation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 100,
            tasks: Task::ALL.to_vec(),
            seed: 0,
            concentration: 0.8,
            rating_count: 20,
            weight_link: WeightLink::LinearInExpressivity,
            weight_range: (0.5, 1.0),
            annotation_noise: 0.0,
            frames_per_video: 28,
            human_rated: 24,
            human_correlation: 0.61,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_videos < 3 {
            return bad(format!("n_videos must be at least 3, got {}", self.n_videos));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(format!("concentration must be positive, got {}", self.concentration));
        }
        if !(0.0..=1.0).contains(&self.annotation_noise) {
            return bad(format!("annotation_noise must be in [0, 1], got {}", self.annotation_noise));
        }
        if self.rating_count == 0 {
            return bad("rating_count must be positive".into());
        }
        if self.frames_per_video < 2 {
            return bad("frames_per_video must be at least 2".into());
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        let (lo, hi) = self.weight_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("weight_range ({lo}, {hi}) must satisfy 0 <= low <= high <= 1"));
        }
        if let WeightLink::Constant { w } = self.weight_link {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("constant weight {w} outside [0, 1]"));
            }
        }
        if self.human_rated > self.n_videos {
            return bad("human_rated exceeds n_videos".into());
        }
        if !(-1.0..=1.0).contains(&self.human_correlation) {
            return bad("human_correlation must be in [-1, 1]".into());
        }
        Ok(())
    }
}

/// Exact cue distributions behind one video's ratings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactCues {
    pub face: CategoricalDistribution<f64>,
    pub context: CategoricalDistribution<f64>,
    pub context_based: CategoricalDistribution<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoTruth {
    pub weight: f64,
    /// Latent expressivity in [0, 1].
    pub expressivity: f64,
    pub cues: BTreeMap<Task, ExactCues>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub records: Vec<VideoRecord>,
    pub truth: BTreeMap<String, VideoTruth>,
    /// Correlation between latent expressivity and the emitted human ratings.
    pub realized_human_correlation: Option<f64>,
}

impl SynthDataset {
    /// `video_id → w`, the content of `ground_truth.json`.
    pub fn ground_truth_weights(&self) -> BTreeMap<String, f64> {
        self.truth
            .iter()
            .map(|(id, t)| (id.clone(), t.weight))
            .collect()
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Symmetric Dirichlet draw via normalized gamma variates.
pub fn sample_dirichlet<R: Rng>(rng: &mut R, space: LabelSpace, concentration: f64) -> CategoricalDistribution<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..space.len()).map(|_| gamma.sample(rng)).collect();
        if let Ok(d) = CategoricalDistribution::from_weights(space.clone(), draws) {
            return d;
        }
    }
}

fn sample_label<R: Rng>(rng: &mut R, dist: &CategoricalDistribution<f64>, noise: f64) -> usize {
    let k = dist.len();
    if noise > 0.0 && rng.random::<f64>() < noise {
        return rng.random_range(0..k);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.probs().iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the final cumulative sum
    dist.probs().iter().rposition(|&p| p > 0.0).unwrap_or(k - 1)
}

/// Draws `n` ratings from `dist`, each replaced by a uniform label with probability `noise`.
pub fn sample_ratings<R: Rng>(
    rng: &mut R,
    dist: &CategoricalDistribution<f64>,
    n: usize,
    noise: f64,
) -> RatingSet {
    let ratings = (0..n).map(|_| sample_label(rng, dist, noise)).collect();
    RatingSet::from_indices(dist.space().clone(), ratings).expect("indices in range")
}

/// Deterministic channel summaries that are increasing affine functions of
/// the latent expressivity.
pub fn channel_summary_for(expressivity: f64) -> ChannelSummary<f64> {
    ChannelSummary {
        au_activity: 0.05 + 0.6 * expressivity,
        gaze_movement: 0.002 + 0.03 * expressivity,
        head_movement: 0.001 + 0.02 * expressivity,
        flow_activity: 0.1 + 1.5 * expressivity,
    }
}

/// A feature series whose channel summaries equal `summary` (up to rounding).
pub fn features_for(summary: &ChannelSummary<f64>, frames: usize) -> FeatureTimeSeries {
    let dt = 7.0 / frames as f64;
    let series = (0..frames)
        .map(|i| {
            // AU intensities oscillate around the target with zero net deviation
            // over each pair of frames
            let swing = if frames % 2 == 0 && i % 2 == 1 { -0.5 } else if frames % 2 == 0 { 0.5 } else { 0.0 };
            let au_value = summary.au_activity * (1.0 + swing);
            let step = (i % 2) as f64;
            Frame {
                timestamp: i as f64 * dt,
                au: [au_value; 12],
                gaze: [0.05 + step * summary.gaze_movement, -0.1, -0.99],
                gaze_angle: [0.05, -0.1],
                head: [0.02 + step * summary.head_movement, 0.01, 0.99],
                flow_mag: summary.flow_activity,
            }
        })
        .collect();
    FeatureTimeSeries::new(series).expect("constructed series is valid")
}

/// Integer ratings on 1..=7 whose latent continuous version has correlation
/// exactly `target` with `scores` (discretization then shifts it slightly).
pub fn correlated_ratings<R: Rng>(rng: &mut R, scores: &[f64], target: f64) -> Vec<i64> {
    let n = scores.len() as f64;
    let standardize = |v: &mut Vec<f64>| {
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        for x in v.iter_mut() {
            *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
        }
    };
    let mut z = scores.to_vec();
    standardize(&mut z);
    let mut e: Vec<f64> = scores.iter().map(|_| rng.sample(StandardNormal)).collect();
    standardize(&mut e);
    // remove the component of the noise along z
    let dot = z.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / n;
    for (ei, zi) in e.iter_mut().zip(&z) {
        *ei -= dot * zi;
    }
    standardize(&mut e);
    let residual = (1.0 - target * target).max(0.0).sqrt();
    z.iter()
        .zip(&e)
        .map(|(zi, ei)| {
            let latent = target * zi + residual * ei;
            (4.0 + 1.5 * latent).round().clamp(1.0, 7.0) as i64
        })
        .collect()
}

/// Name of the synthetic face model stored in each record's predictions.
pub fn synthetic_face_model(task: Task) -> String {
    format!("synth_face_{task}")
}

/// Generates a cohort and its ground truth.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let n = config.n_videos;
    let width = (n.saturating_sub(1)).to_string().len().max(3);
    let ids: Vec<String> = (0..n).map(|i| format!("vid{i:0width$}")).collect();

    // context cues and context-only ratings belong to the outcome
    let mut contexts: BTreeMap<(JointOutcome, Task), (CategoricalDistribution<f64>, RatingSet)> =
        BTreeMap::new();
    for (k, outcome) in JointOutcome::ALL.into_iter().enumerate() {
        let mut rng = stream(config.seed, CONTEXT_STREAM_BASE + k as u64);
        for &task in &config.tasks {
            let dist = sample_dirichlet(&mut rng, task.space(), config.concentration);
            let ratings = sample_ratings(&mut rng, &dist, config.rating_count, config.annotation_noise);
            contexts.insert((outcome, task), (dist, ratings));
        }
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| stream(config.seed, i as u64)).collect();
    let expressivity: Vec<f64> = rngs.iter_mut().map(|rng| rng.random::<f64>()).collect();
    let weights: Vec<f64> = match config.weight_link {
        WeightLink::Constant { w } => vec![w; n],
        WeightLink::LinearInExpressivity => crate::expressivity::map_weight_calibrated(
            &expressivity,
            config.weight_range,
            WeightCalibration::Batch,
        )
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?,
    };

    let human: Vec<i64> = if config.human_rated >= 3 {
        let mut rng = stream(config.seed, HUMAN_STREAM);
        correlated_ratings(&mut rng, &expressivity[..config.human_rated], config.human_correlation)
    } else {
        Vec::new()
    };
    let realized_human_correlation = if human.len() >= 3 {
        let h: Vec<f64> = human.iter().map(|&x| x as f64).collect();
        pearson(&expressivity[..human.len()], &h).ok()
    } else {
        None
    };

    let mut records = Vec::with_capacity(n);
    let mut truth = BTreeMap::new();
    for (i, rng) in rngs.iter_mut().enumerate() {
        let outcome = JointOutcome::ALL[i % 4];
        let w = weights[i];
        let mut annotations = BTreeMap::new();
        let mut model_predictions = BTreeMap::new();
        let mut cues = BTreeMap::new();
        for &task in &config.tasks {
            let space = task.space();
            let face = sample_dirichlet(rng, space.clone(), config.concentration);
            let (context, context_ratings) = &contexts[&(outcome, task)];
            let uniform = CategoricalDistribution::uniform(space.clone());
            let context_based = salience_bci(&face, context, &uniform, w, 0.0)
                .map_err(|e| SynthError::InvalidConfig(format!("fusion failed: {e}")))?;
            let noise = config.annotation_noise;
            annotations.insert(
                (Condition::ContextFree, task),
                sample_ratings(rng, &face, config.rating_count, noise),
            );
            annotations.insert((Condition::ContextOnly, task), context_ratings.clone());
            annotations.insert(
                (Condition::ContextBased, task),
                sample_ratings(rng, &context_based, config.rating_count, noise),
            );
            // a face model: the true face cue blended with an unrelated draw
            let distractor = sample_dirichlet(rng, space.clone(), config.concentration);
            let blended: Vec<f64> = face
                .probs()
                .iter()
                .zip(distractor.probs())
                .map(|(a, b)| 0.7 * a + 0.3 * b)
                .collect();
            model_predictions.insert(
                synthetic_face_model(task),
                CategoricalDistribution::from_weights(space, blended).expect("positive mass"),
            );
            cues.insert(
                task,
                ExactCues {
                    face,
                    context: context.clone(),
                    context_based,
                },
            );
        }
        let summary = channel_summary_for(expressivity[i]);
        records.push(VideoRecord {
            video_id: ids[i].clone(),
            outcome,
            annotations,
            features: Some(features_for(&summary, config.frames_per_video)),
            model_predictions,
            human_expressivity: human.get(i).map(|&h| h as u8),
        });
        truth.insert(
            ids[i].clone(),
            VideoTruth {
                weight: w,
                expressivity: expressivity[i],
                cues,
            },
        );
    }
    Ok(SynthDataset {
        records,
        truth,
        realized_human_correlation,
    })
}

/// Plain vs salience-adjusted fusion on one synthetic cohort.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub seed: u64,
    pub config: SynthConfig,
    /// Largest |estimated w - true w| over the cohort.
    pub max_weight_error: f64,
    pub comparisons: Vec<VariantComparison>,
}

impl RecoveryReport {
    pub fn comparison(&self, task: Task) -> Option<&VariantComparison> {
        self.comparisons.iter().find(|c| c.task == task)
    }
}

/// Generates a cohort, estimates weights through the expressivity pipeline,
/// and evaluates both fusion rules against the sampled context-based ratings.
pub fn recovery_experiment(
    config: &SynthConfig,
    fusion: &FusionConfig,
    eval: &EvalOptions,
) -> Result<RecoveryReport, SynthError> {
    let data = generate(config)?;
    let scores = compute_expressivity::<f64>(&data.records, fusion.weight_range, WeightCalibration::Batch)?;
    let max_weight_error = scores
        .iter()
        .map(|s| (s.weight - data.truth[&s.video_id].weight).abs())
        .fold(0.0, f64::max);
    let fingerprint = crate::metrics::config_fingerprint(&(config, fusion, eval));
    let comparisons = config
        .tasks
        .iter()
        .map(|&task| {
            compare_variants(
                &data.records,
                task,
                &scores,
                fusion,
                eval,
                &FaceSource::Annotations,
                &ContextSource::Annotations,
                &fingerprint,
            )
            .map(|(c, _)| c)
        })
        .collect::<Result<_, _>>()?;
    Ok(RecoveryReport {
        seed: config.seed,
        config: config.clone(),
        max_weight_error,
        comparisons,
    })
}
