//! Salience-adjusted Bayesian cue integration for context-aware emotion
//! recognition.
//!
//! Face-only and context-only categorical judgments are fused into a
//! context-based prediction. The face cue is weighted by an expressivity score
//! computed from facial feature time series. The crate also carries the
//! evaluation metrics, the face/situation closeness analysis and a synthetic
//! data generator for parameter-recovery experiments.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); counting and
//! normalization additionally accept exact rationals via [`Probability`].
//! The aliases below fix the scalar to `f64`, which is what the file formats
//! and the CLI use.

pub mod emotion;
pub mod expressivity;
pub mod fusion;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub use emotion::{
    discretize_valence, expected_valence, CategoricalDistribution, EmotionError, LabelSpace,
    RatingSet, Task,
};
pub use expressivity::{ExpressivityError, Tertile, WeightCalibration};
pub use fusion::{bci, salience_bci, FusionConfig, FusionError, FusionPath, PriorSpec};
pub use ingest::{Condition, IngestError, JointOutcome, VideoRecord};
pub use metrics::{ClosenessMetric, EvaluationReport, MetricsError, PearsonMode};
pub use scalar::{Probability, Scalar, DEFAULT_EPSILON};

/// Distribution over `f64` probabilities.
pub type Distribution = CategoricalDistribution<f64>;
/// Exact distribution over rational probabilities.
pub type ExactDistribution = CategoricalDistribution<num_rational::Ratio<i64>>;
pub type ChannelSummary = expressivity::ChannelSummary<f64>;
pub type ExpressivityScore = expressivity::ExpressivityScore<f64>;
pub type Fuser = fusion::Fuser<f64>;
pub type ClosenessInput = metrics::ClosenessInput<f64>;
