//! Label spaces, categorical distributions and rating sets.
//!
//! Every probability vector in the crate is a [`CategoricalDistribution`]
//! tied to a [`LabelSpace`]. Distributions are normalized on construction
//! and immutable afterwards.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Probability, Scalar};

/// Basic emotion labels in canonical (alphabetical) order.
pub const BASIC_EMOTIONS: [&str; 7] = [
    "anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise",
];

/// Valence bins, one per point of the 5-point Likert scale.
pub const VALENCE_BINS: [&str; 5] = ["v1", "v2", "v3", "v4", "v5"];

/// Number of ratings collected per video and condition in the reference corpus.
pub const CANONICAL_RATING_COUNT: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmotionError {
    #[error("label space must contain at least one label")]
    EmptyLabelSpace,
    #[error("duplicate label `{0}` in label space")]
    DuplicateLabel(String),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("weight at index {index} is negative")]
    NegativeWeight { index: usize },
    #[error("weight at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("weights sum to zero")]
    ZeroMass,
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("rating set is empty")]
    EmptyRatings,
    #[error("label `{0}` is not part of the label space")]
    UnknownLabel(String),
    #[error("valence rating {0} is outside the 1..=5 scale")]
    OutOfScale(i64),
    #[error("distribution is not over the valence space")]
    WrongSpace,
    #[error("distributions are over different label spaces")]
    SpaceMismatch,
}

/// Ordered, duplicate-free set of label identifiers.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelSpace {
    labels: Arc<[String]>,
}

impl LabelSpace {
    pub fn new<I, S>(labels: I) -> Result<Self, EmotionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(EmotionError::EmptyLabelSpace);
        }
        for (i, label) in labels.iter().enumerate() {
            if labels[..i].contains(label) {
                return Err(EmotionError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self {
            labels: labels.into(),
        })
    }

    pub fn basic_emotions() -> Self {
        Self::new(BASIC_EMOTIONS).expect("static labels are valid")
    }

    pub fn valence() -> Self {
        Self::new(VALENCE_BINS).expect("static labels are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn is_valence(&self) -> bool {
        self.labels.iter().map(String::as_str).eq(VALENCE_BINS)
    }
}

impl fmt::Debug for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.labels.iter()).finish()
    }
}

impl Serialize for LabelSpace {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.labels.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(deserializer)?;
        LabelSpace::new(labels).map_err(serde::de::Error::custom)
    }
}

/// The two recognition tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Valence,
    BasicEmotion,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Valence, Task::BasicEmotion];

    pub fn space(self) -> LabelSpace {
        match self {
            Task::Valence => LabelSpace::valence(),
            Task::BasicEmotion => LabelSpace::basic_emotions(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Valence => "valence",
            Task::BasicEmotion => "basic_emotion",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valence" => Ok(Task::Valence),
            "basic_emotion" | "basic-emotion" => Ok(Task::BasicEmotion),
            other => Err(format!("unknown task `{other}` (expected valence or basic_emotion)")),
        }
    }
}

/// Normalized probability vector over a [`LabelSpace`].
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawDistribution<T>",
    bound(
        serialize = "T: Serialize + Clone",
        deserialize = "T: Deserialize<'de> + Probability"
    )
)]
pub struct CategoricalDistribution<T> {
    space: LabelSpace,
    probs: Vec<T>,
}

#[derive(Deserialize)]
struct RawDistribution<T> {
    space: LabelSpace,
    probs: Vec<T>,
}

impl<T: Probability> TryFrom<RawDistribution<T>> for CategoricalDistribution<T> {
    type Error = EmotionError;

    fn try_from(raw: RawDistribution<T>) -> Result<Self, Self::Error> {
        CategoricalDistribution::from_probs(raw.space, raw.probs)
    }
}

impl<T: fmt::Debug> fmt::Debug for CategoricalDistribution<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for (label, p) in self.space.labels().iter().zip(&self.probs) {
            map.entry(label, p);
        }
        map.finish()
    }
}

impl<T> CategoricalDistribution<T> {
    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }

    pub fn prob(&self, label: &str) -> Option<&T> {
        self.space.index_of(label).map(|i| &self.probs[i])
    }

    pub fn ensure_same_space(&self, other: &Self) -> Result<(), EmotionError> {
        if self.space == other.space {
            Ok(())
        } else {
            Err(EmotionError::SpaceMismatch)
        }
    }
}

impl<T: Probability> CategoricalDistribution<T> {
    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(space: LabelSpace, weights: Vec<T>) -> Result<Self, EmotionError> {
        if weights.len() != space.len() {
            return Err(EmotionError::LengthMismatch {
                expected: space.len(),
                got: weights.len(),
            });
        }
        let mut total = T::zero();
        for (index, w) in weights.iter().enumerate() {
            match w.to_f64() {
                Some(v) if v.is_nan() || v.is_infinite() => {
                    return Err(EmotionError::NonFinite { index })
                }
                _ => {}
            }
            if *w < T::zero() {
                return Err(EmotionError::NegativeWeight { index });
            }
            total = total + w.clone();
        }
        if total == T::zero() {
            return Err(EmotionError::ZeroMass);
        }
        let probs = weights.into_iter().map(|w| w / total.clone()).collect();
        Ok(Self { space, probs })
    }

    /// Wraps an already normalized vector; fails if it does not sum to one.
    pub fn from_probs(space: LabelSpace, probs: Vec<T>) -> Result<Self, EmotionError> {
        if probs.len() != space.len() {
            return Err(EmotionError::LengthMismatch {
                expected: space.len(),
                got: probs.len(),
            });
        }
        let mut total = T::zero();
        for (index, p) in probs.iter().enumerate() {
            if !p.to_f64().is_some_and(f64::is_finite) {
                return Err(EmotionError::NonFinite { index });
            }
            if *p < T::zero() {
                return Err(EmotionError::NegativeWeight { index });
            }
            total = total + p.clone();
        }
        let sum = total.to_f64().unwrap_or(f64::NAN);
        if !((sum - 1.0).abs() <= T::normalization_tolerance()) {
            return Err(EmotionError::NotNormalized { sum });
        }
        Ok(Self { space, probs })
    }

    pub fn uniform(space: LabelSpace) -> Self {
        let k = T::from_count(space.len());
        let probs = vec![T::one() / k; space.len()];
        Self { space, probs }
    }

    pub fn point_mass(space: LabelSpace, index: usize) -> Result<Self, EmotionError> {
        if index >= space.len() {
            return Err(EmotionError::LengthMismatch {
                expected: space.len(),
                got: index + 1,
            });
        }
        let mut probs = vec![T::zero(); space.len()];
        probs[index] = T::one();
        Ok(Self { space, probs })
    }

    /// Empirical relative frequencies of a rating set.
    pub fn from_ratings(ratings: &RatingSet) -> Result<Self, EmotionError> {
        if ratings.is_empty() {
            return Err(EmotionError::EmptyRatings);
        }
        let counts = ratings.counts();
        let weights = counts.into_iter().map(T::from_count).collect();
        Self::from_weights(ratings.space().clone(), weights)
    }

    /// Index of the largest entry; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sum(&self) -> T {
        self.probs.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    /// Converts entry-wise to `f64`.
    pub fn to_f64(&self) -> CategoricalDistribution<f64> {
        CategoricalDistribution {
            space: self.space.clone(),
            probs: self
                .probs
                .iter()
                .map(|p| p.to_f64().unwrap_or(f64::NAN))
                .collect(),
        }
    }
}

impl<T: Scalar> CategoricalDistribution<T> {
    /// Additive smoothing: `(p_i + eps) / (1 + K eps)`.
    pub fn smooth(&self, epsilon: T) -> Self {
        debug_assert!(epsilon >= T::zero());
        if epsilon == T::zero() {
            return self.clone();
        }
        let denom = T::one() + T::from_count(self.len()) * epsilon;
        let probs = self.probs.iter().map(|&p| (p + epsilon) / denom).collect();
        Self {
            space: self.space.clone(),
            probs,
        }
    }

    /// Normalizes a strictly positive vector of unnormalized log masses
    /// using the max-shift trick.
    pub fn from_log_weights(space: LabelSpace, log_weights: &[T]) -> Result<Self, EmotionError> {
        if log_weights.len() != space.len() {
            return Err(EmotionError::LengthMismatch {
                expected: space.len(),
                got: log_weights.len(),
            });
        }
        let max = log_weights
            .iter()
            .copied()
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(EmotionError::ZeroMass);
        }
        if !max.is_finite() {
            return Err(EmotionError::NonFinite {
                index: log_weights.iter().position(|v| !v.is_finite()).unwrap_or(0),
            });
        }
        let weights: Vec<T> = log_weights.iter().map(|&l| (l - max).exp()).collect();
        Self::from_weights(space, weights)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn total_variation(&self, other: &Self) -> T {
        let l1: T = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        l1 / T::lit(2.0)
    }

    pub fn cast<U: Scalar>(&self) -> CategoricalDistribution<U> {
        CategoricalDistribution {
            space: self.space.clone(),
            probs: self
                .probs
                .iter()
                .map(|p| U::from_f64(p.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }
}

/// Maps a Likert point 1..=5 to its valence bin label.
pub fn discretize_valence(rating: i64) -> Result<&'static str, EmotionError> {
    if (1..=5).contains(&rating) {
        Ok(VALENCE_BINS[(rating - 1) as usize])
    } else {
        Err(EmotionError::OutOfScale(rating))
    }
}

/// `Σ i · p_i` over bins v1..v5, a scalar in [1, 5].
pub fn expected_valence<T: Scalar>(dist: &CategoricalDistribution<T>) -> Result<T, EmotionError> {
    if !dist.space().is_valence() {
        return Err(EmotionError::WrongSpace);
    }
    Ok(dist
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| T::from_count(i + 1) * p)
        .sum())
}

/// Discrete label choices, one per annotator pass, stored as label indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatingSet {
    space: LabelSpace,
    ratings: Vec<usize>,
}

impl RatingSet {
    pub fn from_labels<S: AsRef<str>>(space: LabelSpace, labels: &[S]) -> Result<Self, EmotionError> {
        let ratings = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                space
                    .index_of(l)
                    .ok_or_else(|| EmotionError::UnknownLabel(l.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { space, ratings })
    }

    pub fn from_indices(space: LabelSpace, ratings: Vec<usize>) -> Result<Self, EmotionError> {
        if let Some(&bad) = ratings.iter().find(|&&i| i >= space.len()) {
            return Err(EmotionError::UnknownLabel(format!("#{bad}")));
        }
        Ok(Self { space, ratings })
    }

    /// Valence ratings given as Likert points.
    pub fn from_likert(points: &[i64]) -> Result<Self, EmotionError> {
        let ratings = points
            .iter()
            .map(|&p| discretize_valence(p).map(|_| (p - 1) as usize))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            space: LabelSpace::valence(),
            ratings,
        })
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn indices(&self) -> &[usize] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.space.len()];
        for &r in &self.ratings {
            counts[r] += 1;
        }
        counts
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> + '_ {
        self.ratings
            .iter()
            .map(|&i| self.space.label(i).expect("index validated"))
    }
}
