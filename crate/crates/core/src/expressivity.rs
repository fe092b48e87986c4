//! Facial expressivity scoring.
//!
//! Each clip's feature series is reduced to four channel summaries (AU
//! activity, gaze movement, head movement, optical flow). Summaries are
//! z-scored across the cohort and averaged into a raw expressivity score,
//! which is then mapped linearly onto a fusion weight range and binned into
//! tertiles.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FeatureTimeSeries;
use crate::metrics::{pearson, MetricsError};
use crate::scalar::Scalar;

/// Header of the expressivity CSV.
pub const SCORES_CSV_HEADER: [&str; 8] = [
    "video_id", "raw", "z_au", "z_gaze", "z_head", "z_flow", "weight", "tertile",
];

/// Default fusion weight range.
pub const DEFAULT_WEIGHT_RANGE: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpressivityError {
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("need at least {needed} videos, got {got}")]
    TooFewVideos { needed: usize, got: usize },
    #[error("paired lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("human expressivity rating {0} outside 1..=7")]
    RatingOutOfScale(i64),
    #[error("channel summary for `{0}` is not finite")]
    NonFinite(String),
    #[error("invalid weight range ({low}, {high})")]
    InvalidRange { low: f64, high: f64 },
    #[error(transparent)]
    Metric(#[from] MetricsError),
    #[error("expressivity CSV: {0}")]
    Csv(String),
}

/// Time-aggregated motion summary of one clip. All entries are non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary<T> {
    pub au_activity: T,
    pub gaze_movement: T,
    pub head_movement: T,
    pub flow_activity: T,
}

impl<T: Scalar> ChannelSummary<T> {
    pub fn to_array(self) -> [T; 4] {
        [
            self.au_activity,
            self.gaze_movement,
            self.head_movement,
            self.flow_activity,
        ]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        ChannelSummary {
            au_activity: a[0],
            gaze_movement: a[1],
            head_movement: a[2],
            flow_activity: a[3],
        }
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn distance<T: Scalar>(a: &[f64], b: &[f64]) -> T {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    T::lit(sq.sqrt())
}

/// Reduces a feature series to its four channel summaries.
///
/// AU activity is the mean over frames of the 12-AU mean. Gaze movement is the
/// mean inter-frame Euclidean change of the 5-vector (direction + angles);
/// head movement likewise over the head direction vector. Flow activity is the
/// mean per-frame optical-flow magnitude.
pub fn summarize_channels<T: Scalar>(
    features: &FeatureTimeSeries,
) -> Result<ChannelSummary<T>, ExpressivityError> {
    let frames = features.frames();
    if frames.len() < 2 {
        return Err(ExpressivityError::TooFewFrames(frames.len()));
    }
    let n = T::from_count(frames.len());
    let pairs = T::from_count(frames.len() - 1);

    let au_sum: T = frames
        .iter()
        .map(|f| T::lit(f.au.iter().sum::<f64>()) / T::from_count(f.au.len()))
        .sum();
    let flow_sum: T = frames.iter().map(|f| T::lit(f.flow_mag)).sum();

    let gaze_vec = |f: &crate::ingest::Frame| {
        [f.gaze[0], f.gaze[1], f.gaze[2], f.gaze_angle[0], f.gaze_angle[1]]
    };
    let gaze_sum: T = frames
        .windows(2)
        .map(|w| distance::<T>(&gaze_vec(&w[0]), &gaze_vec(&w[1])))
        .sum();
    let head_sum: T = frames
        .windows(2)
        .map(|w| distance::<T>(&w[0].head, &w[1].head))
        .sum();

    Ok(ChannelSummary {
        au_activity: au_sum / n,
        gaze_movement: gaze_sum / pairs,
        head_movement: head_sum / pairs,
        flow_activity: flow_sum / n,
    })
}

/// Raw expressivity and its standardized channel components.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedScore<T> {
    pub video_id: String,
    pub raw: T,
    pub z_components: [T; 4],
}

/// Population mean and standard deviation.
pub fn mean_and_std<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::from_count(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Z-scores every channel across the cohort (population std; constant channels
/// give z = 0) and averages the four z values into the raw score.
pub fn standardize_and_score<T: Scalar>(
    summaries: &[(String, ChannelSummary<T>)],
) -> Result<Vec<StandardizedScore<T>>, ExpressivityError> {
    if summaries.len() < 2 {
        return Err(ExpressivityError::TooFewVideos {
            needed: 2,
            got: summaries.len(),
        });
    }
    if let Some((id, _)) = summaries.iter().find(|(_, s)| !s.is_finite()) {
        return Err(ExpressivityError::NonFinite(id.clone()));
    }
    let mut z = vec![[T::zero(); 4]; summaries.len()];
    for channel in 0..4 {
        let column: Vec<T> = summaries.iter().map(|(_, s)| s.to_array()[channel]).collect();
        let (mean, std) = mean_and_std(&column);
        if std > T::zero() {
            for (row, &x) in z.iter_mut().zip(&column) {
                row[channel] = (x - mean) / std;
            }
        }
    }
    let four = T::lit(4.0);
    Ok(summaries
        .iter()
        .zip(z)
        .map(|((id, _), z_components)| StandardizedScore {
            video_id: id.clone(),
            raw: z_components.iter().copied().sum::<T>() / four,
            z_components,
        })
        .collect())
}

/// How raw scores are turned into weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightCalibration {
    /// Min/max of the cohort being scored.
    #[default]
    Batch,
    /// Frozen min/max, for scoring a single video against a known cohort.
    /// Scores outside the frozen range are clamped onto it.
    Fixed { min: f64, max: f64 },
}

fn check_range<T: Scalar>(range: (T, T)) -> Result<(), ExpressivityError> {
    let (low, high) = range;
    let ok = low <= high && low >= T::zero() && high <= T::one();
    if ok {
        Ok(())
    } else {
        Err(ExpressivityError::InvalidRange {
            low: low.to_f64().unwrap_or(f64::NAN),
            high: high.to_f64().unwrap_or(f64::NAN),
        })
    }
}

fn affine_weight<T: Scalar>(raw: T, min: T, max: T, (low, high): (T, T)) -> T {
    if max <= min {
        return (low + high) / T::lit(2.0);
    }
    if raw <= min {
        low
    } else if raw >= max {
        high
    } else {
        low + (high - low) * (raw - min) / (max - min)
    }
}

/// Linear min-max mapping of raw scores onto `range`. The cohort minimum maps
/// exactly to `range.0` and the maximum exactly to `range.1`; a degenerate
/// cohort maps everything to the midpoint.
pub fn map_weight<T: Scalar>(raw_scores: &[T], range: (T, T)) -> Result<Vec<T>, ExpressivityError> {
    check_range(range)?;
    let min = raw_scores.iter().copied().fold(T::infinity(), T::min);
    let max = raw_scores.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(raw_scores
        .iter()
        .map(|&r| affine_weight(r, min, max, range))
        .collect())
}

/// Weight mapping with an explicit calibration mode.
pub fn map_weight_calibrated<T: Scalar>(
    raw_scores: &[T],
    range: (T, T),
    calibration: WeightCalibration,
) -> Result<Vec<T>, ExpressivityError> {
    match calibration {
        WeightCalibration::Batch => map_weight(raw_scores, range),
        WeightCalibration::Fixed { min, max } => {
            check_range(range)?;
            let (min, max) = (T::lit(min), T::lit(max));
            Ok(raw_scores
                .iter()
                .map(|&r| affine_weight(r, min, max, range))
                .collect())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tertile {
    Low,
    Mid,
    High,
}

impl Tertile {
    pub const ALL: [Tertile; 3] = [Tertile::Low, Tertile::Mid, Tertile::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Tertile::Low => "low",
            Tertile::Mid => "mid",
            Tertile::High => "high",
        }
    }
}

impl fmt::Display for Tertile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tertile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(Tertile::Low),
            "mid" => Ok(Tertile::Mid),
            "high" => Ok(Tertile::High),
            other => Err(format!("unknown tertile `{other}`")),
        }
    }
}

/// Sizes of the three groups for `n` videos; extras go to the lower groups.
pub fn tertile_sizes(n: usize) -> [usize; 3] {
    let base = n / 3;
    let rem = n % 3;
    [base + usize::from(rem > 0), base + usize::from(rem > 1), base]
}

/// Splits videos into three contiguous groups by ascending raw score, ties
/// broken by video id. Returned labels are in input order.
pub fn assign_tertiles<T: Scalar, S: AsRef<str>>(
    video_ids: &[S],
    raw_scores: &[T],
) -> Result<Vec<Tertile>, ExpressivityError> {
    if video_ids.len() != raw_scores.len() {
        return Err(ExpressivityError::LengthMismatch {
            left: video_ids.len(),
            right: raw_scores.len(),
        });
    }
    let n = raw_scores.len();
    if n < 3 {
        return Err(ExpressivityError::TooFewVideos { needed: 3, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        raw_scores[a]
            .partial_cmp(&raw_scores[b])
            .unwrap_or(Ordering::Equal)
            .then_with(|| video_ids[a].as_ref().cmp(video_ids[b].as_ref()))
    });
    let [low, mid, _] = tertile_sizes(n);
    let mut out = vec![Tertile::Low; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < low {
            Tertile::Low
        } else if rank < low + mid {
            Tertile::Mid
        } else {
            Tertile::High
        };
    }
    Ok(out)
}

/// Fully scored video: raw score, components, weight and tertile.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressivityScore<T> {
    pub video_id: String,
    pub raw: T,
    pub z_components: [T; 4],
    pub weight: T,
    pub tertile: Tertile,
}

/// Runs standardization, weight mapping and tertile assignment over a cohort.
pub fn score_cohort<T: Scalar>(
    summaries: &[(String, ChannelSummary<T>)],
    range: (T, T),
    calibration: WeightCalibration,
) -> Result<Vec<ExpressivityScore<T>>, ExpressivityError> {
    let standardized = standardize_and_score(summaries)?;
    let raw: Vec<T> = standardized.iter().map(|s| s.raw).collect();
    let weights = map_weight_calibrated(&raw, range, calibration)?;
    let ids: Vec<&str> = standardized.iter().map(|s| s.video_id.as_str()).collect();
    let tertiles = assign_tertiles(&ids, &raw)?;
    Ok(standardized
        .into_iter()
        .zip(weights)
        .zip(tertiles)
        .map(|((s, weight), tertile)| ExpressivityScore {
            video_id: s.video_id,
            raw: s.raw,
            z_components: s.z_components,
            weight,
            tertile,
        })
        .collect())
}

/// Pearson correlation between computed raw scores and 1..=7 human ratings.
pub fn validate_against_human<T: Scalar>(
    scores: &[T],
    human_ratings: &[i64],
) -> Result<T, ExpressivityError> {
    if scores.len() != human_ratings.len() {
        return Err(ExpressivityError::LengthMismatch {
            left: scores.len(),
            right: human_ratings.len(),
        });
    }
    if scores.len() < 3 {
        return Err(ExpressivityError::TooFewVideos {
            needed: 3,
            got: scores.len(),
        });
    }
    if let Some(&bad) = human_ratings.iter().find(|h| !(1..=7).contains(*h)) {
        return Err(ExpressivityError::RatingOutOfScale(bad));
    }
    let human: Vec<T> = human_ratings.iter().map(|&h| T::lit(h as f64)).collect();
    Ok(pearson(scores, &human)?)
}

/// Writes the expressivity CSV; `trailer` lines are appended as `# ` comments.
pub fn write_scores_csv<T: Scalar, W: Write>(
    scores: &[ExpressivityScore<T>],
    mut writer: W,
    trailer: &[String],
) -> Result<(), ExpressivityError> {
    {
        let mut wtr = csv::Writer::from_writer(&mut writer);
        let err = |e: csv::Error| ExpressivityError::Csv(e.to_string());
        wtr.write_record(SCORES_CSV_HEADER).map_err(err)?;
        for s in scores {
            let mut row = vec![s.video_id.clone(), s.raw.to_string()];
            row.extend(s.z_components.iter().map(T::to_string));
            row.push(s.weight.to_string());
            row.push(s.tertile.to_string());
            wtr.write_record(&row).map_err(err)?;
        }
        wtr.flush().map_err(|e| ExpressivityError::Csv(e.to_string()))?;
    }
    for line in trailer {
        writeln!(writer, "# {line}").map_err(|e| ExpressivityError::Csv(e.to_string()))?;
    }
    Ok(())
}

/// Reads `video_id → weight` from any CSV with those two columns (such as the
/// expressivity CSV). Lines starting with `#` are ignored.
pub fn read_weights_csv<R: Read>(reader: R) -> Result<Vec<(String, f64)>, ExpressivityError> {
    let err = |e: csv::Error| ExpressivityError::Csv(e.to_string());
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers().map_err(err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ExpressivityError::Csv(format!("missing `{name}` column")))
    };
    let (id_col, w_col) = (col("video_id")?, col("weight")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(err)?;
        let w: f64 = rec[w_col].trim().parse().map_err(|_| {
            ExpressivityError::Csv(format!("line {}: bad weight `{}`", i + 2, &rec[w_col]))
        })?;
        out.push((rec[id_col].trim().to_string(), w));
    }
    Ok(out)
}
