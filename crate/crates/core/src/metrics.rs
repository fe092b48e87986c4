//! Evaluation metrics, report assembly and the face/situation closeness analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::emotion::{expected_valence, CategoricalDistribution, EmotionError, Task};
use crate::expressivity::Tertile;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("inputs differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("no values to evaluate")]
    Empty,
    #[error("correlation undefined: an input has zero variance")]
    ZeroVariance,
    #[error("distributions are over different label spaces")]
    SpaceMismatch,
    #[error("prediction and truth video sets differ (first difference: `{0}`)")]
    KeyMismatch(String),
    #[error("video `{video_id}` lacks {condition} judgments")]
    MissingCondition { video_id: String, condition: String },
    #[error(transparent)]
    Distribution(#[from] EmotionError),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Kullback-Leibler divergence `KL(p ‖ q)` in nats, after smoothing both sides.
/// `p` is the reference (ground truth), `q` the prediction.
pub fn kld<T: Scalar>(
    p: &CategoricalDistribution<T>,
    q: &CategoricalDistribution<T>,
    epsilon: T,
) -> Result<T, MetricsError> {
    if p.space() != q.space() {
        return Err(MetricsError::SpaceMismatch);
    }
    let (p, q) = (p.smooth(epsilon), q.smooth(epsilon));
    let sum: T = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| {
            if pi == T::zero() {
                T::zero()
            } else if qi == T::zero() {
                T::infinity()
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum();
    // rounding can leave tiny negative residues
    Ok(sum.max(T::zero()))
}

pub fn mse_rmse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<(T, T), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / T::from_count(pred.len());
    Ok((mse, mse.sqrt()))
}

/// Product-moment correlation.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricsError::Empty);
    }
    let n = T::from_count(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(MetricsError::ZeroVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// How correlation is aggregated for distribution-valued tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PearsonMode {
    /// One correlation over all (video, label) probability pairs.
    #[default]
    Pooled,
    /// Mean of per-video correlations over the label entries; videos with a
    /// constant side are skipped.
    PerVideo,
}

impl FromStr for PearsonMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(PearsonMode::Pooled),
            "per_video" | "per-video" => Ok(PearsonMode::PerVideo),
            other => Err(format!("unknown pearson mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub pearson_mode: PearsonMode,
    /// Smoothing applied inside KLD.
    pub epsilon: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            pearson_mode: PearsonMode::Pooled,
            epsilon: crate::scalar::DEFAULT_EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub mse: f64,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kld: Option<f64>,
    /// Expected valence of the prediction (valence task only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_valence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_valence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mse: f64,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kld: Option<f64>,
    /// `None` when undefined (zero variance).
    pub pearson: Option<f64>,
}

/// Fixed conventions recorded alongside every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConventions {
    pub kld_direction: String,
    pub log_base: String,
    pub valence_scalarization: String,
    pub pearson_mode: PearsonMode,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub n_videos: usize,
    pub conventions: MetricConventions,
    pub aggregate: AggregateMetrics,
    pub per_video: Vec<VideoMetrics>,
    pub config_fingerprint: String,
}

fn same_keys<A, B>(a: &BTreeMap<String, A>, b: &BTreeMap<String, B>) -> Result<(), MetricsError> {
    if let Some(k) = a.keys().find(|k| !b.contains_key(*k)) {
        return Err(MetricsError::KeyMismatch(k.clone()));
    }
    if let Some(k) = b.keys().find(|k| !a.contains_key(*k)) {
        return Err(MetricsError::KeyMismatch(k.clone()));
    }
    Ok(())
}

fn f<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Scores predictions against context-based truths.
///
/// Valence: both sides are scalarized by expected bin index; MSE, RMSE and
/// Pearson are computed across videos (so RMSE is the root of the aggregate
/// MSE). Basic emotion: per-video KLD(truth ‖ prediction) and per-video
/// MSE/RMSE over the label entries are averaged; Pearson follows
/// `options.pearson_mode`.
pub fn evaluate<T: Scalar>(
    predictions: &BTreeMap<String, CategoricalDistribution<T>>,
    truths: &BTreeMap<String, CategoricalDistribution<T>>,
    task: Task,
    options: &EvalOptions,
    config_fingerprint: &str,
) -> Result<EvaluationReport, MetricsError> {
    same_keys(predictions, truths)?;
    if truths.is_empty() {
        return Err(MetricsError::Empty);
    }
    let space = task.space();
    for (id, d) in predictions.iter().chain(truths) {
        if *d.space() != space {
            return Err(MetricsError::MissingCondition {
                video_id: id.clone(),
                condition: format!("{task} distribution"),
            });
        }
    }
    let epsilon = T::lit(options.epsilon);
    let mut per_video = Vec::with_capacity(truths.len());
    let aggregate = match task {
        Task::Valence => {
            let mut pred_s = Vec::new();
            let mut true_s = Vec::new();
            for (id, truth) in truths {
                let p = expected_valence(&predictions[id])?;
                let t = expected_valence(truth)?;
                pred_s.push(p);
                true_s.push(t);
                let d = p - t;
                per_video.push(VideoMetrics {
                    video_id: id.clone(),
                    mse: f(d * d),
                    rmse: f(d.abs()),
                    kld: None,
                    predicted_valence: Some(f(p)),
                    true_valence: Some(f(t)),
                });
            }
            let (mse, rmse) = mse_rmse(&pred_s, &true_s)?;
            AggregateMetrics {
                mse: f(mse),
                rmse: f(rmse),
                kld: None,
                pearson: pearson(&pred_s, &true_s).ok().map(f),
            }
        }
        Task::BasicEmotion => {
            let mut pooled_p = Vec::new();
            let mut pooled_t = Vec::new();
            let mut per_video_r = Vec::new();
            let (mut mse_sum, mut rmse_sum, mut kld_sum) = (T::zero(), T::zero(), T::zero());
            for (id, truth) in truths {
                let pred = &predictions[id];
                let (mse, rmse) = mse_rmse(pred.probs(), truth.probs())?;
                let k = kld(truth, pred, epsilon)?;
                mse_sum = mse_sum + mse;
                rmse_sum = rmse_sum + rmse;
                kld_sum = kld_sum + k;
                pooled_p.extend_from_slice(pred.probs());
                pooled_t.extend_from_slice(truth.probs());
                if let Ok(r) = pearson(pred.probs(), truth.probs()) {
                    per_video_r.push(r);
                }
                per_video.push(VideoMetrics {
                    video_id: id.clone(),
                    mse: f(mse),
                    rmse: f(rmse),
                    kld: Some(f(k)),
                    predicted_valence: None,
                    true_valence: None,
                });
            }
            let n = T::from_count(truths.len());
            let pearson = match options.pearson_mode {
                PearsonMode::Pooled => pearson(&pooled_p, &pooled_t).ok().map(f),
                PearsonMode::PerVideo if per_video_r.is_empty() => None,
                PearsonMode::PerVideo => Some(f(
                    per_video_r.iter().copied().sum::<T>() / T::from_count(per_video_r.len())
                )),
            };
            AggregateMetrics {
                mse: f(mse_sum / n),
                rmse: f(rmse_sum / n),
                kld: Some(f(kld_sum / n)),
                pearson,
            }
        }
    };
    Ok(EvaluationReport {
        task,
        n_videos: truths.len(),
        conventions: MetricConventions {
            kld_direction: "truth||prediction".into(),
            log_base: "e (nats)".into(),
            valence_scalarization: "expected bin index (v1=1 .. v5=5)".into(),
            pearson_mode: options.pearson_mode,
            epsilon: options.epsilon,
        },
        aggregate,
        per_video,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// Plain-text comparison table: one row per named report, grouped by task.
pub fn render_table(rows: &[(&str, &EvaluationReport)]) -> String {
    let mut out = String::new();
    let fmt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(20);
    for task in Task::ALL {
        let task_rows: Vec<_> = rows.iter().filter(|(_, r)| r.task == task).collect();
        if task_rows.is_empty() {
            continue;
        }
        let title = match task {
            Task::Valence => "Valence",
            Task::BasicEmotion => "Basic Emotion",
        };
        let first = match task {
            Task::Valence => "MSE(↓)",
            Task::BasicEmotion => "KLD(↓)",
        };
        let _ = writeln!(out, "{title}");
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>14}",
            "", first, "RMSE(↓)", "Correlation(↑)"
        );
        for (name, r) in task_rows {
            let lead = match task {
                Task::Valence => Some(r.aggregate.mse),
                Task::BasicEmotion => r.aggregate.kld,
            };
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>8}  {:>14}",
                name,
                fmt(lead),
                fmt(Some(r.aggregate.rmse)),
                fmt(r.aggregate.pearson)
            );
        }
        let _ = writeln!(out);
    }
    out
}

/// Short stable hash of any serializable configuration.
pub fn config_fingerprint<S: Serialize>(config: &S) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..8])
}

/// Distance used to decide which cue a context-based judgment is closer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClosenessMetric {
    /// KL(context_based ‖ cue).
    #[default]
    Kld,
    L1,
    L2,
}

impl FromStr for ClosenessMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kld" => Ok(ClosenessMetric::Kld),
            "l1" => Ok(ClosenessMetric::L1),
            "l2" => Ok(ClosenessMetric::L2),
            other => Err(format!("unknown closeness metric `{other}`")),
        }
    }
}

impl ClosenessMetric {
    pub fn distance<T: Scalar>(
        self,
        reference: &CategoricalDistribution<T>,
        other: &CategoricalDistribution<T>,
        epsilon: T,
    ) -> Result<T, MetricsError> {
        if reference.space() != other.space() {
            return Err(MetricsError::SpaceMismatch);
        }
        let diffs = reference.probs().iter().zip(other.probs()).map(|(&a, &b)| a - b);
        Ok(match self {
            ClosenessMetric::Kld => kld(reference, other, epsilon)?,
            ClosenessMetric::L1 => diffs.map(T::abs).sum(),
            ClosenessMetric::L2 => diffs.map(|d| d * d).sum::<T>().sqrt(),
        })
    }
}

/// The three judgments of one video plus its expressivity tertile.
#[derive(Clone, Debug)]
pub struct ClosenessInput<T> {
    pub video_id: String,
    pub face_only: Option<CategoricalDistribution<T>>,
    pub context_only: Option<CategoricalDistribution<T>>,
    pub context_based: Option<CategoricalDistribution<T>>,
    pub tertile: Tertile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closer {
    Face,
    Situation,
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoCloseness {
    pub video_id: String,
    pub tertile: Tertile,
    pub face_distance: f64,
    pub situation_distance: f64,
    pub closer: Closer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TertileCloseness {
    pub tertile: Tertile,
    pub face_closer: usize,
    pub situation_closer: usize,
    pub ties: usize,
    /// `None` when every video in the tertile is a tie.
    pub face_closer_proportion: Option<f64>,
    pub situation_closer_proportion: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub metric: ClosenessMetric,
    pub tertiles: Vec<TertileCloseness>,
    pub per_video: Vec<VideoCloseness>,
}

impl ClosenessReport {
    pub fn face_closer_proportion(&self, tertile: Tertile) -> Option<f64> {
        self.tertiles
            .iter()
            .find(|t| t.tertile == tertile)
            .and_then(|t| t.face_closer_proportion)
    }
}

/// For each video, is the context-based judgment closer to the face-only or
/// the situation-only judgment? Proportions are reported per tertile with
/// exact ties left out of the denominator.
pub fn closeness_analysis<T: Scalar>(
    inputs: &[ClosenessInput<T>],
    metric: ClosenessMetric,
    epsilon: T,
) -> Result<ClosenessReport, MetricsError> {
    let mut per_video = Vec::with_capacity(inputs.len());
    for input in inputs {
        let missing = |condition: &str| MetricsError::MissingCondition {
            video_id: input.video_id.clone(),
            condition: condition.into(),
        };
        let face = input.face_only.as_ref().ok_or_else(|| missing("context_free"))?;
        let situation = input.context_only.as_ref().ok_or_else(|| missing("context_only"))?;
        let both = input.context_based.as_ref().ok_or_else(|| missing("context_based"))?;
        let d_face = metric.distance(both, face, epsilon)?;
        let d_situation = metric.distance(both, situation, epsilon)?;
        let closer = if d_face < d_situation {
            Closer::Face
        } else if d_situation < d_face {
            Closer::Situation
        } else {
            Closer::Tie
        };
        per_video.push(VideoCloseness {
            video_id: input.video_id.clone(),
            tertile: input.tertile,
            face_distance: f(d_face),
            situation_distance: f(d_situation),
            closer,
        });
    }
    let tertiles = Tertile::ALL
        .iter()
        .map(|&tertile| {
            let count = |c: Closer| {
                per_video
                    .iter()
                    .filter(|v| v.tertile == tertile && v.closer == c)
                    .count()
            };
            let (face_closer, situation_closer, ties) =
                (count(Closer::Face), count(Closer::Situation), count(Closer::Tie));
            let decided = face_closer + situation_closer;
            let prop = |n: usize| (decided > 0).then(|| n as f64 / decided as f64);
            TertileCloseness {
                tertile,
                face_closer,
                situation_closer,
                ties,
                face_closer_proportion: prop(face_closer),
                situation_closer_proportion: prop(situation_closer),
            }
        })
        .collect();
    Ok(ClosenessReport {
        metric,
        tertiles,
        per_video,
    })
}

pub const CLOSENESS_CSV_HEADER: [&str; 7] = [
    "tertile",
    "face_closer",
    "situation_closer",
    "ties",
    "n",
    "face_closer_proportion",
    "situation_closer_proportion",
];

/// Per-tertile CSV; `trailer` lines are appended as `# ` comments.
pub fn write_closeness_csv<W: Write>(
    report: &ClosenessReport,
    mut writer: W,
    trailer: &[String],
) -> Result<(), MetricsError> {
    let io = |e: std::io::Error| MetricsError::Io(e.to_string());
    writeln!(writer, "{}", CLOSENESS_CSV_HEADER.join(",")).map_err(io)?;
    let prop = |p: Option<f64>| p.map_or_else(String::new, |v| v.to_string());
    for t in &report.tertiles {
        writeln!(
            writer,
            "{},{},{},{},{},{},{}",
            t.tertile,
            t.face_closer,
            t.situation_closer,
            t.ties,
            t.face_closer + t.situation_closer + t.ties,
            prop(t.face_closer_proportion),
            prop(t.situation_closer_proportion)
        )
        .map_err(io)?;
    }
    for line in trailer {
        writeln!(writer, "# {line}").map_err(io)?;
    }
    Ok(())
}

/// Grouped bar chart (face-closer vs situation-closer per tertile) as SVG.
pub fn closeness_svg(report: &ClosenessReport, title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 56.0;
    const BOTTOM: f64 = 270.0;
    const TOP: f64 = 40.0;
    let plot_h = BOTTOM - TOP;
    let group_w = (W - LEFT - 20.0) / 3.0;
    let bar_w = group_w * 0.3;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape_xml(title)
    );
    for tick in 0..=4 {
        let v = tick as f64 * 0.25;
        let y = BOTTOM - v * plot_h;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            W - 20.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (i, t) in report.tertiles.iter().enumerate() {
        let x0 = LEFT + group_w * i as f64 + group_w * 0.15;
        let bars = [
            (t.face_closer_proportion.unwrap_or(0.0), "#4c72b0"),
            (t.situation_closer_proportion.unwrap_or(0.0), "#dd8452"),
        ];
        for (j, (value, color)) in bars.iter().enumerate() {
            let h = value * plot_h;
            let x = x0 + j as f64 * (bar_w + 4.0);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar_w:.1}" height="{h:.1}" fill="{color}"/>"#,
                BOTTOM - h
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bar_w + 2.0,
            BOTTOM + 18.0,
            t.tertile
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{:.1}" width="10" height="10" fill="#4c72b0"/><text x="{:.1}" y="{:.1}">closer to face-only</text>"##,
        H - 22.0,
        LEFT + 14.0,
        H - 13.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="#dd8452"/><text x="{:.1}" y="{:.1}">closer to situation-only</text>"##,
        LEFT + 180.0,
        H - 22.0,
        LEFT + 194.0,
        H - 13.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::LabelSpace;
    use proptest::prelude::*;

    fn two(p: [f64; 2]) -> CategoricalDistribution<f64> {
        CategoricalDistribution::from_weights(LabelSpace::new(["a", "b"]).unwrap(), p.to_vec()).unwrap()
    }

    #[test]
    fn kld_examples() {
        let p = two([0.3, 0.7]);
        assert!(kld(&p, &p, 1e-6).unwrap() <= 1e-12);
        let v = kld(&two([1.0, 0.0]), &two([0.5, 0.5]), 1e-6).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-3);
        let a = kld(&two([0.8, 0.2]), &two([0.2, 0.8]), 1e-6).unwrap();
        let b = kld(&two([0.2, 0.8]), &two([0.8, 0.2]), 1e-6).unwrap();
        let c = kld(&two([0.8, 0.2]), &two([0.5, 0.5]), 1e-6).unwrap();
        let d = kld(&two([0.5, 0.5]), &two([0.8, 0.2]), 1e-6).unwrap();
        assert!(a > 0.0 && b > 0.0);
        assert_ne!(c, d);
        assert_eq!(
            kld(&two([0.5, 0.5]), &CategoricalDistribution::uniform(LabelSpace::valence()), 1e-6),
            Err(MetricsError::SpaceMismatch)
        );
    }

    #[test]
    fn kld_without_smoothing_can_be_infinite() {
        assert!(kld(&two([0.5, 0.5]), &two([1.0, 0.0]), 0.0).unwrap().is_infinite());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_rmse(&[1.0, 2.0], &[1.0, 2.0]), Ok((0.0, 0.0)));
        let (mse, rmse) = mse_rmse(&[1.0f64, 2.0], &[2.0, 4.0]).unwrap();
        assert_eq!(mse, 2.5);
        assert!((rmse - 1.5811).abs() < 1e-4);
        let (mse, rmse) = mse_rmse(&[1.5f64, -2.5, 4.5], &[1.0, -3.0, 4.0]).unwrap();
        assert!((mse - 0.25).abs() < 1e-15 && (rmse - 0.5).abs() < 1e-15);
        assert_eq!(mse_rmse::<f64>(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(mse_rmse(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &lin).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 4]), Err(MetricsError::ZeroVariance));
    }

    fn valence(p: [f64; 5]) -> CategoricalDistribution<f64> {
        CategoricalDistribution::from_weights(LabelSpace::valence(), p.to_vec()).unwrap()
    }

    fn basic(p: [f64; 7]) -> CategoricalDistribution<f64> {
        CategoricalDistribution::from_weights(LabelSpace::basic_emotions(), p.to_vec()).unwrap()
    }

    #[test]
    fn evaluate_identity() {
        let truths: BTreeMap<_, _> = [
            ("a".to_string(), basic([0.5, 0.1, 0.1, 0.1, 0.1, 0.1, 0.0])),
            ("b".to_string(), basic([0.0, 0.0, 0.2, 0.6, 0.2, 0.0, 0.0])),
        ]
        .into();
        let r = evaluate(&truths, &truths, Task::BasicEmotion, &EvalOptions::default(), "x").unwrap();
        assert_eq!(r.aggregate.mse, 0.0);
        assert_eq!(r.aggregate.rmse, 0.0);
        assert!(r.aggregate.kld.unwrap() <= 1e-12);
        assert!((r.aggregate.pearson.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_two_video_fixtures_by_hand() {
        // valence: truth scalars 2.0 and 4.0, predictions 2.5 and 3.0
        let truths: BTreeMap<_, _> = [
            ("a".to_string(), valence([0.0, 1.0, 0.0, 0.0, 0.0])),
            ("b".to_string(), valence([0.0, 0.0, 0.0, 1.0, 0.0])),
        ]
        .into();
        let preds: BTreeMap<_, _> = [
            ("a".to_string(), valence([0.0, 0.5, 0.5, 0.0, 0.0])),
            ("b".to_string(), valence([0.0, 0.0, 1.0, 0.0, 0.0])),
        ]
        .into();
        let r = evaluate(&preds, &truths, Task::Valence, &EvalOptions::default(), "fp").unwrap();
        // squared errors 0.25 and 1.0
        assert!((r.aggregate.mse - 0.625).abs() < 1e-12);
        assert!((r.aggregate.rmse - 0.625f64.sqrt()).abs() < 1e-12);
        // two points: perfectly positively correlated
        assert!((r.aggregate.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.per_video[0].predicted_valence, Some(2.5));
        assert_eq!(r.config_fingerprint, "fp");

        // basic emotion, two labels active per video
        let t1 = basic([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let p1 = basic([0.75, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let t2 = basic([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let p2 = basic([0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0]);
        let truths: BTreeMap<_, _> = [("a".to_string(), t1), ("b".to_string(), t2)].into();
        let preds: BTreeMap<_, _> = [("a".to_string(), p1), ("b".to_string(), p2)].into();
        let opts = EvalOptions { pearson_mode: PearsonMode::Pooled, epsilon: 1e-9 };
        let r = evaluate(&preds, &truths, Task::BasicEmotion, &opts, "fp").unwrap();
        // per-video mse: (2 · 0.0625)/7 and (2 · 0.25)/7
        let mse_a = 0.125 / 7.0;
        let mse_b = 0.5 / 7.0;
        assert!((r.aggregate.mse - (mse_a + mse_b) / 2.0).abs() < 1e-12);
        assert!((r.aggregate.rmse - (mse_a.sqrt() + mse_b.sqrt()) / 2.0).abs() < 1e-12);
        // KL: 0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25) = 0.5 ln(4/3); and ln 2
        let k_a = 0.5 * (4.0f64 / 3.0).ln();
        let k_b = std::f64::consts::LN_2;
        assert!((r.aggregate.kld.unwrap() - (k_a + k_b) / 2.0).abs() < 1e-6);
        // pooled correlation over 14 pairs, computed longhand
        let p: Vec<f64> = [0.75, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0].to_vec();
        let t: Vec<f64> = [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0].to_vec();
        let m = 2.0 / 14.0;
        let sxy: f64 = p.iter().zip(&t).map(|(a, b)| (a - m) * (b - m)).sum();
        let sxx: f64 = p.iter().map(|a| (a - m) * (a - m)).sum();
        let syy: f64 = t.iter().map(|b| (b - m) * (b - m)).sum();
        assert!((r.aggregate.pearson.unwrap() - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_key_mismatch() {
        let a: BTreeMap<_, _> = [("a".to_string(), basic([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))].into();
        let b: BTreeMap<_, _> = [("b".to_string(), basic([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))].into();
        assert!(matches!(
            evaluate(&a, &b, Task::BasicEmotion, &EvalOptions::default(), ""),
            Err(MetricsError::KeyMismatch(_))
        ));
    }

    #[test]
    fn table_layout() {
        let truths: BTreeMap<_, _> = [
            ("a".to_string(), valence([0.0, 1.0, 0.0, 0.0, 0.0])),
            ("b".to_string(), valence([0.0, 0.0, 0.0, 1.0, 0.0])),
        ]
        .into();
        let r = evaluate(&truths, &truths, Task::Valence, &EvalOptions::default(), "").unwrap();
        let table = render_table(&[("BCI (w/o Salience)", &r), ("BCI (w/ Salience)", &r)]);
        assert!(table.starts_with("Valence\n"));
        assert!(table.contains("MSE(↓)"));
        assert!(table.contains("BCI (w/ Salience)"));
        assert!(table.contains("0.000"));
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = config_fingerprint(&("x", 1.0));
        assert_eq!(a, config_fingerprint(&("x", 1.0)));
        assert_ne!(a, config_fingerprint(&("x", 1.5)));
        assert_eq!(a.len(), 16);
    }

    fn input(id: &str, f: [f64; 2], c: [f64; 2], b: [f64; 2], t: Tertile) -> ClosenessInput<f64> {
        ClosenessInput {
            video_id: id.into(),
            face_only: Some(two(f)),
            context_only: Some(two(c)),
            context_based: Some(two(b)),
            tertile: t,
        }
    }

    #[test]
    fn closeness_rules() {
        let inputs = vec![
            input("a", [0.9, 0.1], [0.1, 0.9], [0.9, 0.1], Tertile::High),
            input("b", [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], Tertile::High),
            input("c", [0.9, 0.1], [0.2, 0.8], [0.3, 0.7], Tertile::Low),
            input("d", [0.9, 0.1], [0.2, 0.8], [0.8, 0.2], Tertile::Low),
        ];
        for metric in [ClosenessMetric::Kld, ClosenessMetric::L1, ClosenessMetric::L2] {
            let r = closeness_analysis(&inputs, metric, 1e-6).unwrap();
            assert_eq!(r.per_video[0].closer, Closer::Face);
            assert_eq!(r.per_video[1].closer, Closer::Tie);
            assert_eq!(r.per_video[2].closer, Closer::Situation);
            let high = &r.tertiles[2];
            assert_eq!((high.face_closer, high.ties), (1, 1));
            assert_eq!(high.face_closer_proportion, Some(1.0));
            assert_eq!(r.face_closer_proportion(Tertile::Low), Some(0.5));
            assert_eq!(r.tertiles[1].face_closer_proportion, None);
        }
        let mut missing = inputs[0].clone();
        missing.context_only = None;
        assert!(matches!(
            closeness_analysis(&[missing], ClosenessMetric::Kld, 1e-6),
            Err(MetricsError::MissingCondition { .. })
        ));
    }

    #[test]
    fn closeness_csv_and_svg() {
        let inputs = vec![input("a", [0.9, 0.1], [0.1, 0.9], [0.9, 0.1], Tertile::High)];
        let r = closeness_analysis(&inputs, ClosenessMetric::Kld, 1e-6).unwrap();
        let mut buf = Vec::new();
        write_closeness_csv(&r, &mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "tertile,face_closer,situation_closer,ties,n,face_closer_proportion,situation_closer_proportion\n\
             low,0,0,0,0,,\nmid,0,0,0,0,,\nhigh,1,0,0,1,1,0\n"
        );
        let svg = closeness_svg(&r, "a < b");
        assert!(svg.starts_with("<svg") && svg.contains("a &lt; b"));
    }

    fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    fn simplex7() -> impl Strategy<Value = CategoricalDistribution<f64>> {
        prop::collection::vec(0.0f64..1.0, 7)
            .prop_filter("mass", |w| w.iter().sum::<f64>() > 1e-6)
            .prop_map(|w| basic(w.try_into().unwrap()))
    }

    proptest! {
        #[test]
        fn kld_nonnegative(p in simplex7(), q in simplex7()) {
            prop_assert!(kld(&p, &q, 1e-6).unwrap() >= 0.0);
            prop_assert!(kld(&p, &p, 1e-6).unwrap() <= 1e-12);
        }

        #[test]
        fn rmse_squared_is_mse(a in unit_vec(30), b in unit_vec(30)) {
            let (mse, rmse) = mse_rmse(&a, &b).unwrap();
            prop_assert!((rmse * rmse - mse).abs() <= 1e-12 * mse.max(1.0));
        }

        #[test]
        fn pearson_affine_invariant(x in unit_vec(20), y in unit_vec(20), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            if let Ok(r) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                prop_assert!((pearson(&x2, &y).unwrap() - r).abs() <= 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn evaluate_permutation_invariant(ds in prop::collection::vec((simplex7(), simplex7()), 2..10)) {
            let ids: Vec<String> = (0..ds.len()).map(|i| format!("v{i}")).collect();
            let preds: BTreeMap<_, _> = ids.iter().cloned().zip(ds.iter().map(|d| d.0.clone())).collect();
            let truths: BTreeMap<_, _> = ids.iter().cloned().zip(ds.iter().map(|d| d.1.clone())).collect();
            let a = evaluate(&preds, &truths, Task::BasicEmotion, &EvalOptions::default(), "").unwrap();
            let rev: BTreeMap<_, _> = preds.into_iter().rev().collect();
            let b = evaluate(&rev, &truths, Task::BasicEmotion, &EvalOptions::default(), "").unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
