//! Bayesian cue integration of face-only and context-only judgments.
//!
//! The plain rule multiplies the two cue distributions and divides by the
//! prior: `P(e|c,f) ∝ P(e|f) P(e|c) / P(e)`. The salience-adjusted rule
//! raises the face cue to `w` and the context cue to `1 - w` before the same
//! prior correction. All inputs are smoothed first so every entry is strictly
//! positive.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{CategoricalDistribution, EmotionError, LabelSpace, Task};
use crate::ingest::{Condition, VideoRecord};
use crate::scalar::{Scalar, DEFAULT_EPSILON};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("face, context and prior are over different label spaces")]
    SpaceMismatch,
    #[error("cue product has zero mass after smoothing")]
    AllZeroProduct,
    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("no context-based annotations for {0}")]
    NoAnnotations(Task),
    #[error("explicit prior requested without a distribution")]
    MissingExplicitPrior,
    #[error("negative smoothing epsilon {0}")]
    NegativeEpsilon(f64),
    #[error(transparent)]
    Distribution(#[from] EmotionError),
}

/// Where `P(e)` comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PriorSpec {
    #[default]
    Uniform,
    /// Pooled context-based ratings of the dataset being fused.
    Empirical,
    Explicit { dist: CategoricalDistribution<f64> },
}

impl PriorSpec {
    /// Materializes the prior for `task`.
    pub fn resolve<T: Scalar>(
        &self,
        task: Task,
        records: &[VideoRecord],
    ) -> Result<CategoricalDistribution<T>, FusionError> {
        let space = task.space();
        match self {
            PriorSpec::Uniform => Ok(CategoricalDistribution::uniform(space)),
            PriorSpec::Empirical => empirical_prior(records, task),
            PriorSpec::Explicit { dist } => {
                if *dist.space() != space {
                    return Err(FusionError::SpaceMismatch);
                }
                Ok(dist.cast())
            }
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            PriorSpec::Uniform => "uniform",
            PriorSpec::Empirical => "empirical",
            PriorSpec::Explicit { .. } => "explicit",
        }
    }
}

/// Numerical route for the salience-adjusted rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionPath {
    /// `exp(w ln f + (1-w) ln c - ln prior)` with max-shift normalization.
    #[default]
    Log,
    /// `f^w c^(1-w) / prior` computed with powers.
    Direct,
}

impl FromStr for FusionPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(FusionPath::Log),
            "direct" => Ok(FusionPath::Direct),
            other => Err(format!("unknown fusion path `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub prior: PriorSpec,
    pub epsilon: f64,
    pub weight_range: (f64, f64),
    #[serde(default)]
    pub path: FusionPath,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            prior: PriorSpec::Uniform,
            epsilon: DEFAULT_EPSILON,
            weight_range: (0.5, 1.0),
            path: FusionPath::Log,
        }
    }
}

fn check_spaces<T>(
    face: &CategoricalDistribution<T>,
    context: &CategoricalDistribution<T>,
    prior: &CategoricalDistribution<T>,
) -> Result<(), FusionError> {
    if face.space() == context.space() && face.space() == prior.space() {
        Ok(())
    } else {
        Err(FusionError::SpaceMismatch)
    }
}

fn check_epsilon<T: Scalar>(epsilon: T) -> Result<(), FusionError> {
    if epsilon >= T::zero() {
        Ok(())
    } else {
        Err(FusionError::NegativeEpsilon(epsilon.to_f64().unwrap_or(f64::NAN)))
    }
}

fn normalize<T: Scalar>(space: &LabelSpace, unnormalized: Vec<T>) -> Result<CategoricalDistribution<T>, FusionError> {
    match CategoricalDistribution::from_weights(space.clone(), unnormalized) {
        Err(EmotionError::ZeroMass) => Err(FusionError::AllZeroProduct),
        other => Ok(other?),
    }
}

/// Plain cue integration: `face · context / prior`, renormalized.
pub fn bci<T: Scalar>(
    face: &CategoricalDistribution<T>,
    context: &CategoricalDistribution<T>,
    prior: &CategoricalDistribution<T>,
    epsilon: T,
) -> Result<CategoricalDistribution<T>, FusionError> {
    check_spaces(face, context, prior)?;
    check_epsilon(epsilon)?;
    let (f, c, p) = (face.smooth(epsilon), context.smooth(epsilon), prior.smooth(epsilon));
    let product = f
        .probs()
        .iter()
        .zip(c.probs())
        .zip(p.probs())
        .map(|((&f, &c), &p)| if p > T::zero() { f * c / p } else { T::zero() })
        .collect();
    normalize(face.space(), product)
}

fn check_weight<T: Scalar>(w: T) -> Result<(), FusionError> {
    if w >= T::zero() && w <= T::one() {
        Ok(())
    } else {
        Err(FusionError::WeightOutOfRange(w.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Salience-adjusted integration: `face^w · context^(1-w) / prior`.
pub fn salience_bci<T: Scalar>(
    face: &CategoricalDistribution<T>,
    context: &CategoricalDistribution<T>,
    prior: &CategoricalDistribution<T>,
    w: T,
    epsilon: T,
) -> Result<CategoricalDistribution<T>, FusionError> {
    salience_bci_with(face, context, prior, w, epsilon, FusionPath::Log)
}

pub fn salience_bci_with<T: Scalar>(
    face: &CategoricalDistribution<T>,
    context: &CategoricalDistribution<T>,
    prior: &CategoricalDistribution<T>,
    w: T,
    epsilon: T,
    path: FusionPath,
) -> Result<CategoricalDistribution<T>, FusionError> {
    check_spaces(face, context, prior)?;
    check_weight(w)?;
    check_epsilon(epsilon)?;
    let (f, c, p) = (face.smooth(epsilon), context.smooth(epsilon), prior.smooth(epsilon));
    let v = T::one() - w;
    let triples = f.probs().iter().zip(c.probs()).zip(p.probs());
    match path {
        FusionPath::Direct => {
            let weights = triples
                .map(|((&f, &c), &p)| {
                    if p > T::zero() {
                        pow(f, w) * pow(c, v) / p
                    } else {
                        T::zero()
                    }
                })
                .collect();
            normalize(face.space(), weights)
        }
        FusionPath::Log => {
            let logs: Vec<T> = triples
                .map(|((&f, &c), &p)| {
                    if p > T::zero() {
                        weighted_ln(f, w) + weighted_ln(c, v) - p.ln()
                    } else {
                        T::neg_infinity()
                    }
                })
                .collect();
            match CategoricalDistribution::from_log_weights(face.space().clone(), &logs) {
                Err(EmotionError::ZeroMass) => Err(FusionError::AllZeroProduct),
                other => Ok(other?),
            }
        }
    }
}

/// `x^e` with `0^0 = 1`.
fn pow<T: Scalar>(x: T, e: T) -> T {
    if e == T::zero() {
        T::one()
    } else {
        x.powf(e)
    }
}

/// `e · ln x` with `0 · ln 0 = 0`.
fn weighted_ln<T: Scalar>(x: T, e: T) -> T {
    if e == T::zero() {
        T::zero()
    } else {
        e * x.ln()
    }
}

/// Pooled relative frequency of all context-based ratings for `task`.
pub fn empirical_prior<T: Scalar>(
    records: &[VideoRecord],
    task: Task,
) -> Result<CategoricalDistribution<T>, FusionError> {
    let space = task.space();
    let mut counts = vec![0usize; space.len()];
    for record in records {
        if let Some(set) = record.ratings(Condition::ContextBased, task) {
            for (c, n) in counts.iter_mut().zip(set.counts()) {
                *c += n;
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(FusionError::NoAnnotations(task));
    }
    let weights = counts.into_iter().map(T::from_count).collect();
    Ok(CategoricalDistribution::from_weights(space, weights)?)
}

/// A resolved prior plus fusion settings, ready to fuse many videos.
#[derive(Clone, Debug)]
pub struct Fuser<T> {
    prior: CategoricalDistribution<T>,
    epsilon: T,
    path: FusionPath,
}

impl<T: Scalar> Fuser<T> {
    pub fn new(prior: CategoricalDistribution<T>, epsilon: T, path: FusionPath) -> Self {
        Fuser { prior, epsilon, path }
    }

    pub fn from_config(
        config: &FusionConfig,
        task: Task,
        records: &[VideoRecord],
    ) -> Result<Self, FusionError> {
        Ok(Fuser {
            prior: config.prior.resolve(task, records)?,
            epsilon: T::lit(config.epsilon),
            path: config.path,
        })
    }

    pub fn prior(&self) -> &CategoricalDistribution<T> {
        &self.prior
    }

    pub fn plain(
        &self,
        face: &CategoricalDistribution<T>,
        context: &CategoricalDistribution<T>,
    ) -> Result<CategoricalDistribution<T>, FusionError> {
        bci(face, context, &self.prior, self.epsilon)
    }

    pub fn salience(
        &self,
        face: &CategoricalDistribution<T>,
        context: &CategoricalDistribution<T>,
        w: T,
    ) -> Result<CategoricalDistribution<T>, FusionError> {
        salience_bci_with(face, context, &self.prior, w, self.epsilon, self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::kld;
    use proptest::prelude::*;

    fn two(p: [f64; 2]) -> CategoricalDistribution<f64> {
        CategoricalDistribution::from_weights(LabelSpace::new(["a", "b"]).unwrap(), p.to_vec()).unwrap()
    }

    fn uniform2() -> CategoricalDistribution<f64> {
        two([0.5, 0.5])
    }

    #[test]
    fn uniform_fixed_point() {
        let u = CategoricalDistribution::<f64>::uniform(LabelSpace::basic_emotions());
        let out = bci(&u, &u, &u, 1e-6).unwrap();
        assert!(out.max_abs_diff(&u) < 1e-15);
    }

    #[test]
    fn plain_rule_arithmetic() {
        let out = bci(&two([0.8, 0.2]), &two([0.6, 0.4]), &uniform2(), 0.0).unwrap();
        assert!((out.probs()[0] - 0.48 / 0.56).abs() < 1e-12);
        assert!((out.probs()[1] - 0.08 / 0.56).abs() < 1e-12);
        assert!((out.probs()[0] - 0.857).abs() < 1e-3);
    }

    #[test]
    fn uniform_face_is_uninformative() {
        let out = bci(&uniform2(), &two([0.9, 0.1]), &uniform2(), 0.0).unwrap();
        assert!(out.max_abs_diff(&two([0.9, 0.1])) < 1e-12);
    }

    #[test]
    fn exponent_collapse() {
        let face = two([0.7, 0.3]);
        let ctx = two([0.2, 0.8]);
        for path in [FusionPath::Log, FusionPath::Direct] {
            let out = salience_bci_with(&face, &ctx, &uniform2(), 1.0, 0.0, path).unwrap();
            assert!(out.max_abs_diff(&face) < 1e-12);
            let out = salience_bci_with(&face, &ctx, &uniform2(), 0.0, 0.0, path).unwrap();
            assert!(out.max_abs_diff(&ctx) < 1e-12);
        }
    }

    #[test]
    fn geometric_mean_symmetry() {
        let out = salience_bci(&two([0.9, 0.1]), &two([0.1, 0.9]), &uniform2(), 0.5, 0.0).unwrap();
        assert!(out.max_abs_diff(&uniform2()) < 1e-12);
    }

    #[test]
    fn weight_out_of_range_is_an_error() {
        let u = uniform2();
        assert_eq!(
            salience_bci(&u, &u, &u, 1.2, 1e-6),
            Err(FusionError::WeightOutOfRange(1.2))
        );
        assert!(matches!(
            salience_bci(&u, &u, &u, -0.1, 1e-6),
            Err(FusionError::WeightOutOfRange(_))
        ));
    }

    #[test]
    fn zero_product_without_smoothing() {
        let out = bci(&two([1.0, 0.0]), &two([0.0, 1.0]), &uniform2(), 0.0);
        assert_eq!(out, Err(FusionError::AllZeroProduct));
        let out = bci(&two([1.0, 0.0]), &two([0.0, 1.0]), &uniform2(), 1e-6).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn space_mismatch() {
        let basic = CategoricalDistribution::<f64>::uniform(LabelSpace::basic_emotions());
        assert_eq!(
            bci(&basic, &uniform2(), &uniform2(), 1e-6),
            Err(FusionError::SpaceMismatch)
        );
    }

    #[test]
    fn prior_division() {
        // a non-uniform prior down-weights the commonly expected label
        let prior = two([0.8, 0.2]);
        let out = bci(&uniform2(), &uniform2(), &prior, 0.0).unwrap();
        assert!((out.probs()[0] - 0.2).abs() < 1e-12);
    }

    fn simplex(k: usize) -> impl Strategy<Value = CategoricalDistribution<f64>> {
        prop::collection::vec(0.0f64..1.0, k)
            .prop_filter("mass", |w| w.iter().sum::<f64>() > 1e-6)
            .prop_map(|w| CategoricalDistribution::from_weights(LabelSpace::basic_emotions(), w).unwrap())
    }

    proptest! {
        #[test]
        fn log_and_direct_paths_agree(f in simplex(7), c in simplex(7), p in simplex(7), w in 0.0f64..=1.0) {
            let a = salience_bci_with(&f, &c, &p, w, 1e-6, FusionPath::Log).unwrap();
            let b = salience_bci_with(&f, &c, &p, w, 1e-6, FusionPath::Direct).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-9);
            prop_assert!((a.sum() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn order_invariance_at_half(f in simplex(7), c in simplex(7)) {
            let u = CategoricalDistribution::uniform(LabelSpace::basic_emotions());
            let a = salience_bci(&f, &c, &u, 0.5, 1e-6).unwrap();
            let b = salience_bci(&c, &f, &u, 0.5, 1e-6).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-12);
        }

        #[test]
        fn weight_sweep_moves_toward_face(f in simplex(7), c in simplex(7)) {
            let u = CategoricalDistribution::uniform(LabelSpace::basic_emotions());
            let mut last_face = f64::INFINITY;
            let mut last_ctx = f64::NEG_INFINITY;
            for step in 0..=20 {
                let w = step as f64 / 20.0;
                let out = salience_bci(&f, &c, &u, w, 1e-6).unwrap();
                let to_face = kld(&out, &f.smooth(1e-6), 0.0).unwrap();
                let to_ctx = kld(&out, &c.smooth(1e-6), 0.0).unwrap();
                prop_assert!(to_face <= last_face + 1e-9);
                prop_assert!(to_ctx >= last_ctx - 1e-9);
                last_face = to_face;
                last_ctx = to_ctx;
            }
        }

        #[test]
        fn plain_and_half_weight_share_argmax_when_cues_agree(
            base in prop::collection::vec(0.01f64..1.0, 7), sharpen in 1.0f64..3.0
        ) {
            // face and context with the same ranking of labels
            let space = LabelSpace::basic_emotions();
            let f = CategoricalDistribution::from_weights(space.clone(), base.clone()).unwrap();
            let c = CategoricalDistribution::from_weights(space.clone(), base.iter().map(|x| x.powf(sharpen)).collect()).unwrap();
            let u = CategoricalDistribution::uniform(space);
            let plain = bci(&f, &c, &u, 1e-6).unwrap();
            let half = salience_bci(&f, &c, &u, 0.5, 1e-6).unwrap();
            let top = half.probs()[plain.argmax()];
            prop_assert!(half.probs().iter().all(|&p| p <= top * (1.0 + 1e-12)));
        }
    }
}
