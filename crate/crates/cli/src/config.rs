//! TOML config file, command-line overrides and the resolved settings that
//! feed the fingerprint. Flags always win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use cuefuse_core::expressivity::DEFAULT_WEIGHT_RANGE;
use cuefuse_core::fusion::FusionConfig;
use cuefuse_core::metrics::EvalOptions;
use cuefuse_core::pipeline::FaceSource;
use cuefuse_core::{
    CategoricalDistribution, ClosenessMetric, FusionPath, PearsonMode, PriorSpec, Task,
    WeightCalibration, DEFAULT_EPSILON,
};
use cuefuse_llm::prompt::DEFAULT_GAME_DESCRIPTION;
use cuefuse_llm::{
    Backend, BackendKind, LiveBackend, LiveConfig, MockBackend, QueryOptions,
    PROMPT_TEMPLATE_VERSION,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tasks: Option<Vec<Task>>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub expressivity: ExpressivitySection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub cues: CueSection,
    #[serde(default)]
    pub llm: LlmSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    /// `uniform`, `empirical`, or a path to a distribution JSON file.
    pub prior: Option<String>,
    pub epsilon: Option<f64>,
    pub path: Option<FusionPath>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressivitySection {
    pub weight_min: Option<f64>,
    pub weight_max: Option<f64>,
    pub calibration: Option<WeightCalibration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub pearson_mode: Option<PearsonMode>,
    pub closeness: Option<ClosenessMetric>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueSection {
    /// Name of a stored face model; context-free annotations when absent.
    pub face_model: Option<String>,
    /// `annotations` or `llm`.
    pub context: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub backend: Option<BackendKind>,
    pub mock_table: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub n_samples: Option<usize>,
    pub max_concurrency: Option<usize>,
    pub requests_per_second: Option<f64>,
    pub cache_dir: Option<PathBuf>,
    pub game_description: Option<String>,
}

/// A parsed config file and the directory its relative paths refer to.
#[derive(Debug, Default)]
pub struct Loaded {
    pub file: FileConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn read(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Loaded {
                file: FileConfig::default(),
                base: PathBuf::from("."),
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let file = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { file, base })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Manifest path from the flag or the file; it must exist.
    pub fn dataset(&self, flag: Option<&PathBuf>) -> CliResult<PathBuf> {
        let path = match (flag, &self.file.dataset) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => return Err(CliError::config("no dataset given (--dataset or `dataset`)")),
        };
        if !path.is_file() {
            return Err(CliError::config(format!("dataset manifest {} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn output(&self, flag: Option<&PathBuf>) -> CliResult<PathBuf> {
        match (flag, &self.file.output) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(CliError::config("no output directory given (--out or `output`)")),
        }
    }
}

#[derive(Args, Debug, Default, Clone)]
pub struct AnalysisArgs {
    /// Task to process; repeat for several (default: both)
    #[arg(long = "task")]
    pub tasks: Vec<Task>,
    /// Prior P(e): `uniform`, `empirical`, or a distribution JSON file
    #[arg(long)]
    pub prior: Option<String>,
    /// Additive smoothing applied before fusion and inside KLD
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Numerical route for the salience rule: `log` or `direct`
    #[arg(long)]
    pub fusion_path: Option<FusionPath>,
    #[arg(long)]
    pub weight_min: Option<f64>,
    #[arg(long)]
    pub weight_max: Option<f64>,
    /// `batch`, or `fixed:MIN:MAX` to map raw scores against a frozen range
    #[arg(long)]
    pub calibration: Option<String>,
    /// Use this stored face model instead of context-free annotations
    #[arg(long)]
    pub face_model: Option<String>,
    /// Correlation aggregation for distributions: `pooled` or `per_video`
    #[arg(long)]
    pub pearson_mode: Option<PearsonMode>,
    /// Closeness distance for the salience analysis: `kld`, `l1` or `l2`
    #[arg(long)]
    pub closeness_metric: Option<ClosenessMetric>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct LlmArgs {
    /// Context cue for fusion: `annotations` or `llm`
    #[arg(long)]
    pub context_source: Option<String>,
    /// Mock response table (JSON); selects the mock backend
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Completions per outcome
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
}

/// How the context-only cue is obtained; part of the fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ContextSetting {
    Annotations,
    Llm {
        backend: String,
        n_samples: usize,
        template: String,
        game_description: String,
    },
}

/// Everything needed to talk to a completion backend.
#[derive(Clone, Debug)]
pub struct LlmSettings {
    pub kind: BackendKind,
    pub mock_table: Option<PathBuf>,
    pub live: LiveConfig,
    pub n_samples: usize,
    pub game_description: String,
    pub query: QueryOptions,
}

impl LlmSettings {
    pub fn resolve(loaded: &Loaded, args: &LlmArgs) -> CliResult<Self> {
        let s = &loaded.file.llm;
        let mock_table = args.mock.clone().or_else(|| s.mock_table.as_ref().map(|p| loaded.resolve(p)));
        let kind = if args.mock.is_some() {
            BackendKind::Mock
        } else {
            s.backend.unwrap_or(if mock_table.is_some() {
                BackendKind::Mock
            } else {
                BackendKind::Live
            })
        };
        let n_samples = args.n_samples.or(s.n_samples).unwrap_or(cuefuse_llm::prompt::DEFAULT_SAMPLES);
        if n_samples == 0 {
            return Err(CliError::config("n_samples must be at least 1"));
        }
        let defaults = QueryOptions::default();
        let max_concurrency = args.max_concurrency.or(s.max_concurrency).unwrap_or(defaults.max_concurrency);
        Ok(LlmSettings {
            kind,
            mock_table,
            live: LiveConfig {
                base_url: args.base_url.clone().or_else(|| s.base_url.clone()).unwrap_or_default(),
                model: args.model.clone().or_else(|| s.model.clone()).unwrap_or_default(),
                api_key_env: s
                    .api_key_env
                    .clone()
                    .unwrap_or_else(|| cuefuse_llm::backend::DEFAULT_API_KEY_ENV.to_string()),
                timeout_secs: 60,
                temperature: 1.0,
            },
            n_samples,
            game_description: s
                .game_description
                .clone()
                .unwrap_or_else(|| DEFAULT_GAME_DESCRIPTION.to_string()),
            query: QueryOptions {
                max_concurrency: max_concurrency.max(1),
                requests_per_second: s.requests_per_second,
                burst: max_concurrency.max(1),
                cache_dir: args.cache_dir.clone().or_else(|| s.cache_dir.as_ref().map(|p| loaded.resolve(p))),
                ..defaults
            },
        })
    }

    pub fn backend(&self) -> CliResult<Box<dyn Backend>> {
        match self.kind {
            BackendKind::Mock => {
                let path = self
                    .mock_table
                    .as_ref()
                    .ok_or_else(|| CliError::config("mock backend selected without a mock table"))?;
                Ok(Box::new(MockBackend::from_file(path)?))
            }
            BackendKind::Live => {
                if self.live.base_url.is_empty() || self.live.model.is_empty() {
                    return Err(CliError::config("live backend needs `base_url` and `model`"));
                }
                Ok(Box::new(LiveBackend::from_env(self.live.clone())?))
            }
        }
    }
}

/// Resolved analysis settings. Serialized into the config fingerprint.
#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub tasks: Vec<Task>,
    pub fusion: FusionConfig,
    pub calibration: WeightCalibration,
    pub eval: EvalOptions,
    pub closeness: ClosenessMetric,
    pub face: FaceSource,
    pub context: ContextSetting,
    #[serde(skip)]
    pub llm: Option<LlmSettings>,
}

fn parse_calibration(s: &str) -> CliResult<WeightCalibration> {
    if s == "batch" {
        return Ok(WeightCalibration::Batch);
    }
    let bad = || CliError::config(format!("calibration `{s}`: expected `batch` or `fixed:MIN:MAX`"));
    let rest = s.strip_prefix("fixed:").ok_or_else(bad)?;
    let (min, max) = rest.split_once(':').ok_or_else(bad)?;
    let min: f64 = min.parse().map_err(|_| bad())?;
    let max: f64 = max.parse().map_err(|_| bad())?;
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(bad());
    }
    Ok(WeightCalibration::Fixed { min, max })
}

fn parse_prior(loaded: &Loaded, s: &str, from_flag: bool) -> CliResult<PriorSpec> {
    match s {
        "uniform" => Ok(PriorSpec::Uniform),
        "empirical" => Ok(PriorSpec::Empirical),
        path => {
            let path = if from_flag {
                PathBuf::from(path)
            } else {
                loaded.resolve(Path::new(path))
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::config(format!("prior {}: {e}", path.display())))?;
            let dist: CategoricalDistribution<f64> = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("prior {}: {e}", path.display())))?;
            Ok(PriorSpec::Explicit { dist })
        }
    }
}

impl Settings {
    pub fn resolve(loaded: &Loaded, a: &AnalysisArgs, l: Option<&LlmArgs>) -> CliResult<Self> {
        let f = &loaded.file;
        let tasks = if !a.tasks.is_empty() {
            a.tasks.clone()
        } else {
            f.tasks.clone().unwrap_or_else(|| Task::ALL.to_vec())
        };
        let mut tasks_sorted = tasks;
        tasks_sorted.sort();
        tasks_sorted.dedup();

        let prior = match (&a.prior, &f.fusion.prior) {
            (Some(p), _) => parse_prior(loaded, p, true)?,
            (None, Some(p)) => parse_prior(loaded, p, false)?,
            (None, None) => PriorSpec::Uniform,
        };
        let epsilon = a.epsilon.or(f.fusion.epsilon).unwrap_or(DEFAULT_EPSILON);
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(CliError::config(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        let weight_range = (
            a.weight_min.or(f.expressivity.weight_min).unwrap_or(DEFAULT_WEIGHT_RANGE.0),
            a.weight_max.or(f.expressivity.weight_max).unwrap_or(DEFAULT_WEIGHT_RANGE.1),
        );
        if !(0.0 <= weight_range.0 && weight_range.0 <= weight_range.1 && weight_range.1 <= 1.0) {
            return Err(CliError::config(format!(
                "weight range [{}, {}] must satisfy 0 <= min <= max <= 1",
                weight_range.0, weight_range.1
            )));
        }
        let calibration = match &a.calibration {
            Some(s) => parse_calibration(s)?,
            None => f.expressivity.calibration.unwrap_or_default(),
        };
        let fusion = FusionConfig {
            prior,
            epsilon,
            weight_range,
            path: a.fusion_path.or(f.fusion.path).unwrap_or_default(),
        };
        let eval = EvalOptions {
            pearson_mode: a.pearson_mode.or(f.metrics.pearson_mode).unwrap_or_default(),
            epsilon,
        };
        let face = match a.face_model.clone().or_else(|| f.cues.face_model.clone()) {
            Some(name) => FaceSource::Model(name),
            None => FaceSource::Annotations,
        };

        let source = l
            .and_then(|l| l.context_source.clone())
            .or_else(|| f.cues.context.clone())
            .unwrap_or_else(|| "annotations".into());
        let (context, llm) = match source.as_str() {
            "annotations" => (ContextSetting::Annotations, None),
            "llm" => {
                let settings = LlmSettings::resolve(loaded, l.cloned().as_ref().unwrap_or(&LlmArgs::default()))?;
                let backend = settings.backend()?;
                (
                    ContextSetting::Llm {
                        backend: backend.id(),
                        n_samples: settings.n_samples,
                        template: PROMPT_TEMPLATE_VERSION.to_string(),
                        game_description: settings.game_description.clone(),
                    },
                    Some(settings),
                )
            }
            other => {
                return Err(CliError::config(format!(
                    "context source `{other}`: expected `annotations` or `llm`"
                )))
            }
        };

        Ok(Settings {
            tasks: tasks_sorted,
            fusion,
            calibration,
            eval,
            closeness: a.closeness_metric.or(f.metrics.closeness).unwrap_or_default(),
            face,
            context,
            llm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_strings() {
        assert_eq!(parse_calibration("batch").unwrap(), WeightCalibration::Batch);
        assert_eq!(
            parse_calibration("fixed:-1.5:2").unwrap(),
            WeightCalibration::Fixed { min: -1.5, max: 2.0 }
        );
        assert!(parse_calibration("fixed:2:1").is_err());
        assert!(parse_calibration("fixed").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file: FileConfig = toml::from_str(
            r#"
            tasks = ["valence"]
            [fusion]
            epsilon = 0.01
            prior = "empirical"
            [metrics]
            pearson_mode = "per_video"
            "#,
        )
        .unwrap();
        let loaded = Loaded {
            file,
            base: PathBuf::from("."),
        };
        let s = Settings::resolve(&loaded, &AnalysisArgs::default(), None).unwrap();
        assert_eq!(s.tasks, vec![Task::Valence]);
        assert_eq!(s.fusion.epsilon, 0.01);
        assert_eq!(s.fusion.prior, PriorSpec::Empirical);
        assert_eq!(s.eval.pearson_mode, PearsonMode::PerVideo);

        let args = AnalysisArgs {
            epsilon: Some(0.5),
            prior: Some("uniform".into()),
            tasks: vec![Task::BasicEmotion, Task::Valence, Task::BasicEmotion],
            ..AnalysisArgs::default()
        };
        let s = Settings::resolve(&loaded, &args, None).unwrap();
        assert_eq!(s.fusion.epsilon, 0.5);
        assert_eq!(s.eval.epsilon, 0.5);
        assert_eq!(s.fusion.prior, PriorSpec::Uniform);
        assert_eq!(s.tasks, vec![Task::Valence, Task::BasicEmotion]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[fusion]\nepsilom = 1.0").is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let loaded = Loaded::default();
        let bad = |a: AnalysisArgs| matches!(Settings::resolve(&loaded, &a, None), Err(CliError::Config(_)));
        assert!(bad(AnalysisArgs {
            epsilon: Some(-1.0),
            ..Default::default()
        }));
        assert!(bad(AnalysisArgs {
            weight_min: Some(0.9),
            weight_max: Some(0.8),
            ..Default::default()
        }));
        assert!(bad(AnalysisArgs {
            prior: Some("/no/such/prior.json".into()),
            ..Default::default()
        }));
    }
}
