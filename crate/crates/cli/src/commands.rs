use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cuefuse_core::expressivity::{read_weights_csv, validate_against_human, write_scores_csv};
use cuefuse_core::fusion::Fuser;
use cuefuse_core::ingest::{load_dataset, write_dataset, Dataset};
use cuefuse_core::metrics::{
    closeness_svg, evaluate, render_table, write_closeness_csv, AggregateMetrics, ClosenessReport,
    EvaluationReport,
};
use cuefuse_core::pipeline::{
    compare_variants, compute_expressivity, fuse_variants, gather_cues, salience_analysis,
    ContextSource, PipelineError, VariantComparison,
};
use cuefuse_core::synth::{generate, SynthConfig, WeightLink};
use cuefuse_core::{
    CategoricalDistribution, Condition, ExpressivityScore, JointOutcome, Task, Tertile, VideoRecord,
};
use cuefuse_llm::{query_context, ContextQuerySpec, QueryResult};
use serde::{Deserialize, Serialize};

use crate::config::{ContextSetting, LlmSettings, Loaded, Settings};
use crate::error::{CliError, CliResult};
use crate::output::{dataset_digest, fingerprint, json_string, stamp_svg, trailer, write_bytes, write_json};

pub fn load(path: &Path) -> CliResult<Dataset> {
    let dataset = load_dataset(path)?;
    for w in &dataset.warnings {
        tracing::warn!(video_id = %w.video_id, "{}", w.message);
    }
    tracing::info!(videos = dataset.records.len(), "loaded {}", path.display());
    Ok(dataset)
}

// validate

pub fn validate(loaded: &Loaded, dataset: Option<&PathBuf>) -> CliResult<()> {
    let path = loaded.dataset(dataset)?;
    let data = load(&path)?;
    let records = &data.records;
    let with_features = records.iter().filter(|r| r.features.is_some()).count();
    let mut models: Vec<&str> = records
        .iter()
        .flat_map(|r| r.model_predictions.keys().map(String::as_str))
        .collect();
    models.sort_unstable();
    models.dedup();
    println!("dataset: {}", path.display());
    println!("videos: {}", records.len());
    println!("with features: {with_features}");
    for task in Task::ALL {
        for condition in [Condition::ContextFree, Condition::ContextOnly, Condition::ContextBased] {
            let n = records.iter().filter(|r| r.ratings(condition, task).is_some()).count();
            println!("{condition}/{task}: {n}");
        }
    }
    println!("face models: {}", if models.is_empty() { "none".to_string() } else { models.join(", ") });
    println!("warnings: {}", data.warnings.len());
    println!("sha256: {}", dataset_digest(records));
    Ok(())
}

// expressivity

fn scores_for(records: &[VideoRecord], settings: &Settings) -> CliResult<Vec<ExpressivityScore>> {
    Ok(compute_expressivity(
        records,
        settings.fusion.weight_range,
        settings.calibration,
    )?)
}

fn write_scores(path: &Path, scores: &[ExpressivityScore], fp: &str) -> CliResult<()> {
    let mut buf = Vec::new();
    write_scores_csv(scores, &mut buf, &trailer(fp)).map_err(|e| CliError::Data(format!("expressivity: {e}")))?;
    write_bytes(path, &buf)
}

pub fn expressivity(loaded: &Loaded, dataset: Option<&PathBuf>, out: &Path, settings: &Settings) -> CliResult<()> {
    let data = load(&loaded.dataset(dataset)?)?;
    let fp = fingerprint(
        settings,
        &dataset_digest(&data.records),
        serde_json::json!({ "command": "expressivity" }),
    );
    let scores = scores_for(&data.records, settings)?;
    log_human_validation(&data.records, &scores);
    write_scores(out, &scores, &fp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanValidation {
    pub n: usize,
    pub pearson: f64,
}

fn human_validation(records: &[VideoRecord], scores: &[ExpressivityScore]) -> Option<HumanValidation> {
    let raw: BTreeMap<&str, f64> = scores.iter().map(|s| (s.video_id.as_str(), s.raw)).collect();
    let (x, y): (Vec<f64>, Vec<i64>) = records
        .iter()
        .filter_map(|r| Some((*raw.get(r.video_id.as_str())?, i64::from(r.human_expressivity?))))
        .unzip();
    if x.len() < 3 {
        return None;
    }
    match validate_against_human(&x, &y) {
        Ok(r) => Some(HumanValidation { n: x.len(), pearson: r }),
        Err(e) => {
            tracing::warn!("expressivity: human validation skipped: {e}");
            None
        }
    }
}

fn log_human_validation(records: &[VideoRecord], scores: &[ExpressivityScore]) -> Option<HumanValidation> {
    let v = human_validation(records, scores);
    if let Some(v) = &v {
        tracing::info!(n = v.n, "expressivity: correlation with human ratings r = {:.3}", v.pearson);
    }
    v
}

// context cues

#[derive(Serialize)]
struct OutcomeContext {
    prompt_sha256: String,
    labels: Vec<String>,
    distribution: CategoricalDistribution<f64>,
}

#[derive(Serialize)]
struct ContextFile<'a> {
    config_fingerprint: &'a str,
    task: Task,
    context: &'a ContextSetting,
    outcomes: BTreeMap<JointOutcome, OutcomeContext>,
}

fn query_outcome(llm: &LlmSettings, outcome: JointOutcome, task: Task) -> CliResult<QueryResult> {
    let backend = llm.backend()?;
    let spec = ContextQuerySpec {
        outcome,
        game_description: llm.game_description.clone(),
        task,
        n_samples: llm.n_samples,
        backend: llm.kind,
    };
    let result = query_context(&spec, backend.as_ref(), &llm.query)?;
    tracing::info!(
        outcome = %outcome,
        task = %task,
        cache_hits = result.cache_hits,
        backend_calls = result.backend_calls,
        "context-llm: queried"
    );
    Ok(result)
}

/// Context cue source for `task`; queries the language model once per
/// outcome present in the data when configured to.
fn context_source(
    records: &[VideoRecord],
    task: Task,
    settings: &Settings,
    fp: &str,
    out_dir: Option<&Path>,
) -> CliResult<ContextSource<f64>> {
    let Some(llm) = &settings.llm else {
        return Ok(ContextSource::Annotations);
    };
    let mut outcomes: Vec<JointOutcome> = records.iter().map(|r| r.outcome).collect();
    outcomes.sort();
    outcomes.dedup();
    let mut map = BTreeMap::new();
    let mut file = BTreeMap::new();
    for outcome in outcomes {
        let r = query_outcome(llm, outcome, task)?;
        map.insert(outcome, r.distribution.clone());
        file.insert(
            outcome,
            OutcomeContext {
                prompt_sha256: r.prompt_sha256,
                labels: r.labels,
                distribution: r.distribution,
            },
        );
    }
    if let Some(dir) = out_dir {
        write_json(
            &dir.join(format!("context_{task}.json")),
            &ContextFile {
                config_fingerprint: fp,
                task,
                context: &settings.context,
                outcomes: file,
            },
        )?;
    }
    Ok(ContextSource::PerOutcome(map))
}

// fuse

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithoutSalience,
    WithSalience,
}

impl Variant {
    fn as_str(self) -> &'static str {
        match self {
            Variant::WithoutSalience => "without_salience",
            Variant::WithSalience => "with_salience",
        }
    }

    fn row_label(self) -> &'static str {
        match self {
            Variant::WithoutSalience => "BCI without salience",
            Variant::WithSalience => "BCI with salience",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedFile {
    pub config_fingerprint: String,
    pub task: Task,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weights: BTreeMap<String, f64>,
    pub predictions: BTreeMap<String, CategoricalDistribution<f64>>,
}

fn fused_path(dir: &Path, task: Task, variant: Variant) -> PathBuf {
    dir.join(format!("fused_{task}_{}.json", variant.as_str()))
}

pub struct FuseArgs<'a> {
    pub dataset: Option<&'a PathBuf>,
    pub out: &'a Path,
    pub no_salience: bool,
    pub weights: Option<&'a PathBuf>,
}

fn read_weights(path: &Path) -> CliResult<(BTreeMap<String, f64>, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("weights {}: {e}", path.display())))?;
    let digest = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
    let rows = read_weights_csv(bytes.as_slice())
        .map_err(|e| CliError::Data(format!("expressivity: {}: {e}", path.display())))?;
    Ok((rows.into_iter().collect(), digest))
}

pub fn fuse(loaded: &Loaded, args: FuseArgs<'_>, settings: &Settings) -> CliResult<()> {
    let data = load(&loaded.dataset(args.dataset)?)?;
    let records = &data.records;
    let (weights, weights_digest) = match args.weights {
        Some(p) => {
            let (w, d) = read_weights(p)?;
            (w, Some(d))
        }
        None => {
            let scores = scores_for(records, settings)?;
            (scores.iter().map(|s| (s.video_id.clone(), s.weight)).collect(), None)
        }
    };
    let fp = fingerprint(
        settings,
        &dataset_digest(records),
        serde_json::json!({
            "command": "fuse",
            "salience": !args.no_salience,
            "weights_sha256": weights_digest,
        }),
    );
    for &task in &settings.tasks {
        let context = context_source(records, task, settings, &fp, Some(args.out))?;
        let cues = gather_cues(records, task, &settings.face, &context)?;
        let fuser = Fuser::from_config(&settings.fusion, task, records).map_err(PipelineError::from)?;
        let fused = fuse_variants(&cues, &weights, &fuser)?;
        write_json(
            &fused_path(args.out, task, Variant::WithoutSalience),
            &FusedFile {
                config_fingerprint: fp.clone(),
                task,
                variant: Variant::WithoutSalience,
                weights: BTreeMap::new(),
                predictions: fused.without_salience,
            },
        )?;
        if !args.no_salience {
            let used = cues.iter().map(|c| (c.video_id.clone(), weights[&c.video_id])).collect();
            write_json(
                &fused_path(args.out, task, Variant::WithSalience),
                &FusedFile {
                    config_fingerprint: fp.clone(),
                    task,
                    variant: Variant::WithSalience,
                    weights: used,
                    predictions: fused.with_salience,
                },
            )?;
        }
    }
    Ok(())
}

// evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub predictions_fingerprint: String,
    pub report: EvaluationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub config_fingerprint: String,
    pub reports: Vec<VariantReport>,
}

fn truths(records: &[VideoRecord], task: Task) -> CliResult<BTreeMap<String, CategoricalDistribution<f64>>> {
    records
        .iter()
        .map(|r| {
            let d = r
                .distribution(Condition::ContextBased, task)
                .transpose()
                .map_err(|e| CliError::Data(format!("ingest: video `{}`: {e}", r.video_id)))?
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "metrics: video `{}` lacks context_based/{task} judgments",
                        r.video_id
                    ))
                })?;
            Ok((r.video_id.clone(), d))
        })
        .collect()
}

fn table_text(rows: &[(Variant, &EvaluationReport)], fp: &str) -> String {
    let labelled: Vec<(&str, &EvaluationReport)> = rows.iter().map(|(v, r)| (v.row_label(), *r)).collect();
    format!("{}\nconfig_fingerprint: {fp}\n", render_table(&labelled).trim_end())
}

pub fn evaluate_cmd(
    loaded: &Loaded,
    dataset: Option<&PathBuf>,
    predictions: &[PathBuf],
    out: &Path,
    table: Option<&PathBuf>,
    settings: &Settings,
) -> CliResult<()> {
    let data = load(&loaded.dataset(dataset)?)?;
    let mut files = Vec::new();
    for p in predictions {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
        let f: FusedFile =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("fusion: {}: {e}", p.display())))?;
        files.push(f);
    }
    files.sort_by(|a, b| (a.task, a.variant).cmp(&(b.task, b.variant)));
    let fused_fps: Vec<&str> = files.iter().map(|f| f.config_fingerprint.as_str()).collect();
    let fp = fingerprint(
        settings,
        &dataset_digest(&data.records),
        serde_json::json!({ "command": "evaluate", "predictions": fused_fps }),
    );
    let mut reports = Vec::new();
    for f in &files {
        let truth = truths(&data.records, f.task)?;
        let report = evaluate(&f.predictions, &truth, f.task, &settings.eval, &fp)
            .map_err(|e| CliError::Data(format!("metrics: {e}")))?;
        reports.push(VariantReport {
            variant: f.variant,
            predictions_fingerprint: f.config_fingerprint.clone(),
            report,
        });
    }
    if let Some(path) = table {
        let rows: Vec<_> = reports.iter().map(|r| (r.variant, &r.report)).collect();
        write_bytes(path, table_text(&rows, &fp).as_bytes())?;
    }
    write_json(
        out,
        &EvaluationFile {
            config_fingerprint: fp,
            reports,
        },
    )
}

// analyze-salience

fn write_closeness(dir: &Path, task: Task, report: &ClosenessReport, fp: &str, svg: bool) -> CliResult<()> {
    let mut buf = Vec::new();
    write_closeness_csv(report, &mut buf, &trailer(fp)).map_err(|e| CliError::Data(format!("metrics: {e}")))?;
    write_bytes(&dir.join(format!("salience_{task}.csv")), &buf)?;
    if svg {
        let title = format!("Context-based judgments closer to each cue ({task})");
        let image = stamp_svg(&closeness_svg(report, &title), fp);
        write_bytes(&dir.join(format!("salience_{task}.svg")), image.as_bytes())?;
    }
    Ok(())
}

pub fn analyze_salience(
    loaded: &Loaded,
    dataset: Option<&PathBuf>,
    out: &Path,
    svg: bool,
    settings: &Settings,
) -> CliResult<()> {
    let data = load(&loaded.dataset(dataset)?)?;
    let fp = fingerprint(
        settings,
        &dataset_digest(&data.records),
        serde_json::json!({ "command": "analyze-salience" }),
    );
    let scores = scores_for(&data.records, settings)?;
    for &task in &settings.tasks {
        let eps = settings.eval.epsilon;
        let report = salience_analysis(&data.records, task, &scores, settings.closeness, eps)?;
        write_closeness(out, task, &report, &fp, svg)?;
    }
    Ok(())
}

// query-context

#[derive(Serialize)]
struct QueryFile<'a> {
    config_fingerprint: String,
    outcome: JointOutcome,
    task: Task,
    backend: String,
    n_samples: usize,
    template: &'a str,
    prompt_sha256: String,
    labels: Vec<String>,
    distribution: CategoricalDistribution<f64>,
}

pub fn query_context_cmd(
    llm: &LlmSettings,
    outcome: JointOutcome,
    task: Task,
    out: Option<&PathBuf>,
) -> CliResult<()> {
    let backend_id = llm.backend()?.id();
    let result = query_outcome(llm, outcome, task)?;
    let fp = cuefuse_core::metrics::config_fingerprint(&serde_json::json!({
        "command": "query-context",
        "backend": backend_id,
        "n_samples": llm.n_samples,
        "template": cuefuse_llm::PROMPT_TEMPLATE_VERSION,
        "game_description": llm.game_description,
        "outcome": outcome,
        "task": task,
    }));
    let file = QueryFile {
        config_fingerprint: fp,
        outcome,
        task,
        backend: backend_id,
        n_samples: llm.n_samples,
        template: cuefuse_llm::PROMPT_TEMPLATE_VERSION,
        prompt_sha256: result.prompt_sha256,
        labels: result.labels,
        distribution: result.distribution,
    };
    match out {
        Some(path) => write_json(path, &file),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{}", json_string(&file)) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}

// simulate

#[derive(Serialize)]
struct TruthVideo {
    weight: f64,
    expressivity: f64,
}

#[derive(Serialize)]
struct GroundTruthFile<'a> {
    config_fingerprint: String,
    synth_config: &'a SynthConfig,
    realized_human_correlation: Option<f64>,
    dataset_sha256: String,
    videos: BTreeMap<String, TruthVideo>,
}

pub fn parse_weight_link(s: &str) -> Result<WeightLink, String> {
    match s {
        "linear" => Ok(WeightLink::LinearInExpressivity),
        other => match other.strip_prefix("constant:").map(str::parse::<f64>) {
            Some(Ok(w)) => Ok(WeightLink::Constant { w }),
            _ => Err(format!("weight link `{other}`: expected `linear` or `constant:W`")),
        },
    }
}

pub fn simulate(out: &Path, config: &SynthConfig) -> CliResult<()> {
    if out.join("manifest.json").exists() {
        return Err(CliError::config(format!(
            "{} already holds a dataset; choose an empty directory",
            out.display()
        )));
    }
    let data = generate(config)?;
    let manifest = write_dataset(out, &data.records)?;
    tracing::info!(path = %manifest.display(), videos = data.records.len(), "simulate: wrote dataset");
    let videos = data
        .truth
        .iter()
        .map(|(id, t)| {
            (
                id.clone(),
                TruthVideo {
                    weight: t.weight,
                    expressivity: t.expressivity,
                },
            )
        })
        .collect();
    write_json(
        &out.join("ground_truth.json"),
        &GroundTruthFile {
            config_fingerprint: cuefuse_core::metrics::config_fingerprint(config),
            synth_config: config,
            realized_human_correlation: data.realized_human_correlation,
            dataset_sha256: dataset_digest(&data.records),
            videos,
        },
    )
}

// run

#[derive(Serialize)]
struct TaskSummary {
    task: Task,
    without_salience: AggregateMetrics,
    with_salience: AggregateMetrics,
    salience_wins: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    face_closer_proportion: Option<BTreeMap<&'static str, Option<f64>>>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config_fingerprint: &'a str,
    dataset_sha256: &'a str,
    n_videos: usize,
    settings: &'a Settings,
    human_validation: Option<HumanValidation>,
    tasks: Vec<TaskSummary>,
}

fn has_all_conditions(records: &[VideoRecord], task: Task) -> bool {
    records.iter().all(|r| {
        [Condition::ContextFree, Condition::ContextOnly, Condition::ContextBased]
            .iter()
            .all(|&c| r.ratings(c, task).is_some())
    })
}

pub fn run(loaded: &Loaded, dataset: Option<&PathBuf>, out: &Path, settings: &Settings) -> CliResult<()> {
    let data = load(&loaded.dataset(dataset)?)?;
    let records = &data.records;
    let digest = dataset_digest(records);
    let fp = fingerprint(settings, &digest, serde_json::json!({ "command": "run" }));
    tracing::info!(config_fingerprint = %fp, "run: starting");

    let scores = scores_for(records, settings)?;
    write_scores(&out.join("expressivity.csv"), &scores, &fp)?;
    let human = log_human_validation(records, &scores);

    let mut summaries = Vec::new();
    let mut table_rows: Vec<(Variant, EvaluationReport)> = Vec::new();
    for &task in &settings.tasks {
        let context = context_source(records, task, settings, &fp, Some(out))?;
        let (comparison, fused) = compare_variants(
            records,
            task,
            &scores,
            &settings.fusion,
            &settings.eval,
            &settings.face,
            &context,
            &fp,
        )?;
        let weights: BTreeMap<String, f64> = scores.iter().map(|s| (s.video_id.clone(), s.weight)).collect();
        for (variant, predictions, weights) in [
            (Variant::WithoutSalience, fused.without_salience, BTreeMap::new()),
            (Variant::WithSalience, fused.with_salience, weights),
        ] {
            write_json(
                &fused_path(out, task, variant),
                &FusedFile {
                    config_fingerprint: fp.clone(),
                    task,
                    variant,
                    weights,
                    predictions,
                },
            )?;
        }
        let VariantComparison {
            without_salience,
            with_salience,
            ..
        } = comparison.clone();
        for (variant, report) in [
            (Variant::WithoutSalience, &without_salience),
            (Variant::WithSalience, &with_salience),
        ] {
            write_json(&out.join(format!("report_{task}_{}.json", variant.as_str())), report)?;
        }

        let closeness = if has_all_conditions(records, task) {
            let report = salience_analysis(records, task, &scores, settings.closeness, settings.eval.epsilon)?;
            write_closeness(out, task, &report, &fp, true)?;
            Some(Tertile::ALL.into_iter().map(|t| (t.as_str(), report.face_closer_proportion(t))).collect())
        } else {
            tracing::warn!(task = %task, "salience analysis skipped: not every video has all three conditions");
            None
        };

        tracing::info!(
            task = %task,
            without = VariantComparison::headline(&without_salience),
            with = VariantComparison::headline(&with_salience),
            "run: evaluated"
        );
        summaries.push(TaskSummary {
            task,
            without_salience: without_salience.aggregate.clone(),
            with_salience: with_salience.aggregate.clone(),
            salience_wins: comparison.salience_wins(),
            face_closer_proportion: closeness,
        });
        table_rows.push((Variant::WithoutSalience, without_salience));
        table_rows.push((Variant::WithSalience, with_salience));
    }

    let rows: Vec<_> = table_rows.iter().map(|(v, r)| (*v, r)).collect();
    write_bytes(&out.join("summary.txt"), table_text(&rows, &fp).as_bytes())?;
    write_json(
        &out.join("summary.json"),
        &RunSummary {
            config_fingerprint: &fp,
            dataset_sha256: &digest,
            n_videos: records.len(),
            settings,
            human_validation: human,
            tasks: summaries,
        },
    )
}
