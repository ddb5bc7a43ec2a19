//! Subcommands of the `reviewad` binary.
//!
//! Each command prints one JSON document on stdout. Failures surface as
//! [`reviewad_core::Error`] values, which `main` renders as structured JSON
//! on stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use reviewad_core::config::PipelineConfig;
use reviewad_core::corpus::{build_scenario, load_reviews, split_folds, Label, Review, Scenario};
use reviewad_core::detector::{
    embeddings_to_matrix, load_model, save_model, DetectorKind, DetectorModel,
};
use reviewad_core::encoder::{save_cache, CacheProvider, EmbeddingCache, ProviderKind};
use reviewad_core::eval::{
    aggregate_rankings, emit_report, grid_search, render_table, run_cv, summarize_effects,
    EmbeddedScenario, Report,
};
use reviewad_core::explain::{
    build_term_list_from_reviews, dedup_terms, explain_frequent, explain_occlusion, HttpLlmClient,
    LlmExplainer, PromptTemplates, Technique, TermList,
};
use reviewad_core::survey::{demo_config, SurveyConfig, SurveyExport, SurveyStore};
use reviewad_core::synthetic::{gaussian_scenario, SyntheticSpec};
use reviewad_core::thresholding::{select_threshold, Classification, ErrorSample, ThresholdPolicy};
use reviewad_core::{Error, Result};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(
    name = "reviewad",
    version,
    about = "Detect and explain off-topic product reviews"
)]
pub struct Cli {
    /// Pipeline config (TOML). Without it, `--seed` is required and defaults apply.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// outlierIQR, extremeIQR or Q<percentile>.
    #[arg(long, global = true)]
    pub threshold: Option<ThresholdPolicy>,
    /// daef or elm.
    #[arg(long, global = true)]
    pub detector: Option<DetectorKind>,
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SyntheticKind {
    Far,
    Near,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the configured review files and check the scenario.
    Ingest,
    /// Embed every scenario review and write the embedding cache.
    Encode,
    /// Train the detector on the normal reviews and store it with its threshold.
    Train,
    /// Score and label reviews with the stored model.
    Classify {
        /// JSONL reviews; defaults to the normal review file.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Explain the model's verdict on one review.
    Explain {
        #[arg(long)]
        review: String,
        /// frequent_terms, occlusion or llm; repeatable.
        #[arg(long = "method", default_value = "frequent_terms")]
        methods: Vec<Technique>,
    },
    /// Cross-validate the configured detector and write a report.
    Evaluate {
        /// Use a generated two-cluster scenario instead of the review files.
        #[arg(long)]
        synthetic: Option<SyntheticKind>,
        /// Survey export whose effects and rankings join the report.
        #[arg(long)]
        survey_export: Option<PathBuf>,
    },
    /// Cross-validate every configured grid combination and pick the best.
    Grid {
        #[arg(long)]
        synthetic: Option<SyntheticKind>,
    },
    /// Build the deduplicated frequent-term list of the normal product.
    Terms,
    /// Serve the survey over HTTP until interrupted.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

/// Config file (or defaults) with command-line overrides applied and re-validated.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let seed = cli.seed.ok_or_else(|| Error::Config {
                key: "seed".into(),
                message: "missing; pass --config or --seed".into(),
            })?;
            PipelineConfig::from_toml_str(&format!("seed = {seed}"))?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threshold {
        cfg.threshold = t;
    }
    if let Some(d) = cli.detector {
        cfg.detector.kind = d;
    }
    if let Some(r) = &cli.report {
        cfg.paths.report = Some(r.clone());
    }
    if let Command::Serve { listen: Some(l) } = &cli.command {
        cfg.survey.listen = l.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Value> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Ingest => ingest(&cfg),
        Command::Encode => encode(&cfg),
        Command::Train => train(&cfg),
        Command::Classify { input } => classify(&cfg, input.as_deref()),
        Command::Explain { review, methods } => explain(&cfg, review, methods),
        Command::Evaluate {
            synthetic,
            survey_export,
        } => evaluate(&cfg, *synthetic, survey_export.as_deref()),
        Command::Grid { synthetic } => grid(&cfg, *synthetic),
        Command::Terms => terms(&cfg),
        Command::Serve { .. } => serve(&cfg),
    }
}

fn load_scenario(cfg: &PipelineConfig) -> Result<Scenario> {
    let normal = load_reviews(cfg.existing_path("paths.reviews")?)?;
    if cfg.paths.anomalous.is_empty() {
        return Err(Error::Config {
            key: "paths.anomalous".into(),
            message: "at least one anomalous review file is required".into(),
        });
    }
    let anomalous = cfg
        .paths
        .anomalous
        .iter()
        .map(load_reviews)
        .collect::<Result<Vec<_>>>()?;
    build_scenario(normal, anomalous, cfg.scenario_kind())
}

fn ingest(cfg: &PipelineConfig) -> Result<Value> {
    let s = load_scenario(cfg)?;
    let anomalous: Vec<Value> = s
        .anomalous
        .iter()
        .map(|a| json!({"product_id": a.product_id(), "reviews": a.len()}))
        .collect();
    Ok(json!({
        "scenario": s.name(),
        "kind": s.kind,
        "normal": {"product_id": s.normal.product_id(), "reviews": s.normal.len()},
        "anomalous": anomalous,
    }))
}

fn encode(cfg: &PipelineConfig) -> Result<Value> {
    if cfg.provider.kind == ProviderKind::CacheFile {
        return Err(Error::Config {
            key: "provider.kind".into(),
            message: "encode needs a hashed_fallback or remote_service provider to fill the cache"
                .into(),
        });
    }
    let out = cfg.path("paths.cache")?;
    let provider = cfg.provider()?;
    let scenario = load_scenario(cfg)?;
    let reviews: Vec<&Review> = scenario.labelled_reviews().map(|(r, _)| r).collect();
    let texts: Vec<&str> = reviews.iter().map(|r| r.text.as_str()).collect();
    let embeddings = provider.embed_batch(&texts)?;
    let mut cache = EmbeddingCache::new(provider.dimension());
    for (r, e) in reviews.iter().zip(embeddings) {
        cache.insert(r.id.clone(), e)?;
    }
    save_cache(&cache, out)?;
    Ok(json!({"cache": out, "entries": cache.len(), "dimension": cache.dimension()}))
}

fn train(cfg: &PipelineConfig) -> Result<Value> {
    let out = cfg.path("paths.model")?;
    let provider = cfg.provider()?;
    let normal = load_reviews(cfg.existing_path("paths.reviews")?)?;
    let rows = normal
        .reviews()
        .iter()
        .map(|r| provider.embed_review(&r.id, &r.text))
        .collect::<Result<Vec<_>>>()?;
    let x = embeddings_to_matrix(&rows)?;
    let detector = cfg.detector_config()?;
    let model = detector.train(&x)?;
    let mu = select_threshold(&ErrorSample::new(model.score_batch(&x)?)?, cfg.threshold)?;
    let model = model.with_threshold(mu);
    save_model(&model, out)?;
    Ok(json!({
        "model": out,
        "detector": detector.describe(),
        "threshold_policy": cfg.threshold,
        "threshold": mu,
        "trained_on": normal.len(),
    }))
}

fn load_thresholded_model(cfg: &PipelineConfig) -> Result<(DetectorModel, f64)> {
    let model = load_model(cfg.existing_path("paths.model")?)?;
    let mu = model.threshold.ok_or_else(|| Error::Config {
        key: "paths.model".into(),
        message: "model has no threshold; run `train` first".into(),
    })?;
    Ok((model, mu))
}

fn classify(cfg: &PipelineConfig, input: Option<&Path>) -> Result<Value> {
    let (model, mu) = load_thresholded_model(cfg)?;
    let provider = cfg.provider()?;
    let reviews = match input {
        Some(p) => load_reviews(p)?,
        None => load_reviews(cfg.existing_path("paths.reviews")?)?,
    };
    let results = reviews
        .reviews()
        .iter()
        .map(|r| {
            let score = model.reconstruction_error(&provider.embed_review(&r.id, &r.text)?)?;
            Ok(Classification::new(r.id.clone(), score, mu))
        })
        .collect::<Result<Vec<_>>>()?;
    let anomalous = results
        .iter()
        .filter(|c| c.label == Label::Anomalous)
        .count();
    Ok(json!({
        "threshold": mu,
        "anomalous": anomalous,
        "normal": results.len() - anomalous,
        "classifications": results,
    }))
}

fn terms_path(cfg: &PipelineConfig, product: &str) -> Result<PathBuf> {
    let file: String = product
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    Ok(cfg.path("paths.terms_dir")?.join(format!("{file}.json")))
}

fn terms(cfg: &PipelineConfig) -> Result<Value> {
    let scenario = load_scenario(cfg)?;
    let n = cfg.explain.n;
    let target =
        build_term_list_from_reviews(scenario.normal.product_id(), scenario.normal.reviews(), n)?;
    let others = scenario
        .anomalous
        .iter()
        .map(|a| build_term_list_from_reviews(a.product_id(), a.reviews(), n))
        .collect::<Result<Vec<_>>>()?;
    let list = dedup_terms(&target, &others)?.with_sim_threshold(cfg.explain.sim_threshold)?;
    let out = terms_path(cfg, scenario.normal.product_id())?;
    std::fs::create_dir_all(cfg.path("paths.terms_dir")?)?;
    list.save(&out)?;
    Ok(json!({
        "terms_file": out,
        "removed": target.len() - list.len(),
        "list": list,
    }))
}

fn explain(cfg: &PipelineConfig, review_id: &str, methods: &[Technique]) -> Result<Value> {
    let scenario = load_scenario(cfg)?;
    let (review, _) = scenario.find(review_id).ok_or_else(|| {
        Error::NotFound(format!("review `{review_id}` in the configured scenario"))
    })?;
    let (model, mu) = load_thresholded_model(cfg)?;
    let provider = cfg.provider()?;
    let score = model.reconstruction_error(&provider.embed_review(&review.id, &review.text)?)?;
    let verdict = Classification::new(review.id.clone(), score, mu);
    let product = scenario.normal.product_id();
    let mut explanations = Vec::new();
    for m in methods {
        let e = match m {
            Technique::FrequentTerms => {
                let path = terms_path(cfg, product)?;
                if !path.exists() {
                    return Err(Error::Config {
                        key: "paths.terms_dir".into(),
                        message: format!("{} does not exist; run `terms` first", path.display()),
                    });
                }
                let list = TermList::load(&path)?.with_sim_threshold(cfg.explain.sim_threshold)?;
                explain_frequent(review, verdict.label, &list, provider.as_ref())?
            }
            Technique::Occlusion => {
                explain_occlusion(review, &model, mu, provider.as_ref(), cfg.explain.k)?
            }
            Technique::Llm => {
                let llm = cfg.explain.llm.clone().ok_or_else(|| Error::Config {
                    key: "explain.llm".into(),
                    message: "no language model endpoint configured".into(),
                })?;
                let templates = match &cfg.paths.templates_dir {
                    Some(dir) => PromptTemplates::load_dir(dir)?,
                    None => PromptTemplates::builtin(),
                };
                let explainer =
                    LlmExplainer::new(HttpLlmClient::new(llm), templates, cfg.explain.llm_retries);
                let name = cfg.explain.product_name.as_deref().unwrap_or(product);
                explainer.explain(review, verdict.label, name)?
            }
        };
        explanations.push(e);
    }
    Ok(json!({"classification": verdict, "explanations": explanations}))
}

fn synthetic_data(
    cfg: &PipelineConfig,
    kind: SyntheticKind,
) -> Result<(Scenario, EmbeddedScenario)> {
    let base = match kind {
        SyntheticKind::Far => SyntheticSpec::far(cfg.seed),
        SyntheticKind::Near => SyntheticSpec::near(cfg.seed),
    };
    let spec = SyntheticSpec {
        dimension: cfg.provider.dimension,
        ..base
    };
    let s = gaussian_scenario(&spec)?;
    let provider = CacheProvider::new(s.cache);
    let data = EmbeddedScenario::from_scenario(&s.scenario, &provider)?;
    Ok((s.scenario, data))
}

fn cv_data(
    cfg: &PipelineConfig,
    synthetic: Option<SyntheticKind>,
) -> Result<(Scenario, EmbeddedScenario)> {
    match synthetic {
        Some(kind) => synthetic_data(cfg, kind),
        None => {
            let scenario = load_scenario(cfg)?;
            let data = EmbeddedScenario::from_scenario(&scenario, cfg.provider()?.as_ref())?;
            Ok((scenario, data))
        }
    }
}

fn write_report(cfg: &PipelineConfig, report: &Report) -> Result<Option<PathBuf>> {
    match &cfg.paths.report {
        Some(p) => {
            emit_report(report, p)?;
            Ok(Some(p.clone()))
        }
        None => Ok(None),
    }
}

fn evaluate(
    cfg: &PipelineConfig,
    synthetic: Option<SyntheticKind>,
    export: Option<&Path>,
) -> Result<Value> {
    let run_cv_part = synthetic.is_some() || cfg.paths.reviews.is_some();
    if !run_cv_part && export.is_none() {
        return Err(Error::Config {
            key: "paths.reviews".into(),
            message: "nothing to evaluate; configure reviews, pass --synthetic or --survey-export"
                .into(),
        });
    }
    let mut cv_results = Vec::new();
    if run_cv_part {
        let (scenario, data) = cv_data(cfg, synthetic)?;
        let folds = split_folds(&scenario, cfg.cv.k, cfg.seed)?;
        cv_results.push(run_cv(
            &data,
            &folds,
            &cfg.detector_config()?,
            cfg.threshold,
        )?);
    }
    let (effects, rankings) = match export {
        Some(p) => {
            let e = SurveyExport::load(p)?;
            let forward = e.forward_sessions();
            let utility = e.utility_responses();
            (
                if forward.is_empty() {
                    BTreeMap::new()
                } else {
                    summarize_effects(&forward)?
                },
                if utility.is_empty() {
                    BTreeMap::new()
                } else {
                    aggregate_rankings(&utility)?
                },
            )
        }
        None => (BTreeMap::new(), BTreeMap::new()),
    };
    let report = Report::new(cv_results, effects, rankings);
    let path = write_report(cfg, &report)?;
    eprint!("{}", render_table(&report));
    Ok(json!({"report_path": path, "report": report}))
}

fn grid(cfg: &PipelineConfig, synthetic: Option<SyntheticKind>) -> Result<Value> {
    let combos = cfg.grid_combinations()?;
    let (scenario, data) = cv_data(cfg, synthetic)?;
    let folds = split_folds(&scenario, cfg.cv.k, cfg.seed)?;
    let outcome = grid_search(&data, &folds, &combos)?;
    let report = Report::new(outcome.results.clone(), BTreeMap::new(), BTreeMap::new());
    let path = write_report(cfg, &report)?;
    eprint!("{}", render_table(&report));
    Ok(json!({
        "report_path": path,
        "best_index": outcome.best_index,
        "best": outcome.best(),
        "results": outcome.results,
    }))
}

fn serve(cfg: &PipelineConfig) -> Result<Value> {
    let survey = match &cfg.survey.config {
        Some(p) => SurveyConfig::load(p)?,
        None => demo_config(cfg.seed),
    };
    let store = match &cfg.survey.log {
        Some(log) => SurveyStore::open(survey, log)?,
        None => SurveyStore::in_memory(survey)?,
    };
    let mut bound = None;
    reviewad_server::run_until_ctrl_c(
        Arc::new(store),
        &cfg.survey.cors_origins,
        &cfg.survey.listen,
        |addr| {
            println!("{}", json!({"listening": format!("http://{addr}")}));
            bound = Some(addr);
        },
    )?;
    Ok(json!({"stopped": bound.map(|a| a.to_string())}))
}

/// Structured rendering of a failure for stderr.
pub fn error_json(e: &Error) -> Value {
    let mut body = json!({"module": e.module(), "message": e.to_string()});
    match e {
        Error::Config { key, .. } => body["key"] = json!(key),
        Error::MissingEmbedding(id) => body["id"] = json!(id),
        Error::IncompleteAnswers { missing } => body["missing"] = json!(missing),
        _ => {}
    }
    json!({ "error": body })
}

pub fn render(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("JSON values always serialize")
}
