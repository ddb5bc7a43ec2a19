//! Pipeline configuration read from a TOML file.
//!
//! Every section is optional except the top-level `seed`. Relative paths are
//! resolved against the directory holding the config file. Errors name the
//! offending key as a dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::ScenarioKind;
use crate::detector::{Architecture, DaefConfig, DetectorConfig, DetectorKind, ElmAeConfig};
use crate::encoder::{
    load_cache, CacheProvider, EmbeddingProvider, HashedEncoder, Normalized, ProviderKind,
    RemoteConfig, RemoteProvider, DEFAULT_DIMENSION,
};
use crate::error::{Error, Result};
use crate::explain::{HttpLlmConfig, DEFAULT_LIST_SIZE, DEFAULT_SIM_THRESHOLD, DEFAULT_TOP_K};
use crate::thresholding::ThresholdPolicy;

fn default_threshold() -> ThresholdPolicy {
    ThresholdPolicy::OutlierIqr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdPolicy,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub survey: SurveySection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// JSONL file of the normal product.
    pub reviews: Option<PathBuf>,
    /// JSONL files of the anomalous products.
    #[serde(default)]
    pub anomalous: Vec<PathBuf>,
    /// Inferred from the number of anomalous files when absent.
    pub scenario: Option<ScenarioKind>,
    pub cache: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub terms_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub dimension: usize,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub max_batch: usize,
    pub retries: u32,
    /// L2-normalize embeddings before they reach the detector.
    pub normalize: bool,
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: ProviderKind::HashedFallback,
            dimension: DEFAULT_DIMENSION,
            endpoint: None,
            timeout_secs: 30,
            max_batch: 64,
            retries: 2,
            normalize: false,
        }
    }
}

/// Hyperparameters of either detector; fields of the other family are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub kind: DetectorKind,
    /// DAEF layer sizes; defaults to `[d, 550, 650, d]`.
    pub architecture: Option<Vec<usize>>,
    pub lambda_hid: f64,
    pub lambda_last: f64,
    /// ELM-AE hidden neurons.
    pub hidden_size: usize,
    pub ridge_lambda: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            kind: DetectorKind::Daef,
            architecture: None,
            lambda_hid: 0.9,
            lambda_last: 0.9,
            hidden_size: 400,
            ridge_lambda: 0.1,
        }
    }
}

impl DetectorSection {
    /// `key` prefixes error keys, e.g. `detector` or `grid.detectors[2]`.
    pub fn build(&self, key: &str, dimension: usize, seed: u64) -> Result<DetectorConfig> {
        let bad = |field: &str, message: String| Error::Config {
            key: format!("{key}.{field}"),
            message,
        };
        let cfg = match self.kind {
            DetectorKind::Daef => {
                let sizes = self
                    .architecture
                    .clone()
                    .unwrap_or_else(|| vec![dimension, 550, 650, dimension]);
                if sizes.first() != Some(&dimension) {
                    return Err(bad(
                        "architecture",
                        format!("first layer of {sizes:?} must equal the embedding dimension {dimension}"),
                    ));
                }
                let architecture =
                    Architecture::new(sizes).map_err(|e| bad("architecture", e.to_string()))?;
                let c = DaefConfig {
                    architecture,
                    lambda_hid: self.lambda_hid,
                    lambda_last: self.lambda_last,
                    seed,
                };
                for (field, v) in [("lambda_hid", c.lambda_hid), ("lambda_last", c.lambda_last)] {
                    if !v.is_finite() || v < 0.0 {
                        return Err(bad(field, format!("must be finite and >= 0, got {v}")));
                    }
                }
                DetectorConfig::Daef(c)
            }
            DetectorKind::ElmAe => {
                if self.hidden_size == 0 {
                    return Err(bad("hidden_size", "must be at least 1".into()));
                }
                if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
                    return Err(bad(
                        "ridge_lambda",
                        format!("must be finite and >= 0, got {}", self.ridge_lambda),
                    ));
                }
                DetectorConfig::ElmAe(ElmAeConfig {
                    hidden_size: self.hidden_size,
                    ridge_lambda: self.ridge_lambda,
                    seed,
                })
            }
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    /// Frequent-term list size.
    pub n: usize,
    pub sim_threshold: f64,
    /// Tokens kept by occlusion.
    pub k: usize,
    /// Product name used in LLM prompts; defaults to the normal product id.
    pub product_name: Option<String>,
    pub llm: Option<HttpLlmConfig>,
    pub llm_retries: u32,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            n: DEFAULT_LIST_SIZE,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            k: DEFAULT_TOP_K,
            product_name: None,
            llm: None,
            llm_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub k: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { k: 10 }
    }
}

/// The grid is the product `detectors × thresholds`, detectors outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub detectors: Vec<DetectorSection>,
    pub thresholds: Vec<ThresholdPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurveySection {
    /// Survey item file; the built-in demo survey is served when absent.
    pub config: Option<PathBuf>,
    /// Event log; sessions live in memory only when absent.
    pub log: Option<PathBuf>,
    pub listen: String,
    /// Origins allowed by CORS; empty allows any origin.
    pub cors_origins: Vec<String>,
}

impl Default for SurveySection {
    fn default() -> Self {
        SurveySection {
            config: None,
            log: None,
            listen: "127.0.0.1:8080".into(),
            cors_origins: Vec::new(),
        }
    }
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Dotted key of a deserialization failure; a missing field is appended to its parent.
fn error_key(path: &serde_path_to_error::Path, message: &str) -> String {
    let mut key = path.to_string();
    if key == "." {
        key.clear();
    }
    if let Some(field) = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next())
    {
        if !key.is_empty() {
            key.push('.');
        }
        key.push_str(field);
    }
    if key.is_empty() {
        key.push('.');
    }
    key
}

impl PipelineConfig {
    /// Parses and validates TOML text; relative paths are left untouched.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de =
            toml::de::Deserializer::parse(text).map_err(|e| config_error(".", e.to_string()))?;
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().message().to_string();
            config_error(error_key(e.path(), &message), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(".", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.reviews,
            &mut paths.cache,
            &mut paths.model,
            &mut paths.terms_dir,
            &mut paths.report,
            &mut paths.templates_dir,
            &mut self.survey.config,
            &mut self.survey.log,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        paths.anomalous.iter_mut().for_each(fix);
    }

    /// Range checks; call again after applying command-line overrides.
    pub fn validate(&self) -> Result<()> {
        self.threshold
            .validate()
            .map_err(|e| config_error("threshold", e.to_string()))?;
        let p = &self.provider;
        if p.dimension == 0 {
            return Err(config_error("provider.dimension", "must be positive"));
        }
        if p.max_batch == 0 {
            return Err(config_error("provider.max_batch", "must be positive"));
        }
        match p.kind {
            ProviderKind::CacheFile if self.paths.cache.is_none() => {
                return Err(config_error(
                    "paths.cache",
                    "required by provider kind cache_file",
                ));
            }
            ProviderKind::RemoteService if p.endpoint.is_none() => {
                return Err(config_error(
                    "provider.endpoint",
                    "required by provider kind remote_service",
                ));
            }
            _ => {}
        }
        self.detector_config()?;
        let e = &self.explain;
        if e.n == 0 {
            return Err(config_error("explain.n", "must be positive"));
        }
        if !(e.sim_threshold > 0.0 && e.sim_threshold <= 1.0) {
            return Err(config_error(
                "explain.sim_threshold",
                format!("must lie in (0, 1], got {}", e.sim_threshold),
            ));
        }
        if e.k == 0 {
            return Err(config_error("explain.k", "must be positive"));
        }
        if self.cv.k < 2 {
            return Err(config_error(
                "cv.k",
                format!("must be at least 2, got {}", self.cv.k),
            ));
        }
        if let Some(g) = &self.grid {
            if g.detectors.is_empty() {
                return Err(config_error("grid.detectors", "must not be empty"));
            }
            if g.thresholds.is_empty() {
                return Err(config_error("grid.thresholds", "must not be empty"));
            }
            for (i, t) in g.thresholds.iter().enumerate() {
                t.validate()
                    .map_err(|e| config_error(format!("grid.thresholds[{i}]"), e.to_string()))?;
            }
            self.grid_combinations()?;
        }
        if self.survey.listen.trim().is_empty() {
            return Err(config_error("survey.listen", "must not be empty"));
        }
        Ok(())
    }

    pub fn detector_config(&self) -> Result<DetectorConfig> {
        self.detector
            .build("detector", self.provider.dimension, self.seed)
    }

    /// Grid combinations in `detectors × thresholds` order; errors when no grid is configured.
    pub fn grid_combinations(&self) -> Result<Vec<(DetectorConfig, ThresholdPolicy)>> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| config_error("grid", "no grid section configured"))?;
        let mut out = Vec::with_capacity(g.detectors.len() * g.thresholds.len());
        for (i, d) in g.detectors.iter().enumerate() {
            let cfg = d.build(
                &format!("grid.detectors[{i}]"),
                self.provider.dimension,
                self.seed,
            )?;
            out.extend(g.thresholds.iter().map(|t| (cfg.clone(), *t)));
        }
        Ok(out)
    }

    /// Scenario kind from `paths.scenario`, else 1 anomalous file → one_vs_one, 4 → one_vs_four.
    pub fn scenario_kind(&self) -> ScenarioKind {
        self.paths
            .scenario
            .unwrap_or(match self.paths.anomalous.len() {
                1 => ScenarioKind::OneVsOne,
                4 => ScenarioKind::OneVsFour,
                _ => ScenarioKind::Custom,
            })
    }

    /// A configured path by its key, e.g. `paths.model`.
    pub fn path(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "paths.reviews" => &self.paths.reviews,
            "paths.cache" => &self.paths.cache,
            "paths.model" => &self.paths.model,
            "paths.terms_dir" => &self.paths.terms_dir,
            "paths.report" => &self.paths.report,
            "paths.templates_dir" => &self.paths.templates_dir,
            "survey.config" => &self.survey.config,
            "survey.log" => &self.survey.log,
            other => return Err(config_error(other, "not a path key")),
        };
        p.as_deref().ok_or_else(|| config_error(key, "not set"))
    }

    /// As [`PipelineConfig::path`], and the file must already exist.
    pub fn existing_path(&self, key: &str) -> Result<&Path> {
        let p = self.path(key)?;
        if !p.exists() {
            return Err(config_error(key, format!("{} does not exist", p.display())));
        }
        Ok(p)
    }

    /// The configured embedding provider, normalized when requested.
    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let p = &self.provider;
        let inner: Box<dyn EmbeddingProvider> = match p.kind {
            ProviderKind::HashedFallback => Box::new(HashedEncoder::new(p.dimension, self.seed)?),
            ProviderKind::CacheFile => {
                let cache = load_cache(self.existing_path("paths.cache")?)?;
                if cache.dimension() != p.dimension {
                    return Err(config_error(
                        "provider.dimension",
                        format!(
                            "is {} but the cache holds {}-d embeddings",
                            p.dimension,
                            cache.dimension()
                        ),
                    ));
                }
                Box::new(CacheProvider::new(cache))
            }
            ProviderKind::RemoteService => Box::new(RemoteProvider::new(RemoteConfig {
                endpoint: p
                    .endpoint
                    .clone()
                    .ok_or_else(|| config_error("provider.endpoint", "not set"))?,
                dimension: p.dimension,
                timeout_secs: p.timeout_secs,
                max_batch: p.max_batch,
                retries: p.retries,
            })?),
        };
        Ok(if p.normalize {
            Box::new(Normalized(inner))
        } else {
            inner
        })
    }
}
