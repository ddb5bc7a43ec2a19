use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_score, mean_std, ConfusionCounts};
use crate::corpus::{FoldSplit, Label, Scenario};
use crate::detector::{embeddings_to_matrix, DetectorConfig, DetectorModel};
use crate::encoder::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::thresholding::{classify, select_threshold, ErrorSample, ThresholdPolicy};

/// Anything that maps embedding rows to anomaly scores.
pub trait ScoreModel {
    fn score_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

impl ScoreModel for DetectorModel {
    fn score_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        DetectorModel::score_batch(self, x)
    }
}

/// Fits a [`ScoreModel`] on normal rows only.
pub trait Trainer: Sync {
    type Model: ScoreModel;

    fn train(&self, x: &DMatrix<f64>) -> Result<Self::Model>;

    fn kind(&self) -> String;

    fn hyperparameters(&self) -> serde_json::Value;
}

impl Trainer for DetectorConfig {
    type Model = DetectorModel;

    fn train(&self, x: &DMatrix<f64>) -> Result<DetectorModel> {
        DetectorConfig::train(self, x)
    }

    fn kind(&self) -> String {
        match self {
            DetectorConfig::Daef(_) => "daef".into(),
            DetectorConfig::ElmAe(_) => "elm_ae".into(),
        }
    }

    fn hyperparameters(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Labels and embeddings of every review in a scenario, keyed by review id.
#[derive(Debug, Clone)]
pub struct EmbeddedScenario {
    name: String,
    labels: HashMap<String, Label>,
    embeddings: HashMap<String, Embedding>,
}

impl EmbeddedScenario {
    pub fn new(
        name: impl Into<String>,
        rows: impl IntoIterator<Item = (String, Label, Embedding)>,
    ) -> Result<Self> {
        let mut labels = HashMap::new();
        let mut embeddings = HashMap::new();
        let mut dim = None;
        for (id, label, e) in rows {
            if *dim.get_or_insert(e.dimension()) != e.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: dim.unwrap_or_default(),
                    found: e.dimension(),
                });
            }
            if labels.insert(id.clone(), label).is_some() {
                return Err(Error::validation(format!("duplicate review id `{id}`")));
            }
            embeddings.insert(id, e);
        }
        Ok(EmbeddedScenario {
            name: name.into(),
            labels,
            embeddings,
        })
    }

    /// Embeds every review through `provider.embed_review`.
    pub fn from_scenario(scenario: &Scenario, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let rows = scenario
            .labelled_reviews()
            .map(|(r, label)| Ok((r.id.clone(), label, provider.embed_review(&r.id, &r.text)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(scenario.name(), rows)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: &str) -> Result<Label> {
        self.labels.get(id).copied().ok_or_else(|| {
            Error::NotFound(format!(
                "review `{id}` is not part of scenario `{}`",
                self.name
            ))
        })
    }

    pub fn embedding(&self, id: &str) -> Result<&Embedding> {
        self.embeddings
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn matrix<S: AsRef<str>>(&self, ids: &[S]) -> Result<DMatrix<f64>> {
        let rows = ids
            .iter()
            .map(|id| self.embedding(id.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        embeddings_to_matrix(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold_index: usize,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub scenario: String,
    pub detector_kind: String,
    pub hyperparameters: serde_json::Value,
    pub threshold_policy: ThresholdPolicy,
    pub folds: Vec<FoldOutcome>,
    pub fold_f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CvResult {
    /// Recomputes mean and sample std from `fold_f1`.
    pub fn recomputed(&self) -> Result<(f64, f64)> {
        mean_std(&self.fold_f1)
    }
}

/// Trains on the fold's normal training rows, sets μ from their scores and
/// classifies the balanced test rows.
pub fn evaluate_fold<T: Trainer>(
    data: &EmbeddedScenario,
    fold: &FoldSplit,
    trainer: &T,
    policy: ThresholdPolicy,
) -> Result<FoldOutcome> {
    let x_train = data.matrix(&fold.train_normal_ids)?;
    let model = trainer.train(&x_train)?;
    let train_scores = model.score_batch(&x_train)?;
    let mu = select_threshold(&ErrorSample::new(train_scores)?, policy)?;

    let test_ids: Vec<&String> = fold
        .test_normal_ids
        .iter()
        .chain(&fold.test_anomalous_ids)
        .collect();
    let scores = model.score_batch(&data.matrix(&test_ids)?)?;
    let mut counts = ConfusionCounts::default();
    for (id, score) in test_ids.iter().zip(scores) {
        counts.record(data.label(id)?, classify(score, mu));
    }
    Ok(FoldOutcome {
        fold_index: fold.fold_index,
        threshold: mu,
        counts,
        f1: f1_score(&counts)?,
    })
}

/// One-class cross-validation. Folds run in parallel; results are reported in
/// fold order and the first failing fold (by position) is returned as the error.
pub fn run_cv<T: Trainer>(
    data: &EmbeddedScenario,
    folds: &[FoldSplit],
    trainer: &T,
    policy: ThresholdPolicy,
) -> Result<CvResult> {
    if folds.is_empty() {
        return Err(Error::validation(
            "cross-validation needs at least one fold",
        ));
    }
    policy.validate()?;
    let outcomes: Vec<Result<FoldOutcome>> = folds
        .par_iter()
        .map(|f| evaluate_fold(data, f, trainer, policy))
        .collect();
    let folds_out = outcomes
        .into_iter()
        .zip(folds)
        .map(|(r, f)| {
            r.map_err(|e| Error::Fold {
                index: f.fold_index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fold_f1: Vec<f64> = folds_out.iter().map(|f| f.f1).collect();
    let (mean, std) = mean_std(&fold_f1)?;
    Ok(CvResult {
        scenario: data.name().to_string(),
        detector_kind: trainer.kind(),
        hyperparameters: trainer.hyperparameters(),
        threshold_policy: policy,
        folds: folds_out,
        fold_f1,
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best_index: usize,
    pub results: Vec<CvResult>,
}

impl GridOutcome {
    pub fn best(&self) -> &CvResult {
        &self.results[self.best_index]
    }
}

/// Index of the best result: highest mean, then lowest std, then earliest.
pub fn select_best(results: &[CvResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &results[b];
                r.mean > cur.mean || (r.mean == cur.mean && r.std < cur.std)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Runs every (trainer, policy) combination on the same folds.
pub fn grid_search<T: Trainer>(
    data: &EmbeddedScenario,
    folds: &[FoldSplit],
    grid: &[(T, ThresholdPolicy)],
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::validation(
            "grid search needs at least one combination",
        ));
    }
    let results: Vec<Result<CvResult>> = grid
        .par_iter()
        .map(|(t, p)| run_cv(data, folds, t, *p))
        .collect();
    let results = results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Grid {
                index: i,
                description: format!("{} / {}", grid[i].0.kind(), grid[i].1),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_index = select_best(&results).expect("grid is non-empty");
    Ok(GridOutcome {
        best_index,
        results,
    })
}
