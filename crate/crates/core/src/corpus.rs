//! Review corpora, evaluation scenarios and fold splits.
//!
//! Reviews are ingested from JSONL files (one object per line with `id`,
//! `product_id`, `text` and an optional `label`). A [`Scenario`] pairs one
//! normal product with one or more anomalous products, and [`split_folds`]
//! produces the one-class k-fold protocol: the normal reviews are partitioned
//! into `k` folds, each fold is held out in turn, and every held-out fold is
//! padded with an equal number of anomalous reviews drawn from the pooled
//! anomalous products.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class of a review. `Anomalous` is the positive class for all metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "anomalous" => Ok(Label::Anomalous),
            other => Err(Error::validation(format!(
                "unknown label `{other}` (expected `normal` or `anomalous`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub product_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Review {
    pub fn new(
        id: impl Into<String>,
        product_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Review {
            id: id.into(),
            product_id: product_id.into(),
            text: text.into(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// All reviews of a single product, in ingestion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSet {
    product_id: String,
    reviews: Vec<Review>,
}

impl ReviewSet {
    /// Builds a set, enforcing a shared product id, unique ids and non-blank text.
    pub fn new(reviews: Vec<Review>) -> Result<Self> {
        let first = reviews
            .first()
            .ok_or_else(|| Error::validation("a review set needs at least one review"))?;
        let product_id = first.product_id.clone();
        let mut seen = HashSet::with_capacity(reviews.len());
        for (i, r) in reviews.iter().enumerate() {
            check_review(r).map_err(|m| Error::validation(format!("review {i}: {m}")))?;
            if r.product_id != product_id {
                return Err(Error::validation(format!(
                    "review `{}` belongs to product `{}`, expected `{product_id}`",
                    r.id, r.product_id
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::validation(format!("duplicate review id `{}`", r.id)));
            }
        }
        Ok(ReviewSet {
            product_id,
            reviews,
        })
    }

    pub fn product_id(&self) -> &str {
        &self.product_id
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Review> {
        self.reviews.iter().find(|r| r.id == id)
    }

    pub fn into_reviews(self) -> Vec<Review> {
        self.reviews
    }
}

fn check_review(r: &Review) -> std::result::Result<(), String> {
    if r.id.is_empty() {
        return Err("empty id".into());
    }
    if r.text.trim().is_empty() {
        return Err(format!("review `{}` has blank text", r.id));
    }
    Ok(())
}

/// Reads a JSONL review file. Errors carry the 1-based line number.
pub fn load_reviews(path: impl AsRef<Path>) -> Result<ReviewSet> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reviews: Vec<Review> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let review: Review =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        check_review(&review).map_err(|m| parse_err(lineno, m))?;
        if let Some(first) = reviews.first() {
            if first.product_id != review.product_id {
                return Err(parse_err(
                    lineno,
                    format!(
                        "product `{}` differs from file product `{}`",
                        review.product_id, first.product_id
                    ),
                ));
            }
        }
        if !seen.insert(review.id.clone()) {
            return Err(parse_err(
                lineno,
                format!("duplicate review id `{}`", review.id),
            ));
        }
        reviews.push(review);
    }
    if reviews.is_empty() {
        return Err(Error::validation(format!(
            "{} contains no reviews",
            path.display()
        )));
    }
    ReviewSet::new(reviews)
}

pub fn save_reviews(set: &ReviewSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in set.reviews() {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    OneVsFour,
    OneVsOne,
    Custom,
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_vs_four" | "1vs4" => Ok(ScenarioKind::OneVsFour),
            "one_vs_one" | "1vs1" => Ok(ScenarioKind::OneVsOne),
            "custom" => Ok(ScenarioKind::Custom),
            other => Err(Error::validation(format!(
                "unknown scenario kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub normal: ReviewSet,
    pub anomalous: Vec<ReviewSet>,
}

impl Scenario {
    pub fn name(&self) -> String {
        let others: Vec<&str> = self.anomalous.iter().map(|a| a.product_id()).collect();
        format!("{} vs [{}]", self.normal.product_id(), others.join(", "))
    }

    /// Every review of the scenario paired with its effective label
    /// (membership in the normal set or in an anomalous set).
    pub fn labelled_reviews(&self) -> impl Iterator<Item = (&Review, Label)> {
        self.normal
            .reviews()
            .iter()
            .map(|r| (r, Label::Normal))
            .chain(
                self.anomalous
                    .iter()
                    .flat_map(|s| s.reviews().iter().map(|r| (r, Label::Anomalous))),
            )
    }

    pub fn find(&self, id: &str) -> Option<(&Review, Label)> {
        self.labelled_reviews().find(|(r, _)| r.id == id)
    }
}

pub fn build_scenario(
    normal: ReviewSet,
    anomalous: Vec<ReviewSet>,
    kind: ScenarioKind,
) -> Result<Scenario> {
    if anomalous.is_empty() {
        return Err(Error::validation(
            "a scenario needs at least one anomalous product",
        ));
    }
    let mut products = HashSet::new();
    products.insert(normal.product_id().to_string());
    for a in &anomalous {
        if a.product_id() == normal.product_id() {
            return Err(Error::validation(format!(
                "normal product `{}` also listed as anomalous",
                normal.product_id()
            )));
        }
        if !products.insert(a.product_id().to_string()) {
            return Err(Error::validation(format!(
                "anomalous product `{}` listed twice",
                a.product_id()
            )));
        }
    }
    let mut ids = HashSet::new();
    for r in normal
        .reviews()
        .iter()
        .chain(anomalous.iter().flat_map(|s| s.reviews()))
    {
        if !ids.insert(r.id.as_str()) {
            return Err(Error::validation(format!(
                "review id `{}` appears in more than one product",
                r.id
            )));
        }
    }
    Ok(Scenario {
        kind,
        normal,
        anomalous,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_normal_ids: Vec<String>,
    pub test_normal_ids: Vec<String>,
    pub test_anomalous_ids: Vec<String>,
    pub seed: u64,
}

/// One-class k-fold split.
///
/// Normal ids are shuffled with `seed` and cut into `k` contiguous folds; when
/// the count is not divisible by `k` the first `n % k` folds get one extra
/// review. Each fold's anomalous test reviews are drawn without replacement
/// from the pooled anomalous reviews using a per-fold stream of the same seed,
/// so draws never repeat inside a fold but may repeat across folds.
pub fn split_folds(scenario: &Scenario, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::validation(format!("k must be at least 2, got {k}")));
    }
    let n = scenario.normal.len();
    if k > n {
        return Err(Error::validation(format!(
            "k = {k} exceeds the number of normal reviews ({n})"
        )));
    }
    let pool: Vec<&str> = scenario
        .anomalous
        .iter()
        .flat_map(|s| s.reviews().iter().map(|r| r.id.as_str()))
        .collect();
    let largest = n.div_ceil(k);
    if pool.len() < largest {
        return Err(Error::validation(format!(
            "anomalous pool has {} reviews but the largest test fold needs {largest}",
            pool.len()
        )));
    }

    let mut normal_ids: Vec<&str> = scenario
        .normal
        .reviews()
        .iter()
        .map(|r| r.id.as_str())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_ids.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut bounds = Vec::with_capacity(k);
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        bounds.push(start..start + size);
        start += size;
    }

    let folds = bounds
        .into_iter()
        .enumerate()
        .map(|(fold, range)| {
            let test_normal: Vec<String> = normal_ids[range.clone()]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let train_normal: Vec<String> = normal_ids[..range.start]
                .iter()
                .chain(&normal_ids[range.end..])
                .map(|s| s.to_string())
                .collect();
            let mut fold_rng = ChaCha8Rng::seed_from_u64(seed);
            fold_rng.set_stream(fold as u64 + 1);
            let test_anomalous =
                rand::seq::index::sample(&mut fold_rng, pool.len(), test_normal.len())
                    .into_iter()
                    .map(|i| pool[i].to_string())
                    .collect();
            FoldSplit {
                fold_index: fold,
                train_normal_ids: train_normal,
                test_normal_ids: test_normal,
                test_anomalous_ids: test_anomalous,
                seed,
            }
        })
        .collect();
    Ok(folds)
}
