//! Frequent-term lists of the normal class.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokens::{normalize_tokens, STEMMER_VERSION};
use crate::corpus::Review;
use crate::encoder::{cosine_similarity, Embedding, EmbeddingProvider};
use crate::error::{Error, Result};

pub const DEFAULT_LIST_SIZE: usize = 50;
pub const DEFAULT_SIM_THRESHOLD: f64 = 0.8;

/// Top-n terms of a product's normal reviews, most frequent first.
///
/// Frequencies are token counts. Ties are broken lexicographically, so the
/// order is total and independent of input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermList {
    pub product_id: String,
    pub stemmer_version: String,
    pub n: usize,
    pub sim_threshold: f64,
    pub terms: Vec<(String, u64)>,
}

impl TermList {
    pub fn contains(&self, term: &str) -> bool {
        self.terms.iter().any(|(t, _)| t == term)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn top(&self, k: usize) -> Vec<String> {
        self.terms.iter().take(k).map(|(t, _)| t.clone()).collect()
    }

    pub fn with_sim_threshold(mut self, sim_threshold: f64) -> Result<Self> {
        if !(sim_threshold > 0.0 && sim_threshold <= 1.0) {
            return Err(Error::validation(format!(
                "sim_threshold must lie in (0, 1], got {sim_threshold}"
            )));
        }
        self.sim_threshold = sim_threshold;
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let list: TermList = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Ok(list)
    }
}

fn rank(counts: HashMap<String, u64>, n: usize) -> Vec<(String, u64)> {
    let mut terms: Vec<(String, u64)> = counts.into_iter().collect();
    terms.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    terms.truncate(n);
    terms
}

pub fn build_term_list<'a>(
    product_id: &str,
    texts: impl IntoIterator<Item = &'a str>,
    n: usize,
) -> Result<TermList> {
    if n == 0 {
        return Err(Error::validation("term list capacity n must be at least 1"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for term in normalize_tokens(text) {
            *counts.entry(term).or_default() += 1;
        }
    }
    Ok(TermList {
        product_id: product_id.to_string(),
        stemmer_version: STEMMER_VERSION.to_string(),
        n,
        sim_threshold: DEFAULT_SIM_THRESHOLD,
        terms: rank(counts, n),
    })
}

pub fn build_term_list_from_reviews(
    product_id: &str,
    reviews: &[Review],
    n: usize,
) -> Result<TermList> {
    build_term_list(product_id, reviews.iter().map(|r| r.text.as_str()), n)
}

/// Removes from `target` every term that appears in any of `others`.
pub fn dedup_terms(target: &TermList, others: &[TermList]) -> Result<TermList> {
    for o in others {
        if o.stemmer_version != target.stemmer_version {
            return Err(Error::validation(format!(
                "term list for `{}` was built with `{}`, target uses `{}`",
                o.product_id, o.stemmer_version, target.stemmer_version
            )));
        }
    }
    let common: HashSet<&str> = others
        .iter()
        .flat_map(|o| o.terms.iter().map(|(t, _)| t.as_str()))
        .collect();
    let mut out = target.clone();
    out.terms.retain(|(t, _)| !common.contains(t.as_str()));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermMatch {
    pub review_term: String,
    pub list_term: String,
    pub similarity: f64,
}

/// Review terms that occur in the list (similarity 1) or whose embedding is
/// within `terms.sim_threshold` cosine of a list term. Each review term is
/// reported at most once, paired with its most similar list term.
pub fn match_terms(
    review: &Review,
    terms: &TermList,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<TermMatch>> {
    if terms.is_empty() {
        return Err(Error::validation(format!(
            "term list for `{}` is empty",
            terms.product_id
        )));
    }
    let mut seen = HashSet::new();
    let review_terms: Vec<String> = normalize_tokens(&review.text)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect();

    let mut list_embeddings: BTreeMap<&str, Embedding> = BTreeMap::new();
    let mut out = Vec::new();
    for rt in review_terms {
        if terms.contains(&rt) {
            out.push(TermMatch {
                list_term: rt.clone(),
                review_term: rt,
                similarity: 1.0,
            });
            continue;
        }
        if list_embeddings.is_empty() {
            let words: Vec<&str> = terms.terms.iter().map(|(t, _)| t.as_str()).collect();
            for (w, e) in words.iter().zip(provider.embed_batch(&words)?) {
                list_embeddings.insert(w, e);
            }
        }
        let re = provider.embed(&rt)?;
        let mut best: Option<(&str, f64)> = None;
        for (lt, le) in &list_embeddings {
            let sim = match cosine_similarity(&re, le) {
                Ok(s) => s,
                Err(Error::UndefinedSimilarity) => continue,
                Err(e) => return Err(e),
            };
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((lt, sim));
            }
        }
        if let Some((lt, sim)) = best {
            if sim >= terms.sim_threshold {
                out.push(TermMatch {
                    review_term: rt,
                    list_term: lt.to_string(),
                    similarity: sim,
                });
            }
        }
    }
    Ok(out)
}
