//! Forward-simulation scoring and utility-rank aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::explain::Technique;

/// One participant's answers, as exported by the survey server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSimSession {
    pub participant_id: String,
    pub technique: Technique,
    pub pre_answers: Vec<(String, Label)>,
    pub post_answers: Vec<(String, Label)>,
    pub model_labels: Vec<(String, Label)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectScore {
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    pub effect: f64,
}

impl EffectScore {
    /// Accuracies in any consistent unit; effect is `post - pre`.
    pub fn from_accuracies(pre_accuracy: f64, post_accuracy: f64) -> Self {
        EffectScore {
            pre_accuracy,
            post_accuracy,
            effect: post_accuracy - pre_accuracy,
        }
    }
}

fn agreement(
    phase: &str,
    answers: &[(String, Label)],
    truth: &BTreeMap<&str, Label>,
) -> Result<f64> {
    let mut given: BTreeMap<&str, Label> = BTreeMap::new();
    for (id, label) in answers {
        if !truth.contains_key(id.as_str()) {
            return Err(Error::validation(format!(
                "{phase} answer for unknown item `{id}`"
            )));
        }
        if given.insert(id.as_str(), *label).is_some() {
            return Err(Error::validation(format!(
                "{phase} answers item `{id}` twice"
            )));
        }
    }
    let missing: Vec<String> = truth
        .keys()
        .filter(|id| !given.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteAnswers { missing });
    }
    let hits = truth.iter().filter(|(id, l)| given[*id] == **l).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Fraction of answers agreeing with the model, before and after explanations.
pub fn explanation_effect(session: &ForwardSimSession) -> Result<EffectScore> {
    let mut truth: BTreeMap<&str, Label> = BTreeMap::new();
    for (id, label) in &session.model_labels {
        if truth.insert(id.as_str(), *label).is_some() {
            return Err(Error::validation(format!(
                "model label for `{id}` given twice"
            )));
        }
    }
    if truth.is_empty() {
        return Err(Error::validation("session has no prediction items"));
    }
    let pre = agreement("pre", &session.pre_answers, &truth)?;
    let post = agreement("post", &session.post_answers, &truth)?;
    Ok(EffectScore::from_accuracies(pre, post))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityResponse {
    pub participant_id: String,
    pub review_id: String,
    pub ranks: BTreeMap<Technique, u32>,
}

impl UtilityResponse {
    pub fn validate(&self) -> Result<()> {
        for t in Technique::ALL {
            match self.ranks.get(&t) {
                None => return Err(Error::validation(format!("no rank for technique `{t}`"))),
                Some(r) if !(1..=3).contains(r) => {
                    return Err(Error::validation(format!(
                        "rank {r} for `{t}` is outside 1..=3"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Ranks re-encoded so tied entries share the best tied position and the
    /// next distinct value skips the tied slots: `{1, 2, 1}` becomes `{1, 3, 1}`.
    pub fn competition_ranks(&self) -> Result<BTreeMap<Technique, u32>> {
        self.validate()?;
        Ok(self
            .ranks
            .iter()
            .map(|(t, r)| {
                let better = self.ranks.values().filter(|o| *o < r).count() as u32;
                (*t, better + 1)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample std of competition ranks per technique over every response.
pub fn aggregate_rankings(
    responses: &[UtilityResponse],
) -> Result<BTreeMap<Technique, RankSummary>> {
    if responses.is_empty() {
        return Err(Error::validation("no utility responses to aggregate"));
    }
    let mut per: BTreeMap<Technique, Vec<f64>> = BTreeMap::new();
    for r in responses {
        for (t, rank) in r.competition_ranks()? {
            per.entry(t).or_default().push(rank as f64);
        }
    }
    per.into_iter()
        .map(|(t, v)| {
            let (mean, std) = mean_std(&v)?;
            Ok((
                t,
                RankSummary {
                    n: v.len(),
                    mean,
                    std,
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub n: usize,
    pub pre_mean: f64,
    pub pre_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
    pub effect_mean: f64,
    pub effect_std: f64,
}

/// Per-technique mean ± std of pre accuracy, post accuracy and effect.
pub fn summarize_effects(
    sessions: &[ForwardSimSession],
) -> Result<BTreeMap<Technique, EffectSummary>> {
    let mut per: BTreeMap<Technique, Vec<EffectScore>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for s in sessions {
        if !seen.insert(s.participant_id.as_str()) {
            return Err(Error::validation(format!(
                "participant `{}` appears twice",
                s.participant_id
            )));
        }
        per.entry(s.technique)
            .or_default()
            .push(explanation_effect(s)?);
    }
    per.into_iter()
        .map(|(t, scores)| {
            let col = |f: fn(&EffectScore) -> f64| scores.iter().map(f).collect::<Vec<_>>();
            let (pre_mean, pre_std) = mean_std(&col(|e| e.pre_accuracy))?;
            let (post_mean, post_std) = mean_std(&col(|e| e.post_accuracy))?;
            let (effect_mean, effect_std) = mean_std(&col(|e| e.effect))?;
            Ok((
                t,
                EffectSummary {
                    n: scores.len(),
                    pre_mean,
                    pre_std,
                    post_mean,
                    post_std,
                    effect_mean,
                    effect_std,
                },
            ))
        })
        .collect()
}
