use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::explain::{Explanation, Technique};

/// Participants' area of knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KnowledgeArea {
    EngineeringAndArchitecture,
    SocialAndLegalSciences,
    NaturalSciences,
    ArtsAndHumanities,
    HealthSciences,
    Others,
}

impl KnowledgeArea {
    pub const ALL: [KnowledgeArea; 6] = [
        KnowledgeArea::EngineeringAndArchitecture,
        KnowledgeArea::SocialAndLegalSciences,
        KnowledgeArea::NaturalSciences,
        KnowledgeArea::ArtsAndHumanities,
        KnowledgeArea::HealthSciences,
        KnowledgeArea::Others,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeArea::EngineeringAndArchitecture => "Engineering and Architecture",
            KnowledgeArea::SocialAndLegalSciences => "Social and Legal Sciences",
            KnowledgeArea::NaturalSciences => "Natural Sciences",
            KnowledgeArea::ArtsAndHumanities => "Arts and Humanities",
            KnowledgeArea::HealthSciences => "Health Sciences",
            KnowledgeArea::Others => "Others",
        }
    }

    pub fn vocabulary() -> Vec<&'static str> {
        Self::ALL.iter().map(|a| a.as_str()).collect()
    }
}

impl fmt::Display for KnowledgeArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeArea {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::validation(format!(
                    "unknown knowledge area `{s}`; expected one of: {}",
                    Self::vocabulary().join(", ")
                ))
            })
    }
}

impl Serialize for KnowledgeArea {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for KnowledgeArea {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantInfo {
    pub knowledge_area: KnowledgeArea,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueAssignment {
    #[default]
    RoundRobin,
    Fixed(Technique),
}

/// A review shown during the learning phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningItem {
    pub review_id: String,
    pub product: String,
    pub text: String,
    pub model_label: Label,
    /// Explanation per technique; verdicts equal `model_label`.
    pub explanations: BTreeMap<Technique, Explanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionItem {
    pub review_id: String,
    pub product: String,
    pub text: String,
    pub model_label: Label,
}

/// A review whose three explanations participants rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityItem {
    pub review_id: String,
    pub product: String,
    pub text: String,
    pub model_label: Label,
    pub explanations: BTreeMap<Technique, Explanation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveySizes {
    pub learning: usize,
    pub prediction: usize,
    pub utility: usize,
}

impl Default for SurveySizes {
    fn default() -> Self {
        SurveySizes {
            learning: 20,
            prediction: 10,
            utility: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub seed: u64,
    #[serde(default)]
    pub technique_assignment: TechniqueAssignment,
    #[serde(default)]
    pub sizes: SurveySizes,
    pub learning_items: Vec<LearningItem>,
    pub prediction_items: Vec<PredictionItem>,
    pub utility_items: Vec<UtilityItem>,
}

fn check_balanced(phase: &str, labels: impl Iterator<Item = Label>, expected: usize) -> Result<()> {
    let (mut normal, mut anomalous) = (0usize, 0usize);
    for l in labels {
        match l {
            Label::Normal => normal += 1,
            Label::Anomalous => anomalous += 1,
        }
    }
    if normal + anomalous != expected {
        return Err(Error::validation(format!(
            "{phase} needs {expected} items, found {}",
            normal + anomalous
        )));
    }
    if normal != anomalous {
        return Err(Error::validation(format!(
            "{phase} items must be class-balanced, found {normal} normal and {anomalous} anomalous"
        )));
    }
    Ok(())
}

fn check_explanations(
    id: &str,
    label: Label,
    explanations: &BTreeMap<Technique, Explanation>,
    required: &[Technique],
) -> Result<()> {
    for t in required {
        let e = explanations
            .get(t)
            .ok_or_else(|| Error::validation(format!("item `{id}` lacks a {t} explanation")))?;
        if e.method != *t || e.verdict != label || e.review_id != id {
            return Err(Error::validation(format!(
                "{t} explanation of item `{id}` does not match its technique, review or model label"
            )));
        }
    }
    Ok(())
}

impl SurveyConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: SurveyConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.sizes;
        if s.learning == 0 || s.prediction == 0 || s.utility == 0 {
            return Err(Error::validation("survey phases must not be empty"));
        }
        check_balanced(
            "learning",
            self.learning_items.iter().map(|i| i.model_label),
            s.learning,
        )?;
        check_balanced(
            "prediction",
            self.prediction_items.iter().map(|i| i.model_label),
            s.prediction,
        )?;
        check_balanced(
            "utility",
            self.utility_items.iter().map(|i| i.model_label),
            s.utility,
        )?;

        for (phase, ids) in [
            (
                "learning",
                self.learning_items
                    .iter()
                    .map(|i| &i.review_id)
                    .collect::<Vec<_>>(),
            ),
            (
                "prediction",
                self.prediction_items.iter().map(|i| &i.review_id).collect(),
            ),
            (
                "utility",
                self.utility_items.iter().map(|i| &i.review_id).collect(),
            ),
        ] {
            let mut seen = HashSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::validation(format!(
                        "{phase} item `{id}` appears twice"
                    )));
                }
            }
        }
        let learning: HashSet<&str> = self
            .learning_items
            .iter()
            .map(|i| i.review_id.as_str())
            .collect();
        if let Some(p) = self
            .prediction_items
            .iter()
            .find(|p| learning.contains(p.review_id.as_str()))
        {
            return Err(Error::validation(format!(
                "prediction item `{}` is also a learning item",
                p.review_id
            )));
        }

        let required: Vec<Technique> = match self.technique_assignment {
            TechniqueAssignment::RoundRobin => Technique::ALL.to_vec(),
            TechniqueAssignment::Fixed(t) => vec![t],
        };
        for i in &self.learning_items {
            check_explanations(&i.review_id, i.model_label, &i.explanations, &required)?;
        }
        for i in &self.utility_items {
            check_explanations(
                &i.review_id,
                i.model_label,
                &i.explanations,
                &Technique::ALL,
            )?;
        }
        Ok(())
    }

    pub fn prediction_labels(&self) -> Vec<(String, Label)> {
        self.prediction_items
            .iter()
            .map(|p| (p.review_id.clone(), p.model_label))
            .collect()
    }
}
