//! Per-classification explanations.
//!
//! Three techniques share one [`Explanation`] shape: frequent-term matching
//! against a product's normal vocabulary, leave-one-token-out occlusion
//! (a tractable stand-in for Shapley token attribution, not an exact one),
//! and templated prose from a chat-completion backend.

mod frequent;
mod llm;
mod occlusion;
mod terms;
mod tokens;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::Error;

pub use frequent::{explain_frequent, NON_OCCURRENCE_TOP, UNSUPPORTED_NORMAL_NOTE};
pub use llm::{
    ChatMessage, ChatRole, HttpLlmClient, HttpLlmConfig, LlmClient, LlmExplainer, MockLlmClient,
    MockMode, PromptTemplates, DEFAULT_TEMPLATE_VERSION, LLM_KEY_ENV,
};
pub use occlusion::{explain_occlusion, occlusion_importance, DEFAULT_TOP_K};
pub use terms::{
    build_term_list, build_term_list_from_reviews, dedup_terms, match_terms, TermList, TermMatch,
    DEFAULT_LIST_SIZE, DEFAULT_SIM_THRESHOLD,
};
pub use tokens::{is_stopword, normalize_tokens, surface_tokens, STEMMER_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    FrequentTerms,
    Occlusion,
    Llm,
}

impl Technique {
    pub const ALL: [Technique; 3] = [
        Technique::FrequentTerms,
        Technique::Occlusion,
        Technique::Llm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::FrequentTerms => "frequent_terms",
            Technique::Occlusion => "occlusion",
            Technique::Llm => "llm",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "frequent_terms" | "frequent-terms" => Ok(Technique::FrequentTerms),
            "occlusion" => Ok(Technique::Occlusion),
            "llm" => Ok(Technique::Llm),
            other => Err(Error::validation(format!(
                "unknown technique `{other}` (expected frequent_terms, occlusion or llm)"
            ))),
        }
    }
}

/// Signed token importance; positive supports the assigned label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evidence {
    MatchedTerms {
        matches: Vec<TermMatch>,
    },
    UnsupportedNormal {
        note: String,
    },
    NonOccurrence {
        statement: String,
        searched_terms: Vec<String>,
    },
    TokenWeights {
        weights: Vec<TokenWeight>,
    },
    Prose {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub review_id: String,
    pub method: Technique,
    pub verdict: Label,
    pub evidence: Evidence,
}

impl Explanation {
    /// One-line rendering for terminals and reports.
    pub fn summary(&self) -> String {
        match &self.evidence {
            Evidence::MatchedTerms { matches } => {
                let parts: Vec<String> = matches
                    .iter()
                    .map(|m| {
                        if m.review_term == m.list_term {
                            format!("{} ({:.2})", m.review_term, m.similarity)
                        } else {
                            format!("{}~{} ({:.2})", m.review_term, m.list_term, m.similarity)
                        }
                    })
                    .collect();
                format!("{}: matches {}", self.verdict, parts.join(", "))
            }
            Evidence::UnsupportedNormal { note } => format!("{}: {note}", self.verdict),
            Evidence::NonOccurrence { statement, .. } => format!("{}: {statement}", self.verdict),
            Evidence::TokenWeights { weights } => {
                let parts: Vec<String> = weights
                    .iter()
                    .map(|w| format!("{} {:+.4}", w.token, w.weight))
                    .collect();
                format!("{}: {}", self.verdict, parts.join(", "))
            }
            Evidence::Prose { text } => format!("{}: {text}", self.verdict),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn technique_round_trip() {
        for t in Technique::ALL {
            assert_eq!(t.as_str().parse::<Technique>().unwrap(), t);
            assert_eq!(serde_json::to_value(t).unwrap(), t.as_str());
        }
        assert!("shap".parse::<Technique>().is_err());
    }

    #[test]
    fn evidence_is_tagged() {
        let e = Evidence::Prose { text: "ok".into() };
        assert_eq!(
            serde_json::to_value(&e).unwrap(),
            serde_json::json!({"type": "prose", "text": "ok"})
        );
    }
}
