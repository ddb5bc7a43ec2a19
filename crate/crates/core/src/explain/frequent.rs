use super::terms::{match_terms, TermList};
use super::{Evidence, Explanation, Technique};
use crate::corpus::{Label, Review};
use crate::encoder::EmbeddingProvider;
use crate::error::Result;

/// List terms quoted in a non-occurrence explanation.
pub const NON_OCCURRENCE_TOP: usize = 5;

pub const UNSUPPORTED_NORMAL_NOTE: &str = "no supporting frequent terms";

/// Normal verdicts cite matched list terms; anomalous verdicts cite the absence
/// of the list's top terms and never claim a match.
pub fn explain_frequent(
    review: &Review,
    label: Label,
    terms: &TermList,
    provider: &dyn EmbeddingProvider,
) -> Result<Explanation> {
    let evidence = match label {
        Label::Normal => {
            let matches = match_terms(review, terms, provider)?;
            if matches.is_empty() {
                Evidence::UnsupportedNormal {
                    note: UNSUPPORTED_NORMAL_NOTE.to_string(),
                }
            } else {
                Evidence::MatchedTerms { matches }
            }
        }
        Label::Anomalous => {
            let searched_terms = terms.top(NON_OCCURRENCE_TOP);
            let statement = if searched_terms.is_empty() {
                format!(
                    "no frequent terms are known for product `{}`",
                    terms.product_id
                )
            } else {
                format!(
                    "none of the frequent terms of product `{}` occur in the review, e.g. {}",
                    terms.product_id,
                    searched_terms.join(", ")
                )
            };
            Evidence::NonOccurrence {
                statement,
                searched_terms,
            }
        }
    };
    Ok(Explanation {
        review_id: review.id.clone(),
        method: Technique::FrequentTerms,
        verdict: label,
        evidence,
    })
}
