use std::collections::BTreeMap;

use super::config::{
    LearningItem, PredictionItem, SurveyConfig, SurveySizes, TechniqueAssignment, UtilityItem,
};
use crate::corpus::Label;
use crate::explain::{Evidence, Explanation, Technique, TermMatch, TokenWeight};

const NORMAL: &[&str] = &[
    "Rich dark chocolate with a smooth finish",
    "The bars arrived fresh and taste of real cocoa",
    "Creamy milk chocolate, my kids love these bars",
    "Good value box of chocolate bars for snacking",
    "Bitter cocoa flavour, not too sweet, great bar",
    "Nice crunchy chocolate bar with almonds",
    "These chocolate bars melt nicely in the mouth",
    "Tasty bars with a hint of sea salt",
    "Chocolate quality is excellent for the price",
    "Soft caramel centre inside a chocolate bar",
    "Dark chocolate bars that are not waxy",
    "The cocoa taste is deep and lasting",
    "Chocolate bars came well packed and unbroken",
    "Sweet treat, the chocolate is very smooth",
    "A lovely bar of chocolate after dinner",
    "Great mint chocolate bars for the office",
    "Real cocoa butter, you can taste it",
    "Perfect bar size and rich chocolate",
    "Fair trade chocolate bars with good taste",
    "Orange flavoured chocolate bar is delicious",
    "Chunky bars packed with chocolate chips",
];

const ANOMALOUS: &[&str] = &[
    "The pencils sharpen easily and do not break",
    "Wireless mouse stopped clicking after a week",
    "Great brand, always reliable",
    "Shipping was slow but the seller answered",
    "This notebook paper is thick and smooth",
    "Battery lasts long in this mouse",
    "Five stars",
    "Ink pens write smoothly on glossy paper",
    "Would buy from this brand again",
    "Colored pencils with vivid pigments",
    "The keyboard keys feel cheap",
    "Bought it as a gift",
    "The stapler jams constantly",
    "Delivered on time, thanks",
    "Mouse pad edges started fraying",
    "Markers dried out quickly",
    "Good customer service from the brand",
    "Eraser leaves no smudges",
    "Phone case fits well",
    "Came in a nice box",
    "Highlighters are bright",
];

fn explanation(id: &str, text: &str, label: Label, technique: Technique) -> Explanation {
    let words: Vec<&str> = text.split_whitespace().collect();
    let evidence = match (technique, label) {
        (Technique::FrequentTerms, Label::Normal) => Evidence::MatchedTerms {
            matches: vec![TermMatch {
                review_term: "chocol".into(),
                list_term: "chocol".into(),
                similarity: 1.0,
            }],
        },
        (Technique::FrequentTerms, Label::Anomalous) => Evidence::NonOccurrence {
            statement: format!("no frequent chocolate-bar terms found in review {id}"),
            searched_terms: vec![
                "chocol".into(),
                "bar".into(),
                "cocoa".into(),
                "tast".into(),
                "sweet".into(),
            ],
        },
        (Technique::Occlusion, _) => Evidence::TokenWeights {
            weights: words
                .iter()
                .take(5)
                .enumerate()
                .map(|(i, w)| TokenWeight {
                    token: w.to_string(),
                    weight: 0.5 / (i + 1) as f64,
                })
                .collect(),
        },
        (Technique::Llm, _) => Evidence::Prose {
            text: format!("Demo rationale {id}: the review reads as {label} for the product."),
        },
    };
    Explanation {
        review_id: id.to_string(),
        method: technique,
        verdict: label,
        evidence,
    }
}

fn all_explanations(id: &str, text: &str, label: Label) -> BTreeMap<Technique, Explanation> {
    Technique::ALL
        .into_iter()
        .map(|t| (t, explanation(id, text, label, t)))
        .collect()
}

/// A small valid configuration of demo reviews, for trying the server without real data.
pub fn demo_config(seed: u64) -> SurveyConfig {
    let sizes = SurveySizes::default();
    let mut normal = NORMAL
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("n{i:02}"), *t, Label::Normal));
    let mut anomalous = ANOMALOUS
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("a{i:02}"), *t, Label::Anomalous));
    let mut take = |n: usize| -> Vec<(String, &'static str, Label)> {
        let half = n / 2;
        let mut v: Vec<_> = normal.by_ref().take(half).collect();
        v.extend(anomalous.by_ref().take(half));
        v
    };
    let learning = take(sizes.learning);
    let prediction = take(sizes.prediction);
    let utility = take(sizes.utility);
    SurveyConfig {
        seed,
        technique_assignment: TechniqueAssignment::RoundRobin,
        sizes,
        learning_items: learning
            .into_iter()
            .map(|(id, text, label)| LearningItem {
                explanations: all_explanations(&id, text, label),
                review_id: id,
                product: "chocolate bars".into(),
                text: text.into(),
                model_label: label,
            })
            .collect(),
        prediction_items: prediction
            .into_iter()
            .map(|(id, text, label)| PredictionItem {
                review_id: id,
                product: "chocolate bars".into(),
                text: text.into(),
                model_label: label,
            })
            .collect(),
        utility_items: utility
            .into_iter()
            .map(|(id, text, label)| UtilityItem {
                explanations: all_explanations(&id, text, label),
                review_id: id,
                product: "chocolate bars".into(),
                text: text.into(),
                model_label: label,
            })
            .collect(),
    }
}
