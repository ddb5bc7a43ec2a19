use super::tokens::surface_tokens;
use super::{Evidence, Explanation, Technique, TokenWeight};
use crate::corpus::{Label, Review};
use crate::detector::{reconstruction_error, DetectorModel};
use crate::encoder::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::thresholding::classify;

pub const DEFAULT_TOP_K: usize = 5;

struct Occluded {
    verdict: Label,
    weights: Vec<TokenWeight>,
}

fn occlude(
    review: &Review,
    model: &DetectorModel,
    mu: f64,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Occluded> {
    if k == 0 {
        return Err(Error::validation("occlusion top-k must be at least 1"));
    }
    let tokens = surface_tokens(&review.text);
    if tokens.is_empty() {
        return Err(Error::validation(format!(
            "review `{}` has no tokens",
            review.id
        )));
    }

    let mut texts = Vec::with_capacity(tokens.len() + 1);
    texts.push(tokens.join(" "));
    for i in 0..tokens.len() {
        let rest: Vec<&str> = tokens
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| *t)
            .collect();
        texts.push(rest.join(" "));
    }
    // The empty text is represented by the zero vector.
    let nonempty: Vec<&str> = texts
        .iter()
        .filter(|t| !t.is_empty())
        .map(String::as_str)
        .collect();
    let mut embedded = provider.embed_batch(&nonempty)?.into_iter();
    let mut scores = Vec::with_capacity(texts.len());
    for t in &texts {
        let e = if t.is_empty() {
            Embedding::zeros(provider.dimension())
        } else {
            embedded.next().ok_or_else(|| {
                Error::validation("provider returned fewer embeddings than requested")
            })?
        };
        scores.push(reconstruction_error(model, &e)?);
    }

    let full = scores[0];
    let verdict = classify(full, mu);
    let mut weights: Vec<(usize, TokenWeight)> = tokens
        .iter()
        .zip(&scores[1..])
        .enumerate()
        .map(|(i, (tok, &removed))| {
            let weight = match verdict {
                Label::Anomalous => full - removed,
                Label::Normal => removed - full,
            };
            (
                i,
                TokenWeight {
                    token: tok.to_string(),
                    weight,
                },
            )
        })
        .collect();
    if let Some((_, w)) = weights.iter().find(|(_, w)| !w.weight.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite weight for token `{}`",
            w.token
        )));
    }
    weights.sort_by(|(ia, a), (ib, b)| b.weight.abs().total_cmp(&a.weight.abs()).then(ia.cmp(ib)));
    weights.truncate(k);
    Ok(Occluded {
        verdict,
        weights: weights.into_iter().map(|(_, w)| w).collect(),
    })
}

/// Leave-one-token-out importance of each token position, top `k` by magnitude.
///
/// A token's raw effect is the score of the review without it minus the full
/// score. Weights are signed so that positive supports the verdict `classify(full, mu)`:
/// anomalous verdicts report `full - removed`, normal verdicts `removed - full`.
/// Equal magnitudes keep their token order.
pub fn occlusion_importance(
    review: &Review,
    model: &DetectorModel,
    mu: f64,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<TokenWeight>> {
    occlude(review, model, mu, provider, k).map(|o| o.weights)
}

pub fn explain_occlusion(
    review: &Review,
    model: &DetectorModel,
    mu: f64,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Explanation> {
    let o = occlude(review, model, mu, provider, k)?;
    Ok(Explanation {
        review_id: review.id.clone(),
        method: Technique::Occlusion,
        verdict: o.verdict,
        evidence: Evidence::TokenWeights { weights: o.weights },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{embeddings_to_matrix, train_elm_ae, ElmAeConfig};
    use crate::encoder::HashedEncoder;

    fn model(enc: &HashedEncoder) -> DetectorModel {
        let texts = [
            "sweet chocolate bar",
            "dark cocoa bar",
            "milk chocolate treat",
            "creamy chocolate",
            "bitter dark chocolate bar",
            "tasty cocoa snack",
            "chocolate with nuts",
            "smooth milk bar",
        ];
        let embs: Vec<Embedding> = texts.iter().map(|t| enc.embed(t).unwrap()).collect();
        let x = embeddings_to_matrix(&embs).unwrap();
        train_elm_ae(
            &x,
            &ElmAeConfig {
                hidden_size: 6,
                ridge_lambda: 0.1,
                seed: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn k_limits_and_sorts() {
        let enc = HashedEncoder::new(32, 7).unwrap();
        let m = model(&enc);
        let r = Review::new(
            "r",
            "p",
            "one two three four five six seven eight nine ten eleven twelve",
        );
        let w = occlusion_importance(&r, &m, 0.0, &enc, 5).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w.windows(2).all(|p| p[0].weight.abs() >= p[1].weight.abs()));
    }

    #[test]
    fn direct_oracle_for_both_verdicts() {
        let enc = HashedEncoder::new(32, 7).unwrap();
        let m = model(&enc);
        let r = Review::new("r", "p", "wireless mouse chocolate");
        let full =
            reconstruction_error(&m, &enc.embed("wireless mouse chocolate").unwrap()).unwrap();
        let without_mouse =
            reconstruction_error(&m, &enc.embed("wireless chocolate").unwrap()).unwrap();

        let anomalous = occlusion_importance(&r, &m, full - 1.0, &enc, 3).unwrap();
        let normal = occlusion_importance(&r, &m, full + 1.0, &enc, 3).unwrap();
        let a = anomalous
            .iter()
            .find(|w| w.token == "mouse")
            .unwrap()
            .weight;
        let n = normal.iter().find(|w| w.token == "mouse").unwrap().weight;
        approx::assert_abs_diff_eq!(a, full - without_mouse, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(n, without_mouse - full, epsilon = 1e-12);

        let e = explain_occlusion(&r, &m, full - 1.0, &enc, 3).unwrap();
        assert_eq!(e.verdict, Label::Anomalous);
        // A score equal to mu is normal.
        assert_eq!(
            explain_occlusion(&r, &m, full, &enc, 3).unwrap().verdict,
            Label::Normal
        );
    }

    #[test]
    fn repeated_tokens_share_weight() {
        let enc = HashedEncoder::new(32, 7).unwrap();
        let m = model(&enc);
        let r = Review::new("r", "p", "bar bar bar bar");
        let w = occlusion_importance(&r, &m, 0.0, &enc, 10).unwrap();
        assert_eq!(w.len(), 4);
        for x in &w {
            approx::assert_abs_diff_eq!(x.weight, w[0].weight, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_token_uses_zero_vector() {
        let enc = HashedEncoder::new(32, 7).unwrap();
        let m = model(&enc);
        let r = Review::new("r", "p", "chocolate!");
        let w = occlusion_importance(&r, &m, 0.0, &enc, 5).unwrap();
        assert_eq!(w.len(), 1);
        let full = reconstruction_error(&m, &enc.embed("chocolate").unwrap()).unwrap();
        let empty = reconstruction_error(&m, &Embedding::zeros(32)).unwrap();
        let expected = if full > 0.0 {
            full - empty
        } else {
            empty - full
        };
        approx::assert_abs_diff_eq!(w[0].weight, expected, epsilon = 1e-12);
    }

    /// Removing this token leaves the embedding unchanged.
    struct IgnoresFiller;

    impl EmbeddingProvider for IgnoresFiller {
        fn dimension(&self) -> usize {
            2
        }

        fn embed(&self, text: &str) -> Result<Embedding> {
            let mut v = vec![0.1, 0.1];
            for t in text.split(' ') {
                match t {
                    "good" => v[0] += 1.0,
                    "bad" => v[1] += 1.0,
                    _ => {}
                }
            }
            Embedding::new(v)
        }
    }

    #[test]
    fn inert_token_has_zero_weight() {
        let x = embeddings_to_matrix(&[
            Embedding::new(vec![1.0, 0.0]).unwrap(),
            Embedding::new(vec![0.9, 0.1]).unwrap(),
            Embedding::new(vec![1.1, 0.2]).unwrap(),
        ])
        .unwrap();
        let m = train_elm_ae(
            &x,
            &ElmAeConfig {
                hidden_size: 2,
                ridge_lambda: 0.1,
                seed: 3,
            },
        )
        .unwrap();
        let r = Review::new("r", "p", "good filler bad");
        let w = occlusion_importance(&r, &m, 0.5, &IgnoresFiller, 3).unwrap();
        let filler = w.iter().find(|t| t.token == "filler").unwrap();
        assert_eq!(filler.weight, 0.0);
    }

    #[test]
    fn rejects_empty_and_zero_k() {
        let enc = HashedEncoder::new(32, 7).unwrap();
        let m = model(&enc);
        assert!(occlusion_importance(&Review::new("r", "p", "?!"), &m, 0.0, &enc, 5).is_err());
        assert!(occlusion_importance(&Review::new("r", "p", "bar"), &m, 0.0, &enc, 0).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn full_list_is_stable_per_position(words in proptest::collection::vec("[a-e]{1,3}", 1..8), k in 1usize..8) {
            let enc = HashedEncoder::new(32, 7).unwrap();
            let m = model(&enc);
            let r = Review::new("r", "p", words.join(" "));
            let full = occlusion_importance(&r, &m, 0.05, &enc, words.len()).unwrap();
            let again = occlusion_importance(&r, &m, 0.05, &enc, words.len()).unwrap();
            proptest::prop_assert_eq!(&full, &again);
            proptest::prop_assert_eq!(full.len(), words.len());
            let mut got: Vec<&str> = full.iter().map(|w| w.token.as_str()).collect();
            let mut want: Vec<&str> = words.iter().map(String::as_str).collect();
            got.sort_unstable();
            want.sort_unstable();
            proptest::prop_assert_eq!(got, want);
            let top = occlusion_importance(&r, &m, 0.05, &enc, k).unwrap();
            proptest::prop_assert_eq!(&top[..], &full[..k.min(full.len())]);
        }
    }
}
