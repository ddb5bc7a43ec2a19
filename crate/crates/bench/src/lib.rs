//! Seeded inputs shared by the benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform entries in `[-1, 1)`, reproducible per seed.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Word-salad review texts over a fixed vocabulary.
pub fn review_texts(n: usize, words_per_review: usize, seed: u64) -> Vec<String> {
    const VOCAB: &[&str] = &[
        "chocolate",
        "cocoa",
        "bar",
        "dark",
        "milk",
        "sweet",
        "creamy",
        "smooth",
        "bitter",
        "caramel",
        "price",
        "value",
        "fresh",
        "taste",
        "flavour",
        "box",
        "gift",
        "melt",
        "rich",
        "salt",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..words_per_review)
                .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_seeded() {
        assert_eq!(random_matrix(3, 4, 1), random_matrix(3, 4, 1));
        assert_ne!(random_matrix(3, 4, 1), random_matrix(3, 4, 2));
        let texts = review_texts(5, 8, 9);
        assert_eq!(texts, review_texts(5, 8, 9));
        assert!(texts.iter().all(|t| t.split(' ').count() == 8));
    }
}
