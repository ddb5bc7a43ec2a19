//! Two-cluster Gaussian scenarios with a known separation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{build_scenario, Review, ReviewSet, Scenario, ScenarioKind};
use crate::encoder::{Embedding, EmbeddingCache};
use crate::error::{Error, Result};

pub const NORMAL_PRODUCT: &str = "synthetic-normal";
pub const ANOMALOUS_PRODUCT: &str = "synthetic-anomalous";

/// Normal rows ~ N(0, I); anomalous rows ~ N(distance·u, I) for a seeded unit vector u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dimension: usize,
    pub distance: f64,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Far products: centroids 8 apart in 64 dimensions, 500 reviews each.
    pub fn far(seed: u64) -> Self {
        SyntheticSpec {
            dimension: 64,
            distance: 8.0,
            n_normal: 500,
            n_anomalous: 500,
            seed,
        }
    }

    /// Near products: as [`SyntheticSpec::far`] with centroids 3 apart.
    pub fn near(seed: u64) -> Self {
        SyntheticSpec {
            distance: 3.0,
            ..Self::far(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dimension == 0 || self.n_normal == 0 || self.n_anomalous == 0 {
            return Err(Error::validation(
                "synthetic dimension and class sizes must be positive",
            ));
        }
        if !(self.distance.is_finite() && self.distance >= 0.0) {
            return Err(Error::validation(format!(
                "invalid centroid distance {}",
                self.distance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub scenario: Scenario,
    /// Embeddings keyed by review id.
    pub cache: EmbeddingCache,
    pub anomalous_center: Vec<f64>,
}

pub fn gaussian_scenario(spec: &SyntheticSpec) -> Result<SyntheticScenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..spec.dimension)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    };

    let mut u = draw(&mut rng);
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        u[0] = 1.0;
    } else {
        u.iter_mut().for_each(|v| *v /= norm);
    }
    let center: Vec<f64> = u.iter().map(|v| v * spec.distance).collect();

    let mut cache = EmbeddingCache::new(spec.dimension);
    let mut normal = Vec::with_capacity(spec.n_normal);
    for i in 0..spec.n_normal {
        let id = format!("n{i:05}");
        cache.insert(id.clone(), Embedding::new(draw(&mut rng))?)?;
        normal.push(Review::new(
            id,
            NORMAL_PRODUCT,
            format!("synthetic normal review {i}"),
        ));
    }
    let mut anomalous = Vec::with_capacity(spec.n_anomalous);
    for i in 0..spec.n_anomalous {
        let id = format!("a{i:05}");
        let v: Vec<f64> = draw(&mut rng)
            .iter()
            .zip(&center)
            .map(|(z, c)| z + c)
            .collect();
        cache.insert(id.clone(), Embedding::new(v)?)?;
        anomalous.push(Review::new(
            id,
            ANOMALOUS_PRODUCT,
            format!("synthetic anomalous review {i}"),
        ));
    }
    let scenario = build_scenario(
        ReviewSet::new(normal)?,
        vec![ReviewSet::new(anomalous)?],
        ScenarioKind::OneVsOne,
    )?;
    Ok(SyntheticScenario {
        scenario,
        cache,
        anomalous_center: center,
    })
}
