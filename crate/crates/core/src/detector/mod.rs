//! Non-iterative autoencoders scored by reconstruction error.
//!
//! Two trainers are provided:
//!
//! * [`train_daef`]: a deep autoencoder built greedily. Each hidden layer
//!   draws seeded random weights, maps its input through `tanh`, and solves a
//!   ridge problem that reconstructs the layer input from those activations.
//!   The transpose of that decoder becomes the layer's encoding weights
//!   (stacked autoencoding). A final ridge solve maps the last hidden
//!   activations back to the original input.
//! * [`train_elm_ae`]: a single random `tanh` layer followed by a ridge
//!   readout (batch ELM autoencoder).
//!
//! The mean squared reconstruction error of an embedding is its normality
//! score: small means normal.

mod io;
mod ridge;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{Error, Result};

pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use ridge::{ridge_objective, ridge_solve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, m: &mut DMatrix<f64>) {
        if self == Activation::Tanh {
            m.apply(|v| *v = v.tanh());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Daef,
    #[serde(alias = "elm")]
    ElmAe,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Daef => "daef",
            DetectorKind::ElmAe => "elm_ae",
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daef" => Ok(DetectorKind::Daef),
            "elm" | "elm_ae" => Ok(DetectorKind::ElmAe),
            other => Err(Error::validation(format!(
                "unknown detector `{other}` (expected daef or elm)"
            ))),
        }
    }
}

/// Neurons per layer; the first and last entries equal the input dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::validation(format!(
                "architecture needs at least 3 layers, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::validation(format!(
                "architecture {layer_sizes:?} has an empty layer"
            )));
        }
        if layer_sizes[0] != layer_sizes[layer_sizes.len() - 1] {
            return Err(Error::validation(format!(
                "architecture {layer_sizes:?} must start and end with the input dimension"
            )));
        }
        Ok(Architecture(layer_sizes))
    }

    pub fn input_dimension(&self) -> usize {
        self.0[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.0[1..self.0.len() - 1]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.0
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Architecture::new(v)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(a: Architecture) -> Self {
        a.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaefConfig {
    pub architecture: Architecture,
    pub lambda_hid: f64,
    pub lambda_last: f64,
    pub seed: u64,
}

impl DaefConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_hid", self.lambda_hid),
            ("lambda_last", self.lambda_last),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElmAeConfig {
    pub hidden_size: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl ElmAeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::validation("hidden_size must be at least 1"));
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            return Err(Error::validation(format!(
                "ridge_lambda must be finite and >= 0, got {}",
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

/// One dense layer: `activation(input · weights + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = input * &self.weights;
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        self.activation.apply(&mut z);
        z
    }
}

/// A trained autoencoder plus the optional decision threshold μ.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub kind: DetectorKind,
    pub architecture: Architecture,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    pub threshold: Option<f64>,
}

impl DetectorModel {
    pub fn input_dimension(&self) -> usize {
        self.architecture.input_dimension()
    }

    pub fn with_threshold(mut self, mu: f64) -> Self {
        self.threshold = Some(mu);
        self
    }

    /// Forward pass over a batch (one sample per row).
    pub fn reconstruct(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dimension(),
                found: x.ncols(),
            });
        }
        let mut out = x.clone();
        for layer in &self.layers {
            out = layer.forward(&out);
        }
        Ok(out)
    }

    /// Per-row mean squared reconstruction error.
    pub fn score_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let recon = self.reconstruct(x)?;
        let d = x.ncols() as f64;
        Ok((0..x.nrows())
            .map(|i| (recon.row(i) - x.row(i)).norm_squared() / d)
            .collect())
    }

    pub fn reconstruction_error(&self, x: &Embedding) -> Result<f64> {
        reconstruction_error(self, x)
    }

    fn validate(&self) -> Result<()> {
        let mut width = self.input_dimension();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.nrows() != width || layer.bias.len() != layer.weights.ncols() {
                return Err(Error::Format(format!("layer {i} shapes do not compose")));
            }
            width = layer.weights.ncols();
        }
        if width != self.input_dimension() {
            return Err(Error::Format(
                "output width differs from input dimension".into(),
            ));
        }
        Ok(())
    }
}

/// Mean squared error between an embedding and its reconstruction.
pub fn reconstruction_error(model: &DetectorModel, x: &Embedding) -> Result<f64> {
    let row = DMatrix::from_row_slice(1, x.dimension(), x.values());
    Ok(model.score_batch(&row)?[0])
}

/// Stacks embeddings row-wise into an `n × d` matrix.
pub fn embeddings_to_matrix<'a>(
    rows: impl IntoIterator<Item = &'a Embedding>,
) -> Result<DMatrix<f64>> {
    let rows: Vec<&Embedding> = rows.into_iter().collect();
    let first = rows
        .first()
        .ok_or_else(|| Error::validation("no embeddings to stack"))?;
    let d = first.dimension();
    let mut data = Vec::with_capacity(rows.len() * d);
    for e in &rows {
        if e.dimension() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: e.dimension(),
            });
        }
        data.extend_from_slice(e.values());
    }
    Ok(DMatrix::from_row_slice(rows.len(), d, &data))
}

fn uniform_init(
    rng: &mut ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let r = 1.0 / (fan_in as f64).sqrt();
    let w = DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-r..=r));
    let b = DVector::from_fn(fan_out, |_, _| rng.random_range(-r..=r));
    (w, b)
}

fn check_training_input(x: &DMatrix<f64>, expected_dim: usize) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 samples, got {}",
            x.nrows()
        )));
    }
    if x.ncols() != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            found: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(
            "training data contains non-finite values".into(),
        ));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!(
            "{what} produced non-finite activations"
        )));
    }
    Ok(())
}

fn with_ones_column(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.ncols();
    h.clone().insert_column(n, 1.0)
}

/// Ridge readout with a bias: solves on `[H | 1]` and splits the last row off as the bias.
fn readout(h: &DMatrix<f64>, target: &DMatrix<f64>, lambda: f64) -> Result<Layer> {
    let w = ridge_solve(&with_ones_column(h), target, lambda)?;
    let k = h.ncols();
    let bias = w.row(k).transpose();
    let weights = w.rows(0, k).into_owned();
    Ok(Layer {
        weights,
        bias,
        activation: Activation::Linear,
    })
}

pub fn train_daef(x: &DMatrix<f64>, config: &DaefConfig) -> Result<DetectorModel> {
    config.validate()?;
    let arch = &config.architecture;
    check_training_input(x, arch.input_dimension())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layers = Vec::with_capacity(arch.hidden().len() + 1);
    let mut input = x.clone();
    for (depth, &width) in arch.hidden().iter().enumerate() {
        let (w, b) = uniform_init(&mut rng, input.ncols(), width);
        let projection = Layer {
            weights: w,
            bias: b,
            activation: Activation::Tanh,
        };
        let h = projection.forward(&input);
        check_finite(&h, &format!("hidden layer {depth} projection"))?;
        // Decoder h -> input; its transpose encodes input -> h.
        let decoder = ridge_solve(&h, &input, config.lambda_hid)?;
        let encoder = Layer {
            weights: decoder.transpose(),
            bias: DVector::zeros(width),
            activation: Activation::Tanh,
        };
        input = encoder.forward(&input);
        check_finite(&input, &format!("hidden layer {depth}"))?;
        layers.push(encoder);
    }
    layers.push(readout(&input, x, config.lambda_last)?);

    let model = DetectorModel {
        kind: DetectorKind::Daef,
        architecture: arch.clone(),
        activation: Activation::Tanh,
        layers,
        threshold: None,
    };
    Ok(model)
}

pub fn train_elm_ae(x: &DMatrix<f64>, config: &ElmAeConfig) -> Result<DetectorModel> {
    config.validate()?;
    let d = x.ncols();
    check_training_input(x, d)?;
    let architecture = Architecture::new(vec![d, config.hidden_size, d])?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, b) = uniform_init(&mut rng, d, config.hidden_size);
    let hidden = Layer {
        weights: w,
        bias: b,
        activation: Activation::Tanh,
    };
    let h = hidden.forward(x);
    check_finite(&h, "hidden layer")?;
    let out = readout(&h, x, config.ridge_lambda)?;

    Ok(DetectorModel {
        kind: DetectorKind::ElmAe,
        architecture,
        activation: Activation::Tanh,
        layers: vec![hidden, out],
        threshold: None,
    })
}

/// Trainer settings for either detector family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    Daef(DaefConfig),
    ElmAe(ElmAeConfig),
}

impl DetectorConfig {
    pub fn train(&self, x: &DMatrix<f64>) -> Result<DetectorModel> {
        match self {
            DetectorConfig::Daef(c) => train_daef(x, c),
            DetectorConfig::ElmAe(c) => train_elm_ae(x, c),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DetectorConfig::Daef(c) => format!(
                "DAEF arch {:?}, lambda_hid {}, lambda_last {}",
                c.architecture.layer_sizes(),
                c.lambda_hid,
                c.lambda_last
            ),
            DetectorConfig::ElmAe(c) => {
                format!("ELM-AE hidden {}, lambda {}", c.hidden_size, c.ridge_lambda)
            }
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        match &mut c {
            DetectorConfig::Daef(d) => d.seed = seed,
            DetectorConfig::ElmAe(e) => e.seed = seed,
        }
        c
    }
}
