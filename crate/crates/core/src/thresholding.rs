//! Decision thresholds over training reconstruction errors.
//!
//! Quantiles use linear interpolation on the sorted sample at index
//! `(n - 1) * q / 100`. The IQR fences are `Q3 + 1.5 * IQR` (outlier) and
//! `Q3 + 3 * IQR` (extreme outlier), with `IQR = Q3 - Q1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Training reconstruction errors, kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    sorted: Vec<f64>,
}

impl ErrorSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("error sample is empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "error sample contains non-finite value {v}"
            )));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::validation(format!(
                "error sample contains negative value {v}"
            )));
        }
        values.sort_by(f64::total_cmp);
        Ok(ErrorSample { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }
}

pub fn quantile(sample: &ErrorSample, q: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidPolicy(format!(
            "quantile {q} outside [0, 100]"
        )));
    }
    let s = &sample.sorted;
    let pos = (s.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(s[lo] + (s[hi] - s[lo]) * frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrThresholds {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub outlier: f64,
    pub extreme: f64,
}

pub fn iqr_thresholds(sample: &ErrorSample) -> IqrThresholds {
    // q = 25 and q = 75 are always in range.
    let q1 = quantile(sample, 25.0).expect("valid quantile");
    let q3 = quantile(sample, 75.0).expect("valid quantile");
    let iqr = q3 - q1;
    IqrThresholds {
        q1,
        q3,
        iqr,
        outlier: q3 + 1.5 * iqr,
        extreme: q3 + 3.0 * iqr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    OutlierIqr,
    ExtremeIqr,
    Percentile,
}

/// How μ is derived from the training errors.
///
/// Config files name policies the way hyperparameter tables do:
/// `outlierIQR`, `extremeIQR`, or `Q<percentile>` such as `Q90`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    OutlierIqr,
    ExtremeIqr,
    Percentile(f64),
}

impl ThresholdPolicy {
    pub fn from_parts(kind: PolicyKind, percentile_q: Option<f64>) -> Result<Self> {
        match (kind, percentile_q) {
            (PolicyKind::OutlierIqr, None) => Ok(ThresholdPolicy::OutlierIqr),
            (PolicyKind::ExtremeIqr, None) => Ok(ThresholdPolicy::ExtremeIqr),
            (PolicyKind::Percentile, Some(q)) => {
                let p = ThresholdPolicy::Percentile(q);
                p.validate()?;
                Ok(p)
            }
            (PolicyKind::Percentile, None) => Err(Error::InvalidPolicy(
                "percentile policy requires a percentile".into(),
            )),
            (k, Some(_)) => Err(Error::InvalidPolicy(format!(
                "{k:?} does not take a percentile"
            ))),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            ThresholdPolicy::OutlierIqr => PolicyKind::OutlierIqr,
            ThresholdPolicy::ExtremeIqr => PolicyKind::ExtremeIqr,
            ThresholdPolicy::Percentile(_) => PolicyKind::Percentile,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ThresholdPolicy::Percentile(q) = *self {
            if !(q > 0.0 && q < 100.0) {
                return Err(Error::InvalidPolicy(format!(
                    "percentile {q} must lie in (0, 100)"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::OutlierIqr => f.write_str("outlierIQR"),
            ThresholdPolicy::ExtremeIqr => f.write_str("extremeIQR"),
            ThresholdPolicy::Percentile(q) => write!(f, "Q{q}"),
        }
    }
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "outlierIQR" => Ok(ThresholdPolicy::OutlierIqr),
            "extremeIQR" => Ok(ThresholdPolicy::ExtremeIqr),
            _ => {
                let q = s
                    .strip_prefix('Q')
                    .and_then(|n| n.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::InvalidPolicy(format!(
                            "unknown threshold `{s}` (expected outlierIQR, extremeIQR or Q<percentile>)"
                        ))
                    })?;
                ThresholdPolicy::from_parts(PolicyKind::Percentile, Some(q))
            }
        }
    }
}

impl Serialize for ThresholdPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThresholdPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn select_threshold(sample: &ErrorSample, policy: ThresholdPolicy) -> Result<f64> {
    policy.validate()?;
    Ok(match policy {
        ThresholdPolicy::OutlierIqr => iqr_thresholds(sample).outlier,
        ThresholdPolicy::ExtremeIqr => iqr_thresholds(sample).extreme,
        ThresholdPolicy::Percentile(q) => quantile(sample, q)?,
    })
}

/// Anomalous iff the score strictly exceeds μ; a tie is normal.
pub fn classify(score: f64, mu: f64) -> Label {
    if score > mu {
        Label::Anomalous
    } else {
        Label::Normal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub review_id: String,
    pub score: f64,
    pub threshold: f64,
    pub label: Label,
}

impl Classification {
    pub fn new(review_id: impl Into<String>, score: f64, threshold: f64) -> Self {
        Classification {
            review_id: review_id.into(),
            score,
            threshold,
            label: classify(score, threshold),
        }
    }
}
