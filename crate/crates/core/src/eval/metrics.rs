use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Confusion counts with the anomalous class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Anomalous, Label::Anomalous) => self.tp += 1,
            (Label::Normal, Label::Anomalous) => self.fp += 1,
            (Label::Anomalous, Label::Normal) => self.fn_ += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (truth, predicted) in pairs {
            c.record(truth, predicted);
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("accuracy of an empty set".into())),
            n => Ok((self.tp + self.tn) as f64 / n as f64),
        }
    }
}

/// `2TP / (2TP + FP + FN)`.
pub fn f1_score(c: &ConfusionCounts) -> Result<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Err(Error::UndefinedMetric(
            "F1 needs at least one positive prediction or positive instance".into(),
        ));
    }
    Ok((2 * c.tp) as f64 / denom as f64)
}

/// Mean and sample (n-1) standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("mean of no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn f1_cases() {
        assert_eq!(f1_score(&ConfusionCounts::new(10, 0, 0, 0)).unwrap(), 1.0);
        assert_abs_diff_eq!(
            f1_score(&ConfusionCounts::new(50, 5, 5, 40)).unwrap(),
            100.0 / 110.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            f1_score(&ConfusionCounts::new(50, 5, 5, 0)).unwrap(),
            0.9091,
            epsilon = 1e-4
        );
        assert!(matches!(
            f1_score(&ConfusionCounts::new(0, 0, 0, 7)),
            Err(Error::UndefinedMetric(_))
        ));
        assert_eq!(f1_score(&ConfusionCounts::new(0, 3, 0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn record_and_serde() {
        let c = ConfusionCounts::from_pairs([
            (Label::Anomalous, Label::Anomalous),
            (Label::Normal, Label::Anomalous),
            (Label::Anomalous, Label::Normal),
            (Label::Normal, Label::Normal),
            (Label::Normal, Label::Normal),
        ]);
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 2));
        assert_eq!(c.total(), 5);
        assert_eq!(c.accuracy().unwrap(), 0.6);
        let v = serde_json::to_value(c).unwrap();
        assert_eq!(v["fn"], 1);
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[3.0]).unwrap(), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        // sqrt(5/3)
        assert_abs_diff_eq!(s, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert!(mean_std(&[]).is_err());
    }

    proptest! {
        #[test]
        fn f1_is_scale_invariant(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500, k in 1u64..50) {
            prop_assume!(2 * tp + fp + fn_ > 0);
            let a = f1_score(&ConfusionCounts::new(tp, fp, fn_, tn)).unwrap();
            let b = f1_score(&ConfusionCounts::new(k * tp, k * fp, k * fn_, k * tn)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
