//! Precision, recall and F1 with the patched class as positive.

use serde::{Deserialize, Serialize};

use crate::verify::VerdictValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Patched,
    Vulnerable,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    /// `None` when the denominator is zero.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Unknown verdicts, already counted as vulnerable predictions.
    pub unknown: usize,
}

/// Unknown counts as a vulnerable prediction.
pub fn compute_metrics(pairs: &[(GroundTruth, VerdictValue)]) -> Metrics {
    let mut m = Metrics::default();
    for (truth, verdict) in pairs {
        if *verdict == VerdictValue::Unknown {
            m.unknown += 1;
        }
        let predicted_patched = *verdict == VerdictValue::Patched;
        match (truth, predicted_patched) {
            (GroundTruth::Patched, true) => m.tp += 1,
            (GroundTruth::Vulnerable, true) => m.fp += 1,
            (GroundTruth::Patched, false) => m.fn_ += 1,
            (GroundTruth::Vulnerable, false) => m.tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = match (m.precision, m.recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use GroundTruth::*;
    use VerdictValue as V;

    #[test]
    fn worked_example() {
        let m = compute_metrics(&[
            (Patched, V::Patched),
            (Patched, V::Patched),
            (Vulnerable, V::Patched),
            (Patched, V::Vulnerable),
        ]);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 0));
        for v in [m.precision, m.recall, m.f1] {
            assert!((v.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_unknown_patched() {
        let m = compute_metrics(&[(Patched, V::Unknown), (Patched, V::Unknown), (Patched, V::Unknown)]);
        assert_eq!(m.fn_, 3);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.unknown, 3);
    }

    #[test]
    fn perfect() {
        let m = compute_metrics(&[(Patched, V::Patched)]);
        assert_eq!((m.precision, m.recall, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn no_positive_predictions() {
        let m = compute_metrics(&[(Vulnerable, V::Vulnerable)]);
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);
    }
}
