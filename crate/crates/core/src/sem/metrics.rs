//! Classification and calibration metrics over (confidence, label) pairs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    /// Only one class is present among the labels.
    pub degenerate_labels: bool,
    /// No positive predictions; precision reported as 0.
    pub precision_undefined: bool,
    /// No positive labels; recall reported as 0.
    pub recall_undefined: bool,
    /// Scores or labels have zero variance; pearson reported as 0.
    pub pearson_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Mean binary cross-entropy.
    pub loss: f64,
    pub brier: f64,
    pub pearson: f64,
    pub flags: MetricFlags,
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

pub fn evaluate_scores(scores: &[f64], labels: &[bool]) -> Metrics {
    assert_eq!(scores.len(), labels.len(), "one score per label");
    let n = scores.len();
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let p = s > 0.5;
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
        if p == l {
            correct += 1;
        }
    }
    let nf = n.max(1) as f64;
    let clamp = |s: f64| s.clamp(1e-12, 1.0 - 1e-12);
    let loss = scores
        .iter()
        .zip(&y)
        .map(|(&s, &t)| -(t * clamp(s).ln() + (1.0 - t) * (1.0 - clamp(s)).ln()))
        .sum::<f64>()
        / nf;
    let brier = scores.iter().zip(&y).map(|(s, t)| (s - t).powi(2)).sum::<f64>() / nf;
    let r = pearson(scores, &y);
    let positives = labels.iter().filter(|&&l| l).count();
    let flags = MetricFlags {
        degenerate_labels: positives == 0 || positives == n,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
        pearson_undefined: r.is_none(),
    };
    Metrics {
        count: n,
        accuracy: correct as f64 / nf,
        precision: if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 },
        loss,
        brier,
        pearson: r.unwrap_or(0.0),
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scores() {
        let m = evaluate_scores(&[1.0, 0.0, 1.0], &[true, false, true]);
        assert_eq!(m.brier, 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert!((m.pearson - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_half_on_balanced_labels() {
        let m = evaluate_scores(&[0.5; 4], &[true, false, true, false]);
        assert!((m.brier - 0.25).abs() < 1e-15);
        assert!(m.flags.pearson_undefined && m.flags.precision_undefined);
        assert_eq!(m.pearson, 0.0);
    }

    #[test]
    fn single_class_is_flagged() {
        let m = evaluate_scores(&[0.1, 0.2], &[false, false]);
        assert_eq!(m.accuracy, 1.0);
        assert!(m.flags.degenerate_labels && m.flags.recall_undefined);
    }
}
