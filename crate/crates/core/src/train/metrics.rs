//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub runtime_secs: f64,
}

impl EvalReport {
    pub fn support(&self) -> Vec<usize> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Metrics of `predicted` against `actual`. Precision, recall and F1 of a
/// class are 0 whenever their denominator is 0.
pub fn classification_report(actual: &[usize], predicted: &[usize], num_classes: usize) -> Result<EvalReport> {
    if actual.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!("{} labels vs {} predictions", actual.len(), predicted.len())));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= num_classes || p >= num_classes {
            return Err(Error::InvalidArgument(format!("class index outside {num_classes} classes")));
        }
        confusion[a][p] += 1;
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision = Vec::with_capacity(num_classes);
    let mut recall = Vec::with_capacity(num_classes);
    let mut f1 = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let predicted_c: usize = confusion.iter().map(|r| r[c]).sum();
        let actual_c: usize = confusion[c].iter().sum();
        let (p, r) = (ratio(tp, predicted_c), ratio(tp, actual_c));
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
    }
    let trace: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        accuracy: trace as f64 / actual.len() as f64,
        macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion,
        runtime_secs: 0.0,
    })
}
