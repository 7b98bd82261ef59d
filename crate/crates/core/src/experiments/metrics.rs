//! Classification metrics. Failing is the positive class everywhere.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::datamodel::Label;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn count(predicted_fail: &[bool], labels: &[Label]) -> Self {
        assert_eq!(predicted_fail.len(), labels.len(), "length mismatch");
        let mut c = Confusion::default();
        for (&p, &l) in predicted_fail.iter().zip(labels) {
            match (p, l.is_fail()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// True positive rate: recall of the failing class.
    pub fn tpr(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// True negative rate: recall of the passing class.
    pub fn tnr(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Balanced accuracy `(TPR + TNR) / 2`. Undefined when the labels contain a
/// single class; that is an error, not a silent 0.5.
pub fn balanced_accuracy(predicted_fail: &[bool], labels: &[Label]) -> Result<f64> {
    let c = Confusion::count(predicted_fail, labels);
    if c.tp + c.fn_ == 0 || c.tn + c.fp == 0 {
        return Err(CoreError::data(
            "balanced accuracy undefined: labels contain a single class",
        ));
    }
    Ok((c.tpr() + c.tnr()) / 2.0)
}

/// Thresholds fail probabilities at 0.5: `p_fail >= 0.5` predicts fail.
pub fn predict_labels(fail_probs: &[f64]) -> Vec<bool> {
    fail_probs.iter().map(|&p| p >= 0.5).collect()
}
