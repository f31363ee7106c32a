//! Confusion counts and balanced classification accuracy.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trial::ClassLabel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("class {0} has no true instances")]
    AbsentClass(usize),
    #[error("label {0} outside 0..{1}")]
    OutOfRange(ClassLabel, usize),
    #[error("confusion matrix must be square with at least two classes")]
    Shape,
}

/// Row = true class, column = predicted class. Unparsed predictions are kept
/// in a separate per-class column and always count as wrong.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub unparsed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
            unparsed: vec![0; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self, MetricError> {
        let k = counts.len();
        if k < 2 || counts.iter().any(|r| r.len() != k) {
            return Err(MetricError::Shape);
        }
        Ok(Self {
            counts,
            unparsed: vec![0; k],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// `predicted = None` records a parse failure.
    pub fn record(&mut self, truth: ClassLabel, predicted: Option<ClassLabel>) -> Result<(), MetricError> {
        let k = self.num_classes();
        if truth.index() >= k {
            return Err(MetricError::OutOfRange(truth, k));
        }
        match predicted {
            Some(p) if p.index() >= k => Err(MetricError::OutOfRange(p, k)),
            Some(p) => {
                self.counts[truth.index()][p.index()] += 1;
                Ok(())
            }
            None => {
                self.unparsed[truth.index()] += 1;
                Ok(())
            }
        }
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum::<u64>() + self.unparsed[class]
    }

    pub fn total(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.row_total(c)).sum()
    }

    pub fn unparsed_total(&self) -> u64 {
        self.unparsed.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn recall(&self, class: usize) -> Result<f64, MetricError> {
        let n = self.row_total(class);
        if n == 0 {
            return Err(MetricError::AbsentClass(class));
        }
        Ok(self.counts[class][class] as f64 / n as f64)
    }

    /// Mean per-class recall, in percent.
    pub fn bca(&self) -> Result<f64, MetricError> {
        let k = self.num_classes();
        let mut sum = 0.0;
        for c in 0..k {
            sum += self.recall(c)?;
        }
        Ok(100.0 * sum / k as f64)
    }

    /// Plain accuracy, in percent. `None` when empty.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| 100.0 * self.correct() as f64 / n as f64)
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricError> {
        if other.num_classes() != self.num_classes() {
            return Err(MetricError::Shape);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.unparsed.iter_mut().zip(&other.unparsed) {
            *x += y;
        }
        Ok(())
    }
}

/// Unweighted mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn documented_values() {
        assert_eq!(cm(&[&[10, 0], &[0, 10]]).bca().unwrap(), 100.0);
        assert!((cm(&[&[8, 2], &[4, 6]]).bca().unwrap() - 70.0).abs() < 1e-12);
        assert_eq!(cm(&[&[10, 0], &[7, 0]]).bca().unwrap(), 50.0);
    }

    #[test]
    fn absent_class_is_an_error() {
        assert_eq!(cm(&[&[3, 1], &[0, 0]]).bca(), Err(MetricError::AbsentClass(1)));
    }

    #[test]
    fn unparsed_counts_as_wrong() {
        let mut m = ConfusionMatrix::new(2);
        m.record(ClassLabel(0), Some(ClassLabel(0))).unwrap();
        m.record(ClassLabel(0), None).unwrap();
        m.record(ClassLabel(1), Some(ClassLabel(1))).unwrap();
        assert_eq!(m.bca().unwrap(), 75.0);
        assert_eq!(m.total(), 3);
        assert_eq!(m.unparsed_total(), 1);
        assert!(m.record(ClassLabel(2), None).is_err());
    }

    proptest! {
        #[test]
        fn duplicating_every_trial_keeps_bca(rows in prop::collection::vec(prop::collection::vec(0u64..50, 3), 3)) {
            prop_assume!(rows.iter().all(|r| r.iter().sum::<u64>() > 0));
            let a = ConfusionMatrix::from_counts(rows.clone()).unwrap();
            let doubled = rows.iter().map(|r| r.iter().map(|x| 2 * x).collect()).collect();
            let b = ConfusionMatrix::from_counts(doubled).unwrap();
            prop_assert!((a.bca().unwrap() - b.bca().unwrap()).abs() < 1e-9);
        }

        #[test]
        fn balanced_rows_give_accuracy(k in 2usize..6, n in 1u64..40, seed in any::<u64>()) {
            // Spread n predictions per row with a cheap deterministic hash.
            let mut counts = vec![vec![0u64; k]; k];
            let mut s = seed;
            for row in counts.iter_mut() {
                for _ in 0..n {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    row[(s >> 33) as usize % k] += 1;
                }
            }
            let m = ConfusionMatrix::from_counts(counts).unwrap();
            prop_assert!((m.bca().unwrap() - m.accuracy().unwrap()).abs() < 1e-12);
        }
    }
}
