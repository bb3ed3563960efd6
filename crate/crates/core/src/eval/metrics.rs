use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K x K counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> ConfusionMatrix {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_predictions(k: usize, truth: &[usize], pred: &[usize]) -> Result<ConfusionMatrix> {
        if truth.len() != pred.len() {
            return Err(Error::Invalid(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut cm = ConfusionMatrix::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<ConfusionMatrix> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Invalid("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { k, counts: rows.concat() })
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Invalid(format!("class out of range for {} classes: {truth}/{pred}", self.k)));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Invalid("merging confusion matrices of different size".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total().max(1) as f64
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let mut t = ConfusionMatrix::new(self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                t.counts[j * self.k + i] = self.get(i, j);
            }
        }
        t
    }

    /// Relabels class `i` as `perm[i]` on both axes.
    pub fn permute(&self, perm: &[usize]) -> ConfusionMatrix {
        let mut t = ConfusionMatrix::new(self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                t.counts[perm[i] * self.k + perm[j]] = self.get(i, j);
            }
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
}

/// Per-class F1 = 2PR/(P+R), 0 when P+R is 0; macro is the unweighted mean.
pub fn f1_scores(cm: &ConfusionMatrix) -> Result<F1Scores> {
    let k = cm.classes();
    if k < 2 {
        return Err(Error::Invalid(format!("F1 needs at least 2 classes, got {k}")));
    }
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let predicted: u64 = (0..k).map(|t| cm.get(t, c)).sum();
            let actual: u64 = (0..k).map(|p| cm.get(c, p)).sum();
            // 2PR/(P+R) simplifies to 2TP/(predicted + actual).
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (predicted + actual) as f64
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / k as f64;
    Ok(F1Scores { per_class, macro_f1 })
}
