use serde::{Deserialize, Serialize};

use super::metrics::{f1_scores, ConfusionMatrix, F1Scores};
use crate::arch::{Mode, Model};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::softmax_cross_entropy;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub f1: F1Scores,
    /// Mean cross-entropy over all samples.
    pub loss: f64,
    pub samples: usize,
}

/// Row-wise argmax; the first maximum wins.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .to_f64_vec()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Eval-mode confusion matrix, F1 and loss over a batch stream.
pub fn evaluate<I>(model: &mut Model, batches: I) -> Result<MetricsReport>
where
    I: IntoIterator<Item = Result<Batch>>,
{
    let k = model.config().num_classes;
    let mut cm = ConfusionMatrix::new(k);
    let mut loss_sum = 0.0;
    for b in batches {
        let b = b?;
        let logits = model.forward(&b.x, Mode::Eval)?;
        let (loss, _) = softmax_cross_entropy(&logits, &b.labels)?;
        loss_sum += loss * b.labels.len() as f64;
        for (t, p) in b.labels.iter().zip(argmax_rows(&logits)) {
            cm.add(*t, p)?;
        }
    }
    let samples = cm.total() as usize;
    if samples == 0 {
        return Err(Error::Empty("evaluation over an empty test set".into()));
    }
    Ok(MetricsReport { f1: f1_scores(&cm)?, confusion: cm, loss: loss_sum / samples as f64, samples })
}
