use super::{ConfusionMatrix, CropAveraging};
use crate::data::{make_batches, AugmentConfig, BatchMode, FerRecord};
use crate::error::{Error, Result};
use crate::model::VggModel;
use crate::nn::softmax;
use crate::tensor::{argmax_slice, Real, Tensor};

const CROPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// One prediction per record, in record order.
    pub predictions: Vec<usize>,
}

/// Combine per-crop logits `[groups * crops, k]` into one score row per
/// group: the mean softmax probability, or the mean logit.
pub fn average_crops<T: Real>(
    logits: &Tensor<T>,
    crops: usize,
    averaging: CropAveraging,
) -> Result<Vec<Vec<f64>>> {
    let [n, k] = logits.dims::<2>("crop logits")?;
    if crops == 0 || n % crops != 0 {
        return Err(Error::shape(format!(
            "{n} crop rows do not split into groups of {crops}"
        )));
    }
    let scores = match averaging {
        CropAveraging::Probabilities => softmax(logits)?,
        CropAveraging::Logits => logits.clone(),
    };
    Ok(scores
        .data()
        .chunks_exact(crops * k)
        .map(|group| {
            let mut mean = vec![0.0; k];
            for row in group.chunks_exact(k) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= crops as f64);
            mean
        })
        .collect())
}

/// Ten-crop evaluation with an arbitrary crop scorer. Accuracy and confusion
/// counts are per record.
pub fn evaluate_with<T: Real>(
    records: &[FerRecord],
    batch_size: usize,
    averaging: CropAveraging,
    mut score: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<EvalResult> {
    let cfg = AugmentConfig::default();
    let mut confusion = ConfusionMatrix::default();
    let mut predictions = Vec::with_capacity(records.len());
    for batch in make_batches::<T>(records, &cfg, 0, 0, BatchMode::Eval, batch_size)? {
        let batch = batch?;
        let logits = score(&batch.images)?;
        let groups = average_crops(&logits, CROPS, averaging)?;
        for (g, mean) in groups.iter().enumerate() {
            let pred = argmax_slice(mean);
            confusion.record(batch.labels[g * CROPS], pred);
            predictions.push(pred);
        }
    }
    Ok(EvalResult {
        accuracy: confusion.accuracy(),
        confusion,
        predictions,
    })
}

pub fn evaluate<T: Real>(
    model: &VggModel<T>,
    records: &[FerRecord],
    batch_size: usize,
    averaging: CropAveraging,
) -> Result<EvalResult> {
    evaluate_with(records, batch_size, averaging, |x| model.infer(x))
}
