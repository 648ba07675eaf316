use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct LossResult<T> {
    /// Mean negative log-likelihood over the batch.
    pub loss: f64,
    /// `(softmax - onehot) / n`, shaped like the logits.
    pub logit_grad: Tensor<T>,
}

/// Row-wise softmax of `[n, k]` logits, stabilized by max subtraction.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims::<2>("softmax logits")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(out)
}

pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<LossResult<T>> {
    let [n, k] = logits.dims::<2>("cross-entropy logits")?;
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Label(format!(
            "label {l} at row {i} is outside 0..{k}"
        )));
    }
    logits.check_finite("cross-entropy logits")?;

    let inv_n = T::of(1.0 / n as f64);
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
        let log_z = row.iter().fold(T::zero(), |a, &x| a + (x - max).exp()).ln();
        total += (log_z - (row[label] - max)).as_f64();
        for (j, v) in row.iter_mut().enumerate() {
            let p = (*v - max - log_z).exp();
            let target = if j == label { T::one() } else { T::zero() };
            *v = (p - target) * inv_n;
        }
    }
    Ok(LossResult {
        loss: total / n as f64,
        logit_grad: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln7() {
        let logits = Tensor::<f64>::from_f64(&[2, 7], &[0.3; 14]).unwrap();
        let r = softmax_cross_entropy(&logits, &[0, 6]).unwrap();
        assert!((r.loss - 7f64.ln()).abs() < 1e-12);
        assert!((r.loss - 1.945910).abs() < 1e-6);
    }

    #[test]
    fn saturated_correct_is_zero() {
        let mut v = vec![0.0; 7];
        v[3] = 1e6;
        let r =
            softmax_cross_entropy(&Tensor::<f64>::from_f64(&[1, 7], &v).unwrap(), &[3]).unwrap();
        assert!(r.loss.abs() < 1e-12);
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let logits = Tensor::<f64>::from_f64(
            &[2, 7],
            &[1., -2., 0.5, 3., 0., 0.2, -1., 4., 4., 1., 0., -3., 2., 2.],
        )
        .unwrap();
        let r = softmax_cross_entropy(&logits, &[1, 4]).unwrap();
        for row in r.logit_grad.data().chunks(7) {
            assert!(row.iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn out_of_range_label() {
        let logits = Tensor::<f64>::zeros(&[1, 7]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[7]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn shift_invariance() {
        let base = [0.1, 2.0, -1.0, 0.5, 0.0, 1.5, -0.2];
        let shifted: Vec<f64> = base.iter().map(|x| x + 100.0).collect();
        let a =
            softmax_cross_entropy(&Tensor::<f64>::from_f64(&[1, 7], &base).unwrap(), &[2]).unwrap();
        let b = softmax_cross_entropy(&Tensor::<f64>::from_f64(&[1, 7], &shifted).unwrap(), &[2])
            .unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-6);
    }
}
