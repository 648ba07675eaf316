use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Output of a 2x2 / stride-2 max pool, with the flat input index that won
/// each window.
#[derive(Debug, Clone)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub indices: Vec<usize>,
}

/// 2x2 max pool with stride 2. Output extents are `floor(input / 2)`; ties
/// resolve to the first position of the window in row-major order.
pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<PoolOutput<T>> {
    let [n, c, h, w] = x.dims::<4>("max pool input")?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "max pool needs spatial extents >= 2, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut indices = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                out.push(xd[best]);
                indices.push(best);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::from_vec(&[n, c, oh, ow], out)?,
        indices,
    })
}

/// Route each upstream value to the input position that won its window.
pub fn maxpool_backward<T: Real>(
    indices: &[usize],
    upstream: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if indices.len() != upstream.len() {
        return Err(Error::shape(format!(
            "max pool upstream has {} values for {} cached windows",
            upstream.len(),
            indices.len()
        )));
    }
    let mut grad = Tensor::create(input_shape, crate::tensor::Fill::Constant(0.0), None)?;
    let gd = grad.data_mut();
    for (&idx, &u) in indices.iter().zip(upstream.data()) {
        gd[idx] = gd[idx] + u;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let p = maxpool_forward(&x).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        let g = maxpool_backward(
            &p.indices,
            &Tensor::<f64>::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap(),
            x.shape(),
        )
        .unwrap();
        assert_eq!(g.data(), &[0., 0., 0., 1.]);
    }

    #[test]
    fn ties_route_to_window_origin() {
        let x =
            Tensor::<f64>::create(&[1, 1, 4, 4], crate::tensor::Fill::Constant(2.0), None).unwrap();
        let p = maxpool_forward(&x).unwrap();
        let up =
            Tensor::<f64>::create(&[1, 1, 2, 2], crate::tensor::Fill::Constant(1.0), None).unwrap();
        let g = maxpool_backward(&p.indices, &up, x.shape()).unwrap();
        let expected = [
            1., 0., 1., 0., //
            0., 0., 0., 0., //
            1., 0., 1., 0., //
            0., 0., 0., 0.,
        ];
        assert_eq!(g.data(), &expected);
    }

    #[test]
    fn odd_extents_floor() {
        let x = Tensor::<f64>::zeros(&[1, 2, 5, 5]);
        assert_eq!(maxpool_forward(&x).unwrap().output.shape(), &[1, 2, 2, 2]);
    }
}
