use crate::error::{Error, Result};
use crate::tensor::{Fill, Real, SeededRng, Tensor};

/// 2-D convolution (cross-correlation) over NCHW input, computed by
/// im2col followed by a matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Tensor<T>,
    /// `[out_ch]`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [oc, _, kh, kw] = weight.dims::<4>("conv weight")?;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!(
                "conv kernel {kh}x{kw} must have odd extents"
            )));
        }
        if bias.shape() != [oc] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match {oc} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv stride must be positive"));
        }
        Ok(ConvLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn he_normal(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let weight = Tensor::create(
            &[out_ch, in_ch, kernel, kernel],
            Fill::Normal {
                mean: 0.0,
                std: (2.0 / fan_in).sqrt(),
            },
            Some(rng),
        )?;
        Self::new(weight, Tensor::zeros(&[out_ch]), 1, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, Geometry)> {
        let [n, c, h, w] = x.dims::<4>("conv input")?;
        let [_, in_ch, kh, kw] = self.weight.dims::<4>("conv weight")?;
        if c != in_ch {
            return Err(Error::shape(format!(
                "conv expects {in_ch} input channels, got {c}"
            )));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(Error::shape(format!(
                "padded input {ph}x{pw} is smaller than kernel {kh}x{kw}"
            )));
        }
        let g = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            oh: (ph - kh) / self.stride + 1,
            ow: (pw - kw) / self.stride + 1,
            stride: self.stride,
            pad: self.padding,
        };
        Ok((n, g))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.geometry(x)?;
        let oc = self.out_channels();
        let ckk = g.c * g.kh * g.kw;
        let ohw = g.oh * g.ow;
        let in_len = g.c * g.h * g.w;
        let mut out = vec![T::zero(); n * oc * ohw];
        let mut cols = vec![T::zero(); ckk * ohw];
        for (img, dst) in x
            .data()
            .chunks_exact(in_len)
            .zip(out.chunks_exact_mut(oc * ohw))
        {
            im2col(img, &g, &mut cols);
            for (o, row) in dst.chunks_exact_mut(ohw).enumerate() {
                row.fill(self.bias.data()[o]);
            }
            T::gemm(
                oc,
                ckk,
                ohw,
                T::one(),
                self.weight.data(),
                ckk,
                1,
                &cols,
                ohw,
                1,
                T::one(),
                dst,
                ohw,
                1,
            );
        }
        Tensor::from_vec(&[n, oc, g.oh, g.ow], out)
    }

    pub fn backward(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (n, g) = self.geometry(x)?;
        let oc = self.out_channels();
        if upstream.shape() != [n, oc, g.oh, g.ow] {
            return Err(Error::shape(format!(
                "conv upstream {:?} does not match output [{n}, {oc}, {}, {}]",
                upstream.shape(),
                g.oh,
                g.ow
            )));
        }
        let ckk = g.c * g.kh * g.kw;
        let ohw = g.oh * g.ow;
        let in_len = g.c * g.h * g.w;
        let mut dx = vec![T::zero(); x.len()];
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = vec![T::zero(); oc];
        let mut cols = vec![T::zero(); ckk * ohw];
        let mut dcols = vec![T::zero(); ckk * ohw];

        for ((img, up), dimg) in x
            .data()
            .chunks_exact(in_len)
            .zip(upstream.data().chunks_exact(oc * ohw))
            .zip(dx.chunks_exact_mut(in_len))
        {
            for (o, row) in up.chunks_exact(ohw).enumerate() {
                db[o] = row.iter().fold(db[o], |a, &v| a + v);
            }
            im2col(img, &g, &mut cols);
            // dW += up · colsᵀ
            T::gemm(
                oc,
                ohw,
                ckk,
                T::one(),
                up,
                ohw,
                1,
                &cols,
                1,
                ohw,
                T::one(),
                &mut dw,
                ckk,
                1,
            );
            // dcols = Wᵀ · up
            T::gemm(
                ckk,
                oc,
                ohw,
                T::one(),
                self.weight.data(),
                1,
                ckk,
                up,
                ohw,
                1,
                T::zero(),
                &mut dcols,
                ohw,
                1,
            );
            col2im(&dcols, &g, dimg);
        }

        Ok(ConvGrads {
            input: Tensor::from_vec(x.shape(), dx)?,
            weight: Tensor::from_vec(self.weight.shape(), dw)?,
            bias: Tensor::from_vec(&[oc], db)?,
        })
    }
}

/// Output columns `ox` whose input column `ox·stride + kj − pad` lies inside
/// `0..w`, as a half-open range.
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj {
        (g.pad - kj).div_ceil(g.stride)
    } else {
        0
    };
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfold one CHW image into a `[c·kh·kw, oh·ow]` matrix.
fn im2col<T: Real>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (k, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[first + k * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the adjoint of [`im2col`].
fn col2im<T: Real>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let (lo, hi) = valid_cols(g, kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + line.len()].iter_mut().zip(line) {
                            *d = *d + v;
                        }
                    } else {
                        for (k, &v) in line.iter().enumerate() {
                            let d = &mut dst[first + k * g.stride];
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: &[f64], wshape: [usize; 4], b: &[f64], pad: usize) -> ConvLayer<f64> {
        ConvLayer::new(
            Tensor::from_f64(&wshape, w).unwrap(),
            Tensor::from_f64(&[wshape[0]], b).unwrap(),
            1,
            pad,
        )
        .unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let conv = layer(&[1.0], [1, 1, 1, 1], &[0.0], 0);
        let mut rng = SeededRng::new(3);
        let x = Tensor::<f64>::create(
            &[2, 1, 5, 4],
            Fill::Normal {
                mean: 0.0,
                std: 1.0,
            },
            Some(&mut rng),
        )
        .unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
        let grads = conv.backward(&x, &x).unwrap();
        assert_eq!(grads.input, x);
    }

    #[test]
    fn ones_kernel_on_one_hot() {
        // Every 3x3 window of a padded 3x3 image covers the centre pixel.
        let conv = layer(&[1.0; 9], [1, 1, 3, 3], &[0.0], 1);
        let mut img = vec![0.0; 9];
        img[4] = 1.0;
        let x = Tensor::from_f64(&[1, 1, 3, 3], &img).unwrap();
        assert_eq!(conv.forward(&x).unwrap().data(), &[1.0; 9]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let conv = layer(&[0.5; 18], [1, 2, 3, 3], &[0.1], 1);
        let x = Tensor::<f64>::create(&[1, 2, 4, 4], Fill::Constant(1.0), None).unwrap();
        let g = conv.backward(&x, &Tensor::zeros(&[1, 1, 4, 4])).unwrap();
        assert!(g
            .input
            .data()
            .iter()
            .chain(g.weight.data())
            .chain(g.bias.data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_channel_mismatch_and_even_kernels() {
        let conv = layer(&[1.0; 9], [1, 1, 3, 3], &[0.0], 1);
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(matches!(conv.forward(&x), Err(Error::Shape(_))));
        let even = ConvLayer::new(
            Tensor::<f64>::zeros(&[1, 1, 2, 2]),
            Tensor::zeros(&[1]),
            1,
            0,
        );
        assert!(matches!(even, Err(Error::Shape(_))));
    }

    #[test]
    fn bias_grad_sums_upstream() {
        let conv = layer(&[0.0; 9], [1, 1, 3, 3], &[0.0], 1);
        let x = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        let up =
            Tensor::from_f64(&[2, 1, 3, 3], &(0..18).map(f64::from).collect::<Vec<_>>()).unwrap();
        let g = conv.backward(&x, &up).unwrap();
        assert_eq!(g.bias.data(), &[153.0]);
    }
}
