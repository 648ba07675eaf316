//! Vanilla-gradient saliency maps and their overlays.

mod colormap;
mod netpbm;

pub use colormap::JET;
pub use netpbm::{quantize, read_image, write_image, Raster};

use crate::data::{FerRecord, GrayImage, CROP_SIDE, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::model::VggModel;
use crate::nn::{softmax_cross_entropy, Mode};
use crate::tensor::{Real, Tensor};

/// Non-negative map, max-normalized to 1 unless identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// What is differentiated with respect to the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaliencyTarget {
    /// Cross-entropy loss against the label.
    #[default]
    Loss,
    /// The label's logit.
    Logit,
}

impl SaliencyMap {
    /// `|grad|`, divided by its maximum when that is positive.
    pub fn from_gradient(width: usize, height: usize, grad: &[f64]) -> Result<Self> {
        if grad.len() != width * height {
            return Err(Error::shape(format!(
                "{} gradient values for a {height}x{width} map",
                grad.len()
            )));
        }
        let mut values: Vec<f64> = grad.iter().map(|g| g.abs()).collect();
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
        })
    }

    /// Place this map at (top, left) on a zero canvas.
    pub fn pad(&self, width: usize, height: usize, top: usize, left: usize) -> SaliencyMap {
        assert!(
            top + self.height <= height && left + self.width <= width,
            "padding too small"
        );
        let mut values = vec![0.0; width * height];
        for y in 0..self.height {
            values[(top + y) * width + left..][..self.width]
                .copy_from_slice(&self.values[y * self.width..][..self.width]);
        }
        SaliencyMap {
            width,
            height,
            values,
        }
    }

    pub fn raster(&self) -> Raster {
        Raster::Gray {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
        }
    }

    pub fn argmax(&self) -> usize {
        crate::tensor::argmax_slice(&self.values)
    }
}

/// Saliency of `image` (`[1, 1, h, w]`, values in [0, 1]) for `label`, from
/// an eval-mode forward and backward pass.
pub fn saliency<T: Real>(
    model: &mut VggModel<T>,
    image: &Tensor<T>,
    label: usize,
    target: SaliencyTarget,
) -> Result<SaliencyMap> {
    let [n, c, h, w] = image.dims::<4>("saliency input")?;
    if n != 1 || c != 1 {
        return Err(Error::shape(format!(
            "saliency takes one gray image, got [{n}, {c}, {h}, {w}]"
        )));
    }
    let logits = model.forward(image, Mode::Eval, None)?;
    let k = logits.shape()[1];
    let upstream = match target {
        SaliencyTarget::Loss => softmax_cross_entropy(&logits, &[label])?.logit_grad,
        SaliencyTarget::Logit => {
            if label >= k {
                return Err(Error::Label(format!("label {label} is outside 0..{k}")));
            }
            let mut g = Tensor::zeros(&[1, k]);
            g.data_mut()[label] = T::one();
            g
        }
    };
    let grads = model.backward(&upstream)?;
    SaliencyMap::from_gradient(w, h, &grads.input.to_f64_vec())
}

/// The three pictures produced for one face.
#[derive(Debug, Clone)]
pub struct SaliencyTriptych {
    pub original: Raster,
    pub map: SaliencyMap,
    pub overlay: Raster,
}

/// Saliency on the centre 40x40 crop of a 48x48 record, padded back to
/// 48x48 for display next to the original.
pub fn record_saliency<T: Real>(
    model: &mut VggModel<T>,
    record: &FerRecord,
    target: SaliencyTarget,
    alpha: f64,
) -> Result<SaliencyTriptych> {
    let offset = (IMAGE_SIDE - CROP_SIDE) / 2;
    let full = normalized(&record.image());
    let crop = record.image().crop(offset, offset, CROP_SIDE, CROP_SIDE);
    let input = Tensor::from_vec(
        &[1, 1, CROP_SIDE, CROP_SIDE],
        normalized(&crop).iter().map(|&v| T::of(v)).collect(),
    )?;
    let map =
        saliency(model, &input, record.label, target)?.pad(IMAGE_SIDE, IMAGE_SIDE, offset, offset);
    let overlay = superimpose(&map, &full, alpha)?;
    Ok(SaliencyTriptych {
        original: Raster::Gray {
            width: IMAGE_SIDE,
            height: IMAGE_SIDE,
            values: full,
        },
        map,
        overlay,
    })
}

fn normalized(img: &GrayImage) -> Vec<f64> {
    img.data.iter().map(|&v| f64::from(v) / 255.0).collect()
}

/// LUT colour of a map value in [0, 1], as channel fractions.
pub fn colorize(v: f64) -> [f64; 3] {
    let i = (v.clamp(0.0, 1.0) * 255.0).round() as usize;
    JET[i].map(|b| f64::from(b) / 255.0)
}

/// `(1 - alpha) * gray + alpha * colorize(map)` per channel, clamped to
/// [0, 1]. `gray` holds values in [0, 1] with the map's shape.
pub fn superimpose(map: &SaliencyMap, gray: &[f64], alpha: f64) -> Result<Raster> {
    if gray.len() != map.values.len() {
        return Err(Error::shape(format!(
            "overlay of a {}-pixel map on a {}-pixel image",
            map.values.len(),
            gray.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "overlay alpha {alpha} is outside [0, 1]"
        )));
    }
    let values = map
        .values
        .iter()
        .zip(gray)
        .map(|(&m, &g)| colorize(m).map(|c| ((1.0 - alpha) * g + alpha * c).clamp(0.0, 1.0)))
        .collect();
    Ok(Raster::Color {
        width: map.width,
        height: map.height,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let m = SaliencyMap::from_gradient(2, 1, &[-4.0, 2.0]).unwrap();
        assert_eq!(m.values, vec![1.0, 0.5]);
        let z = SaliencyMap::from_gradient(2, 1, &[0.0, -0.0]).unwrap();
        assert_eq!(z.values, vec![0.0, 0.0]);
        assert!(SaliencyMap::from_gradient(2, 2, &[1.0]).is_err());
    }

    #[test]
    fn overlay_extremes() {
        let map = SaliencyMap {
            width: 2,
            height: 1,
            values: vec![0.0, 0.0],
        };
        let gray = [0.25, 0.75];
        let Raster::Color { values, .. } = superimpose(&map, &gray, 0.0).unwrap() else {
            panic!()
        };
        assert_eq!(values, vec![[0.25; 3], [0.75; 3]]);
        let Raster::Color { values, .. } = superimpose(&map, &gray, 1.0).unwrap() else {
            panic!()
        };
        assert_eq!(values[0], [0.0, 0.0, 128.0 / 255.0]);
        assert!(superimpose(&map, &[0.0], 0.5).is_err());
    }

    #[test]
    fn pad_places_map() {
        let m = SaliencyMap {
            width: 1,
            height: 1,
            values: vec![1.0],
        };
        let p = m.pad(3, 3, 1, 2);
        assert_eq!(p.argmax(), 5);
        assert_eq!(p.values.iter().sum::<f64>(), 1.0);
    }
}
