use serde::{Deserialize, Serialize};

use super::{Affine, GrayImage, CROP_SIDE, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::tensor::SeededRng;

/// Top-left (row, col) of the five base crops on a 48x48 image. Crops 5..10
/// are the horizontal mirrors of 0..5 in the same order.
pub const CROP_OFFSETS: [(usize, usize); 5] = [(0, 0), (0, 8), (8, 0), (8, 8), (4, 4)];

/// How many of the ten crops of a training image enter the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainCrops {
    #[default]
    Ten,
    RandomOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Scale factor is drawn from `1 ± rescale`.
    pub rescale: f64,
    /// Per-axis shift as a fraction of the image side.
    pub shift: f64,
    pub rotation_deg: f64,
    /// Probability of each geometric transform.
    pub transform_p: f64,
    pub erase_p: f64,
    pub erase_area: (f64, f64),
    pub erase_aspect: (f64, f64),
    pub crop_size: usize,
    pub train_crops: TrainCrops,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rescale: 0.2,
            shift: 0.2,
            rotation_deg: 10.0,
            transform_p: 0.5,
            erase_p: 0.5,
            erase_area: (0.02, 0.33),
            erase_aspect: (0.3, 3.3),
            crop_size: CROP_SIDE,
            train_crops: TrainCrops::Ten,
        }
    }
}

impl AugmentConfig {
    /// No geometric transforms and no erasing.
    pub fn disabled() -> Self {
        AugmentConfig {
            transform_p: 0.0,
            erase_p: 0.0,
            ..AugmentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("augment: {m}")));
        for (name, p) in [("transform_p", self.transform_p), ("erase_p", self.erase_p)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..1.0).contains(&self.rescale) || self.shift < 0.0 || self.rotation_deg < 0.0 {
            return bad("rescale must lie in [0,1); shift and rotation must be non-negative");
        }
        let (a0, a1) = self.erase_area;
        if !(0.0 < a0 && a0 <= a1 && a1 <= 1.0) {
            return bad("erase_area must satisfy 0 < lo <= hi <= 1");
        }
        let (r0, r1) = self.erase_aspect;
        if !(0.0 < r0 && r0 <= r1) {
            return bad("erase_aspect must satisfy 0 < lo <= hi");
        }
        if self.crop_size != CROP_SIDE {
            return bad(&format!("crop_size must be {CROP_SIDE} for 48x48 inputs"));
        }
        Ok(())
    }
}

fn about_center(img: &GrayImage, a: [[f64; 2]; 2]) -> Affine {
    let (cx, cy) = img.center();
    Affine {
        a,
        t: [
            cx - a[0][0] * cx - a[0][1] * cy,
            cy - a[1][0] * cx - a[1][1] * cy,
        ],
    }
}

/// Inverse map of a scaling by `s` about the image centre.
pub(crate) fn rescale_inverse(img: &GrayImage, s: f64) -> Affine {
    about_center(img, [[1.0 / s, 0.0], [0.0, 1.0 / s]])
}

/// Inverse map of a translation by (dx, dy) pixels.
pub(crate) fn translate_inverse(dx: f64, dy: f64) -> Affine {
    Affine {
        a: Affine::IDENTITY.a,
        t: [-dx, -dy],
    }
}

/// Inverse map of a rotation by `deg` degrees about the image centre.
pub(crate) fn rotate_inverse(img: &GrayImage, deg: f64) -> Affine {
    let (s, c) = deg.to_radians().sin_cos();
    about_center(img, [[c, s], [-s, c]])
}

/// Random rescale, shift and rotation, each applied with probability
/// `transform_p`, composed in that order and resampled once.
pub fn augment(image: &GrayImage, cfg: &AugmentConfig, rng: &mut SeededRng) -> GrayImage {
    // forward map is rotate ∘ shift ∘ scale, so the inverse runs scale⁻¹ last
    let mut inverse = Affine::IDENTITY;
    let mut touched = false;
    if rng.coin(cfg.transform_p) {
        let s = rng.uniform(1.0 - cfg.rescale, 1.0 + cfg.rescale);
        inverse = rescale_inverse(image, s).then_after(&inverse);
        touched = true;
    }
    if rng.coin(cfg.transform_p) {
        let (mx, my) = (
            cfg.shift * image.width as f64,
            cfg.shift * image.height as f64,
        );
        let (dx, dy) = (rng.uniform(-mx, mx), rng.uniform(-my, my));
        inverse = translate_inverse(dx, dy).then_after(&inverse);
        touched = true;
    }
    if rng.coin(cfg.transform_p) {
        let deg = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
        inverse = rotate_inverse(image, deg).then_after(&inverse);
        touched = true;
    }
    if touched {
        image.warp(&inverse)
    } else {
        image.clone()
    }
}

/// The five fixed crops and their mirrors, in `CROP_OFFSETS` order.
pub fn ten_crop(image: &GrayImage) -> Result<Vec<GrayImage>> {
    if image.width != IMAGE_SIDE || image.height != IMAGE_SIDE {
        return Err(Error::shape(format!(
            "ten_crop needs a {IMAGE_SIDE}x{IMAGE_SIDE} image, got {}x{}",
            image.height, image.width
        )));
    }
    let base: Vec<GrayImage> = CROP_OFFSETS
        .iter()
        .map(|&(r, c)| image.crop(r, c, CROP_SIDE, CROP_SIDE))
        .collect();
    let flipped: Vec<GrayImage> = base.iter().map(GrayImage::flip_horizontal).collect();
    Ok(base.into_iter().chain(flipped).collect())
}

/// Erased rectangle, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EraseRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// With probability `erase_p`, zero a random rectangle of the crop.
pub fn random_erase(
    crop: &mut GrayImage,
    cfg: &AugmentConfig,
    rng: &mut SeededRng,
) -> Option<EraseRect> {
    if !rng.coin(cfg.erase_p) {
        return None;
    }
    let (hh, ww) = (crop.height, crop.width);
    let area = rng.uniform(cfg.erase_area.0, cfg.erase_area.1) * (hh * ww) as f64;
    let aspect = rng.uniform(cfg.erase_aspect.0, cfg.erase_aspect.1);
    let height = ((area * aspect).sqrt().round() as usize).clamp(1, hh);
    let width = ((area / aspect).sqrt().round() as usize).clamp(1, ww);
    let top = rng.below(hh - height + 1);
    let left = rng.below(ww - width + 1);
    for y in top..top + height {
        crop.data[y * ww + left..y * ww + left + width].fill(0.0);
    }
    Some(EraseRect {
        top,
        left,
        height,
        width,
    })
}
