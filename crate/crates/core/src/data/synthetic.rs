use super::{FerRecord, Usage, IMAGE_PIXELS, IMAGE_SIDE, N_CLASSES};
use crate::tensor::SeededRng;

/// Stand-in data with FER2013's format. Class `k` sets the mean intensity
/// (`48 + 26k`); on top sits a sinusoidal grating of random orientation,
/// phase and period plus pixel noise. The class survives flips, rotations,
/// shifts, rescaling and erasing, so augmented training can still fit it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Images per class for Training, PublicTest, PrivateTest.
    pub per_class: [usize; 3],
    pub amplitude: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            per_class: [8, 8, 8],
            amplitude: 24.0,
            noise: 12.0,
        }
    }
}

/// Records ordered by split, then sample index, then class; ids are positions.
pub fn synthetic_records(spec: &SyntheticSpec, seed: u64) -> Vec<FerRecord> {
    let mut rng = SeededRng::with_stream(seed, 0x53594e);
    let mut out = Vec::new();
    for usage in Usage::ALL {
        for _ in 0..spec.per_class[usage.index()] {
            for label in 0..N_CLASSES {
                let pixels = grating(label, spec, &mut rng);
                out.push(FerRecord {
                    id: out.len(),
                    label,
                    pixels,
                    usage,
                });
            }
        }
    }
    out
}

fn grating(label: usize, spec: &SyntheticSpec, rng: &mut SeededRng) -> Vec<u8> {
    let level = 48.0 + 26.0 * label as f64;
    let theta = rng.uniform(0.0, std::f64::consts::PI);
    let (s, c) = theta.sin_cos();
    let phase = rng.uniform(0.0, std::f64::consts::TAU);
    let freq = std::f64::consts::TAU / rng.uniform(6.0, 12.0);
    let mut px = Vec::with_capacity(IMAGE_PIXELS);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let u = x as f64 * c + y as f64 * s;
            let v = level + spec.amplitude * (freq * u + phase).sin() + rng.normal(0.0, spec.noise);
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    px
}
