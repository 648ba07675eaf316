/// Single-channel image with `f32` intensities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// 2-D affine map `p ↦ A p + t` on (x, y) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        a: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a[0][0] * x + self.a[0][1] * y + self.t[0],
            self.a[1][0] * x + self.a[1][1] * y + self.t[1],
        )
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &Affine) -> Affine {
        let a = &self.a;
        let b = &other.a;
        Affine {
            a: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
            t: [
                a[0][0] * other.t[0] + a[0][1] * other.t[1] + self.t[0],
                a[1][0] * other.t[0] + a[1][1] * other.t[1] + self.t[1],
            ],
        }
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height, "pixel count");
        GrayImage {
            width,
            height,
            data: bytes.iter().map(|&b| f32::from(b)).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    fn at_or_zero(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            f64::from(self.get(x as usize, y as usize))
        }
    }

    /// Bilinear sample at continuous (x, y); pixels outside the image are 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as i64, y0 as i64);
        let mut v = self.at_or_zero(xi, yi) * (1.0 - fx) * (1.0 - fy);
        if fx != 0.0 {
            v += self.at_or_zero(xi + 1, yi) * fx * (1.0 - fy);
        }
        if fy != 0.0 {
            v += self.at_or_zero(xi, yi + 1) * (1.0 - fx) * fy;
            if fx != 0.0 {
                v += self.at_or_zero(xi + 1, yi + 1) * fx * fy;
            }
        }
        v as f32
    }

    /// Resample through `inverse`, which maps output coordinates to source
    /// coordinates.
    pub fn warp(&self, inverse: &Affine) -> GrayImage {
        let mut out = GrayImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (sx, sy) = inverse.apply(x as f64, y as f64);
                out.data[y * self.width + x] = self.sample_bilinear(sx, sy);
            }
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> GrayImage {
        assert!(
            top + height <= self.height && left + width <= self.width,
            "crop out of bounds"
        );
        let mut data = Vec::with_capacity(width * height);
        for y in top..top + height {
            data.extend_from_slice(&self.data[y * self.width + left..][..width]);
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }
}
