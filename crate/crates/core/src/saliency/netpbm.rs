use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An image ready for netpbm output, channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum Raster {
    Gray {
        width: usize,
        height: usize,
        values: Vec<f64>,
    },
    Color {
        width: usize,
        height: usize,
        values: Vec<[f64; 3]>,
    },
}

/// `floor(v * 255 + 0.5)`, clamped to a byte.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl Raster {
    pub fn width(&self) -> usize {
        match self {
            Raster::Gray { width, .. } | Raster::Color { width, .. } => *width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Raster::Gray { height, .. } | Raster::Color { height, .. } => *height,
        }
    }

    /// Binary P5 (gray) or P6 (color), maxval 255.
    pub fn encode(&self) -> Vec<u8> {
        let (magic, body): (&str, Vec<u8>) = match self {
            Raster::Gray { values, .. } => ("P5", values.iter().map(|&v| quantize(v)).collect()),
            Raster::Color { values, .. } => {
                ("P6", values.iter().flat_map(|c| c.map(quantize)).collect())
            }
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        out.extend(body);
        out
    }

    /// Parse a binary P5/P6 file with maxval 255. Values come back as
    /// `byte / 255`.
    pub fn decode(bytes: &[u8]) -> Result<Raster> {
        let bad = |m: &str| Error::Data(format!("netpbm: {m}"));
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        let num = |t: String| {
            t.parse::<usize>()
                .map_err(|_| bad(&format!("bad header number {t:?}")))
        };
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        // exactly one whitespace byte separates the header from the raster
        let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(bad(&format!("unsupported magic {m:?}"))),
        };
        if body.len() != width * height * channels {
            return Err(bad(&format!(
                "raster has {} bytes, expected {}",
                body.len(),
                width * height * channels
            )));
        }
        let f = |b: u8| f64::from(b) / 255.0;
        Ok(if channels == 1 {
            Raster::Gray {
                width,
                height,
                values: body.iter().map(|&b| f(b)).collect(),
            }
        } else {
            Raster::Color {
                width,
                height,
                values: body
                    .chunks_exact(3)
                    .map(|c| [f(c[0]), f(c[1]), f(c[2])])
                    .collect(),
            }
        })
    }
}

pub fn write_image(raster: &Raster, path: &Path) -> Result<()> {
    fs::write(path, raster.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Raster::decode(&bytes)
}
