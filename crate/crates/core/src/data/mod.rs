//! FER2013 ingestion, augmentation, ten-crop generation and batching.

mod augment;
mod batch;
mod csv;
mod image;
mod synthetic;

pub use augment::{
    augment, random_erase, ten_crop, AugmentConfig, EraseRect, TrainCrops, CROP_OFFSETS,
};
pub use batch::{make_batches, Batch, BatchMode, BatchStream};
pub use csv::{parse_csv, read_csv, write_csv, Dataset, SplitCounts, DOCUMENTED_TOTAL};
pub use image::{Affine, GrayImage};
pub use synthetic::{synthetic_records, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 48;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CROP_SIDE: usize = 40;
pub const N_CLASSES: usize = 7;

/// Dataset class order: index `i` of the CSV `emotion` column.
pub const CLASS_NAMES: [&str; N_CLASSES] = [
    "angry", "disgust", "fear", "happy", "sad", "surprise", "neutral",
];

/// The `Usage` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Usage {
    Training,
    PublicTest,
    PrivateTest,
}

impl Usage {
    pub const ALL: [Usage; 3] = [Usage::Training, Usage::PublicTest, Usage::PrivateTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Usage::Training => "Training",
            Usage::PublicTest => "PublicTest",
            Usage::PrivateTest => "PrivateTest",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Usage> {
        Usage::ALL.into_iter().find(|u| u.as_str() == s)
    }
}

/// One labelled 48x48 face.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FerRecord {
    /// Zero-based row index in the source file.
    pub id: usize,
    pub label: usize,
    pub pixels: Vec<u8>,
    pub usage: Usage,
}

impl FerRecord {
    pub fn new(id: usize, label: usize, pixels: Vec<u8>, usage: Usage) -> Result<Self> {
        if label >= N_CLASSES {
            return Err(Error::Label(format!(
                "label {label} is outside 0..{N_CLASSES}"
            )));
        }
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::shape(format!(
                "record has {} pixels, expected {IMAGE_PIXELS}",
                pixels.len()
            )));
        }
        Ok(FerRecord {
            id,
            label,
            pixels,
            usage,
        })
    }

    pub fn image(&self) -> GrayImage {
        GrayImage::from_bytes(IMAGE_SIDE, IMAGE_SIDE, &self.pixels)
    }
}

/// Which `Usage` value plays which role in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRoles {
    pub train: Usage,
    pub validation: Usage,
    pub test: Usage,
}

impl Default for SplitRoles {
    fn default() -> Self {
        SplitRoles {
            train: Usage::Training,
            validation: Usage::PublicTest,
            test: Usage::PrivateTest,
        }
    }
}

impl SplitRoles {
    pub fn validate(&self) -> Result<()> {
        if self.train == self.validation || self.train == self.test || self.validation == self.test
        {
            return Err(Error::Config(
                "train, validation and test splits must differ".into(),
            ));
        }
        Ok(())
    }
}

pub fn select(records: &[FerRecord], usage: Usage) -> Vec<FerRecord> {
    records
        .iter()
        .filter(|r| r.usage == usage)
        .cloned()
        .collect()
}

/// Relabel the validation split as training data; the test split is
/// untouched. Idempotent.
pub fn merge_train_val(records: &[FerRecord], roles: &SplitRoles) -> Vec<FerRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.usage == roles.validation {
                r.usage = roles.train;
            }
            r
        })
        .collect()
}

/// Keep the first `limit` records of every (split, class) pair, in file
/// order.
pub fn limit_per_class(records: &[FerRecord], limit: usize) -> Vec<FerRecord> {
    let mut seen = [[0usize; N_CLASSES]; 3];
    records
        .iter()
        .filter(|r| {
            let n = &mut seen[r.usage.index()][r.label];
            *n += 1;
            *n <= limit
        })
        .cloned()
        .collect()
}
