use std::marker::PhantomData;

use super::{
    augment, random_erase, ten_crop, AugmentConfig, FerRecord, GrayImage, TrainCrops, CROP_SIDE,
};
use crate::error::{Error, Result};
use crate::tensor::{Real, SeededRng, Tensor};

const TAG_SHUFFLE: u64 = 0x5348;
const TAG_AUGMENT: u64 = 0x4147;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Train,
    Eval,
}

/// A block of crops with labels and provenance.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    /// `[n, 1, 40, 40]`, values in [0, 1].
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub record_ids: Vec<usize>,
    pub crop_ids: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Lazily built batches for one epoch. Every record draws its randomness from
/// its own (seed, epoch, record id) substream, so batch contents do not depend
/// on the order in which records are processed.
pub struct BatchStream<'a, T: Real> {
    records: &'a [FerRecord],
    order: Vec<usize>,
    pos: usize,
    cfg: AugmentConfig,
    seed: u64,
    epoch: u64,
    mode: BatchMode,
    batch_size: usize,
    _real: PhantomData<T>,
}

/// Batches for one epoch. `batch_size` counts source images; with ten crops
/// each the tensor holds `10 * batch_size` samples.
pub fn make_batches<'a, T: Real>(
    records: &'a [FerRecord],
    cfg: &AugmentConfig,
    seed: u64,
    epoch: u64,
    mode: BatchMode,
    batch_size: usize,
) -> Result<BatchStream<'a, T>> {
    if records.is_empty() {
        return Err(Error::Data("no records to batch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    cfg.validate()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    if mode == BatchMode::Train {
        SeededRng::substream(seed, TAG_SHUFFLE, epoch, 0).shuffle(&mut order);
    }
    Ok(BatchStream {
        records,
        order,
        pos: 0,
        cfg: cfg.clone(),
        seed,
        epoch,
        mode,
        batch_size,
        _real: PhantomData,
    })
}

impl<T: Real> BatchStream<'_, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Record indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn crops_for(&self, record: &FerRecord) -> Result<Vec<(usize, GrayImage)>> {
        let image = record.image();
        match self.mode {
            BatchMode::Eval => Ok(ten_crop(&image)?.into_iter().enumerate().collect()),
            BatchMode::Train => {
                let mut rng =
                    SeededRng::substream(self.seed, TAG_AUGMENT, self.epoch, record.id as u64);
                let warped = augment(&image, &self.cfg, &mut rng);
                let mut crops: Vec<(usize, GrayImage)> =
                    ten_crop(&warped)?.into_iter().enumerate().collect();
                if self.cfg.train_crops == TrainCrops::RandomOne {
                    let keep = rng.below(crops.len());
                    crops = vec![crops.swap_remove(keep)];
                }
                for (_, crop) in crops.iter_mut() {
                    random_erase(crop, &self.cfg, &mut rng);
                }
                Ok(crops)
            }
        }
    }

    fn build(&self, ids: &[usize]) -> Result<Batch<T>> {
        let scale = 1.0 / 255.0;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut record_ids = Vec::new();
        let mut crop_ids = Vec::new();
        for &i in ids {
            let record = &self.records[i];
            for (crop_id, crop) in self.crops_for(record)? {
                data.extend(
                    crop.data
                        .iter()
                        .map(|&v| T::of((f64::from(v) * scale).clamp(0.0, 1.0))),
                );
                labels.push(record.label);
                record_ids.push(record.id);
                crop_ids.push(crop_id);
            }
        }
        let images = Tensor::from_vec(&[labels.len(), 1, CROP_SIDE, CROP_SIDE], data)?;
        Ok(Batch {
            images,
            labels,
            record_ids,
            crop_ids,
        })
    }
}

impl<T: Real> Iterator for BatchStream<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let ids = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.build(&ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_records, SyntheticSpec, Usage};

    fn records(n: usize) -> Vec<FerRecord> {
        let spec = SyntheticSpec {
            per_class: [n.div_ceil(7), 0, 0],
            ..SyntheticSpec::default()
        };
        let mut r = synthetic_records(&spec, 5);
        r.truncate(n);
        r
    }

    #[test]
    fn train_batch_holds_ten_crops_per_image() {
        let recs = records(20);
        let mut stream =
            make_batches::<f32>(&recs, &AugmentConfig::default(), 1, 0, BatchMode::Train, 8)
                .unwrap();
        assert_eq!(stream.num_batches(), 3);
        let b = stream.next().unwrap().unwrap();
        assert_eq!(b.images.shape(), &[80, 1, 40, 40]);
        assert!(b.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let last = stream.last().unwrap().unwrap();
        assert_eq!(last.len(), 40);
    }

    #[test]
    fn eval_groups_ten_crops_per_record() {
        let recs = records(3);
        let batches: Vec<_> =
            make_batches::<f64>(&recs, &AugmentConfig::default(), 1, 0, BatchMode::Eval, 8)
                .unwrap()
                .collect::<Result<_>>()
                .unwrap();
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.len(), 30);
        for (g, r) in recs.iter().enumerate() {
            for c in 0..10 {
                assert_eq!(b.record_ids[g * 10 + c], r.id);
                assert_eq!(b.crop_ids[g * 10 + c], c);
                assert_eq!(b.labels[g * 10 + c], r.label);
            }
        }
    }

    #[test]
    fn same_seed_same_epoch_is_identical() {
        let recs = records(12);
        let cfg = AugmentConfig::default();
        let run = |seed, epoch| -> Vec<f32> {
            make_batches::<f32>(&recs, &cfg, seed, epoch, BatchMode::Train, 5)
                .unwrap()
                .flat_map(|b| b.unwrap().images.into_data())
                .collect()
        };
        assert_eq!(run(9, 2), run(9, 2));
        assert_ne!(run(9, 2), run(9, 3));
        assert_ne!(run(9, 2), run(10, 2));
    }

    #[test]
    fn random_one_crop() {
        let recs = records(4);
        let cfg = AugmentConfig {
            train_crops: TrainCrops::RandomOne,
            ..AugmentConfig::default()
        };
        let b = make_batches::<f32>(&recs, &cfg, 1, 0, BatchMode::Train, 4)
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(b.images.shape()[0], 4);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            make_batches::<f32>(&[], &AugmentConfig::default(), 1, 0, BatchMode::Train, 4),
            Err(Error::Data(_))
        ));
        let recs = records(1);
        assert_eq!(recs[0].usage, Usage::Training);
    }
}
