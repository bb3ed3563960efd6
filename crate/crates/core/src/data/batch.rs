use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentPolicy};
use super::image::resize_bilinear;
use super::mix_seed;
use super::source::ImageSource;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images stacked as `(N, 3, H, W)` f32 with their labels and source indices.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Iterates fixed-order batches over a subset of a source.
///
/// The order is a seeded permutation (or the given order when unshuffled);
/// the last partial batch is kept. Each sample's augmentation stream is
/// seeded from `(aug_seed, sample index)`, so results do not depend on batch
/// composition.
pub struct BatchIterator<'a> {
    source: &'a dyn ImageSource,
    order: Vec<usize>,
    batch_size: usize,
    size: (usize, usize),
    policy: Option<&'a AugmentPolicy>,
    aug_seed: u64,
    pos: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(
        source: &'a dyn ImageSource,
        indices: &[usize],
        batch_size: usize,
        size: (usize, usize),
        shuffle_seed: Option<u64>,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source.len()) {
            return Err(Error::Invalid(format!("sample {bad} out of range for {} samples", source.len())));
        }
        let mut order = indices.to_vec();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(BatchIterator { source, order, batch_size, size, policy: None, aug_seed: 0, pos: 0 })
    }

    pub fn with_augmentation(mut self, policy: &'a AugmentPolicy, seed: u64) -> Self {
        self.policy = Some(policy);
        self.aug_seed = seed;
        self
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn sample(&self, i: usize) -> Result<Tensor> {
        let mut img = self.source.load(i)?;
        if let Some(p) = self.policy {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.aug_seed, i as u64));
            img = augment(&img, p, &mut rng)?;
        }
        resize_bilinear(&img, self.size.0, self.size.1)
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let (h, w) = self.size;
        let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
        for &i in &indices {
            match self.sample(i) {
                Ok(img) => data.extend(img.to_f32_vec()),
                Err(e) => return Some(Err(e)),
            }
        }
        let labels = indices.iter().map(|&i| self.source.label(i)).collect();
        Some(Tensor::from_vec(&[indices.len(), 3, h, w], data).map(|x| Batch { x, labels, indices }))
    }
}
