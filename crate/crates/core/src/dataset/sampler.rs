use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PAIRED_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    /// Reference is another photo of the target identity.
    Paired,
    /// Reference is the target itself.
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub kind: ItemKind,
    /// Index into the paired pool or the unpaired pool, by `kind`.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDescriptor {
    pub items: Vec<BatchItem>,
}

impl BatchDescriptor {
    pub fn paired_count(&self) -> usize {
        self.items.iter().filter(|i| i.kind == ItemKind::Paired).count()
    }
}

/// Seeded stream of training batches. Each item is paired with probability
/// `paired_fraction`, independently.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    paired_len: usize,
    unpaired_len: usize,
    paired_fraction: f64,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(paired_len: usize, unpaired_len: usize, paired_fraction: f64, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&paired_fraction) {
            return Err(Error::param("paired_fraction", format!("must lie in [0, 1], got {paired_fraction}")));
        }
        if paired_fraction > 0.0 && paired_len == 0 {
            return Err(Error::EmptyInput("paired pool is empty"));
        }
        if paired_fraction < 1.0 && unpaired_len == 0 {
            return Err(Error::EmptyInput("unpaired pool is empty"));
        }
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), paired_len, unpaired_len, paired_fraction, batch_size })
    }

    pub fn next_batch(&mut self) -> BatchDescriptor {
        let items = (0..self.batch_size)
            .map(|_| {
                if self.rng.random_bool(self.paired_fraction) {
                    BatchItem { kind: ItemKind::Paired, index: self.rng.random_range(0..self.paired_len) }
                } else {
                    BatchItem { kind: ItemKind::Reconstruction, index: self.rng.random_range(0..self.unpaired_len) }
                }
            })
            .collect();
        BatchDescriptor { items }
    }
}

/// One batch drawn from fresh state seeded by `seed`.
pub fn sample_training_batch<P, U>(
    paired_pool: &[P],
    unpaired_pool: &[U],
    paired_fraction: f64,
    batch_size: usize,
    seed: u64,
) -> Result<BatchDescriptor> {
    Ok(BatchSampler::new(paired_pool.len(), unpaired_pool.len(), paired_fraction, batch_size, seed)?.next_batch())
}
