//! Seeded, resumable cycling through a data source.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Walks a source of `len` items in per-epoch shuffled order. The batch
/// drawn at any step is a pure function of `(seed, tag, step)`, so resuming
/// from a step counter reproduces the same sequence.
#[derive(Clone, Debug)]
pub struct Cycler {
    len: usize,
    batch: usize,
    seed: u64,
    tag: u64,
    cached: Option<(usize, Vec<usize>)>,
}

impl Cycler {
    pub fn new(len: usize, batch: usize, seed: u64, tag: u64) -> Self {
        Cycler { len, batch, seed, tag, cached: None }
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0 || self.batch == 0
    }

    pub fn steps_per_epoch(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.len.div_ceil(self.batch)
        }
    }

    fn order(&mut self, epoch: usize) -> &[usize] {
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.len).collect();
            let mix = self
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(self.tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
                .wrapping_add(epoch as u64);
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
            self.cached = Some((epoch, idx));
        }
        &self.cached.as_ref().expect("filled above").1
    }

    /// Item indices for `step`; empty when the source is empty.
    pub fn batch_at(&mut self, step: usize) -> Vec<usize> {
        if self.is_empty() {
            return Vec::new();
        }
        let start = step * self.batch;
        (start..start + self.batch)
            .map(|pos| {
                let (epoch, within) = (pos / self.len, pos % self.len);
                self.order(epoch)[within]
            })
            .collect()
    }
}
