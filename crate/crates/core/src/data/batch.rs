use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::init::{rng_from_seed, SeededRng};

/// Endless stream of minibatch index lists. The index set is reshuffled at
/// the start of every epoch; the last batch of an epoch may be short.
#[derive(Clone, Debug)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    epoch: usize,
    rng: SeededRng,
}

impl BatchStream {
    pub fn new(m: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if m == 0 {
            return Err(Error::contract("cannot batch an empty dataset"));
        }
        let mut stream = BatchStream {
            order: (0..m).collect(),
            pos: 0,
            batch_size,
            epoch: 0,
            rng: rng_from_seed(seed),
        };
        stream.order.shuffle(&mut stream.rng);
        Ok(stream)
    }

    /// Zero-based epoch of the most recently returned batch.
    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_covers_everything() {
        let mut s = BatchStream::new(10, 10, 3).unwrap();
        let mut b = s.next().unwrap();
        b.sort_unstable();
        assert_eq!(b, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn epochs_are_permutations_with_short_tail() {
        let mut s = BatchStream::new(23, 5, 1).unwrap();
        for epoch in 0..3 {
            let batches: Vec<Vec<usize>> = (0..5).map(|_| s.next().unwrap()).collect();
            assert_eq!(batches[4].len(), 3);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
            assert_eq!(s.epoch(), epoch);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let a: Vec<_> = BatchStream::new(17, 4, 9).unwrap().take(20).collect();
        let b: Vec<_> = BatchStream::new(17, 4, 9).unwrap().take(20).collect();
        let c: Vec<_> = BatchStream::new(17, 4, 10).unwrap().take(20).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
