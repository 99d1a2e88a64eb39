use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{Float, Tensor};

/// History buffer of previously generated samples fed to a discriminator.
#[derive(Clone, Debug)]
pub struct ImagePool<T = f32> {
    capacity: usize,
    buffer: Vec<Tensor<T>>,
    rng: ChaCha8Rng,
}

impl<T: Float> ImagePool<T> {
    pub fn new(capacity: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ImagePool {
            capacity,
            buffer: Vec::with_capacity(capacity),
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn buffer(&self) -> &[Tensor<T>] {
        &self.buffer
    }

    /// While filling, stores and returns `fresh`. Once full, returns `fresh`
    /// with probability 0.5 and otherwise swaps it with a uniformly chosen
    /// stored sample, returning the evicted one.
    pub fn query(&mut self, fresh: Tensor<T>) -> Tensor<T> {
        if self.capacity == 0 {
            return fresh;
        }
        if self.buffer.len() < self.capacity {
            self.buffer.push(fresh.clone());
            return fresh;
        }
        if self.rng.random_bool(0.5) {
            fresh
        } else {
            let i = self.rng.random_range(0..self.buffer.len());
            std::mem::replace(&mut self.buffer[i], fresh)
        }
    }

    /// `(stream, word position)` of the generator, enough to resume it.
    pub fn rng_position(&self) -> (u64, u128) {
        (self.rng.get_stream(), self.rng.get_word_pos())
    }

    pub(crate) fn restore(capacity: usize, seed: u64, position: (u64, u128), buffer: Vec<Tensor<T>>) -> Self {
        let mut pool = ImagePool::new(capacity, seed, position.0);
        pool.rng.set_word_pos(position.1);
        pool.buffer = buffer;
        pool
    }
}
