//! Deterministic parameter initialization on top of xoshiro256++.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::tensor::Tensor;

/// Seeded generator used for every learnable parameter.
#[derive(Debug, Clone)]
pub struct ParamRng {
    inner: Xoshiro256PlusPlus,
}

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named component, so adding a component does
    /// not shift the draws of the others.
    pub fn for_component(seed: u64, name: &str) -> Self {
        // FNV-1a over the name, mixed into the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self::new(seed ^ h)
    }

    pub fn normal(&mut self, shape: &[usize], std: f32) -> Tensor {
        if std == 0.0 {
            return Tensor::zeros(shape);
        }
        let dist = Normal::new(0.0f32, std).expect("positive std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.inner))
    }

    pub fn uniform(&mut self, shape: &[usize], low: f32, high: f32) -> Tensor {
        Tensor::from_fn(shape, |_| self.inner.random_range(low..high))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut Xoshiro256PlusPlus {
        &mut self.inner
    }
}
