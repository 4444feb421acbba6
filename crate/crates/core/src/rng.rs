//! Deterministic random streams.
//!
//! A stream is identified by `(seed, stream_id)` and backed by ChaCha8, whose
//! native stream parameter gives independent sequences for the same seed.
//! Samples are always drawn in f64 and rounded, so a 32-bit and a 64-bit run
//! with the same stream see the same values up to rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Real, Vector};

/// Support of [`RngStream::randu`] draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UniformRange {
    /// U(-1, 1)
    #[default]
    Centered,
    /// U(0, 1)
    Unit,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    /// Stream whose id is a hash of `parts`, e.g. `(epoch, batch, element)`.
    pub fn derive(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_id(parts))
    }

    /// Child stream of this one; does not advance `self`.
    pub fn child(&self, parts: &[u64]) -> Self {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(self.stream_id);
        all.extend_from_slice(parts);
        Self::derive(self.seed, &all)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn normal<T: Real>(&mut self) -> T {
        let x: f64 = self.rng.sample(StandardNormal);
        T::lit(x)
    }

    pub fn uniform01(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// i.i.d. N(0, 1).
    pub fn randn<T: Real>(&mut self, n: usize) -> Vector<T> {
        Vector((0..n).map(|_| self.normal()).collect())
    }

    /// i.i.d. U(-1, 1).
    pub fn randu<T: Real>(&mut self, n: usize) -> Vector<T> {
        self.randu_in(n, UniformRange::Centered)
    }

    pub fn randu_in<T: Real>(&mut self, n: usize, range: UniformRange) -> Vector<T> {
        Vector(
            (0..n)
                .map(|_| {
                    let u = self.uniform01();
                    T::lit(match range {
                        UniformRange::Centered => 2.0 * u - 1.0,
                        UniformRange::Unit => u,
                    })
                })
                .collect(),
        )
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a tuple of indices into a stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_is_bit_identical() {
        let a = RngStream::new(7, 3).randn::<f32>(100);
        let b = RngStream::new(7, 3).randn::<f32>(100);
        assert_eq!(a, b);
        let c = RngStream::new(7, 4).randn::<f32>(100);
        assert_ne!(a, c);
    }

    #[test]
    fn precisions_share_samples() {
        let a = RngStream::new(1, 1).randn::<f32>(50);
        let b = RngStream::new(1, 1).randn::<f64>(50);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(*x, *y as f32);
        }
    }

    #[test]
    fn randn_moments() {
        let v = RngStream::new(11, 0).randn::<f64>(100_000);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "{mean}");
        assert!((0.97..=1.03).contains(&var), "{var}");
    }

    #[test]
    fn randu_bounds_and_mean() {
        let v = RngStream::new(12, 0).randu::<f64>(100_000);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() <= 0.01, "{mean}");
        assert!(v.iter().all(|&x| (-1.0..=1.0).contains(&x)));
        let u = RngStream::new(12, 0).randu_in::<f64>(1000, UniformRange::Unit);
        assert!(u.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn derived_streams_are_order_sensitive() {
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
        let a = RngStream::derive(5, &[0, 1, 2]).randn::<f32>(4);
        let b = RngStream::derive(5, &[0, 1, 2]).randn::<f32>(4);
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngStream::new(0, 0).permutation(1000);
        p.sort_unstable();
        assert_eq!(p, (0..1000).collect::<Vec<_>>());
    }
}
