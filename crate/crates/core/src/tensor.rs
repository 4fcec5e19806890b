//! Dense row-major tensor of rank 1–4 with exact streaming statistics and
//! deterministic seeded random generation.
//!
//! Values are immutable after construction; every operation here is a pure
//! function, safe to call from any thread.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

/// Dense row-major array of f64 values, rank 1–4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, validating rank 1–4, all dims >= 1 and
    /// `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("rank must be 1..={MAX_RANK}"),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "all dimension sizes must be >= 1".into(),
            });
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("product of dims {} != data length {}", expect, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Rank-1 tensor from a non-empty vector.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn constant(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::constant(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one element
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides for this shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for d in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * self.shape[d + 1];
        }
        strides
    }

    /// Value at a multi-index. Panics on rank/bounds violations; intended for
    /// tests and small fixtures, not hot loops.
    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for (d, (&i, &s)) in index.iter().zip(self.strides().iter()).enumerate() {
            assert!(i < self.shape[d], "index {i} out of range in dim {d}");
            off += i * s;
        }
        self.data[off]
    }

    /// Same data reinterpreted under a new shape with equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|x| x * factor)
    }

    pub fn add_scalar(&self, offset: f64) -> Self {
        self.map(|x| x + offset)
    }

    /// Population mean/variance over the flattened data.
    pub fn stats(&self) -> Stats {
        let n = self.data.len();
        let mean = pairwise_sum(&self.data) / n as f64;
        let second = pairwise_sum_by(&self.data, |x| {
            let d = x - mean;
            d * d
        });
        Stats {
            mean,
            variance: second / n as f64,
            count: n,
        }
    }
}

/// Population statistics of a tensor: mean, variance (divide-by-n) and the
/// sample count they were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

impl Stats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Pairwise (cascade) summation: deterministic for a fixed element order and
/// far more permutation-stable than a left fold at large n.
pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    pairwise_sum_by(v, |x| x)
}

pub(crate) fn pairwise_sum_by(v: &[f64], f: impl Fn(f64) -> f64 + Copy) -> f64 {
    const BASE: usize = 64;
    if v.len() <= BASE {
        return v.iter().map(|&x| f(x)).sum();
    }
    let mid = v.len() / 2;
    pairwise_sum_by(&v[..mid], f) + pairwise_sum_by(&v[mid..], f)
}

/// Key for a reproducible random stream. Identical `(master_seed, stream_id)`
/// pairs yield identical sample sequences on any platform and under any
/// thread schedule; the generator is materialized from scratch at each use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeededRng {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeededRng {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            stream_id: 0,
        }
    }

    pub fn with_stream(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Derives an independent stream for a sub-task (trial index, op index).
    /// splitmix64-style mixing keeps unrelated indices decorrelated.
    pub fn substream(&self, index: u64) -> Self {
        let mut z = self
            .stream_id
            .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        Self {
            master_seed: self.master_seed,
            stream_id: z ^ (z >> 31),
        }
    }

    /// Materializes the generator for this key.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Concatenates two rank-1 tensors; `a`'s elements precede `b`'s.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            got: a.rank(),
        });
    }
    if b.rank() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            got: b.rank(),
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(data)
}

/// Contiguous sub-block: `offsets[d] .. offsets[d] + sizes[d]` in every
/// dimension. All sizes must be >= 1 and within bounds.
pub fn crop(t: &Tensor, offsets: &[usize], sizes: &[usize]) -> Result<Tensor> {
    let rank = t.rank();
    if offsets.len() != rank || sizes.len() != rank {
        return Err(Error::RankMismatch {
            expected: rank,
            got: offsets.len().max(sizes.len()),
        });
    }
    for d in 0..rank {
        if sizes[d] == 0 {
            return Err(Error::OutOfBounds(format!("crop size 0 in dim {d}")));
        }
        if offsets[d] + sizes[d] > t.shape()[d] {
            return Err(Error::OutOfBounds(format!(
                "crop {}..{} exceeds dim {d} of size {}",
                offsets[d],
                offsets[d] + sizes[d],
                t.shape()[d]
            )));
        }
    }
    let strides = t.strides();
    let out_len: usize = sizes.iter().product();
    let mut data = Vec::with_capacity(out_len);
    let mut idx = vec![0usize; rank];
    loop {
        let mut off = 0;
        for d in 0..rank {
            off += (offsets[d] + idx[d]) * strides[d];
        }
        data.push(t.data()[off]);
        // odometer increment over the output index space
        let mut d = rank;
        loop {
            if d == 0 {
                return Tensor::new(sizes.to_vec(), data);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < sizes[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Fisher-Yates permutation of a rank-1 tensor. The output is multiset-equal
/// to the input, so its statistics are unchanged.
pub fn shuffle(t: &Tensor, rng: &SeededRng) -> Result<Tensor> {
    if t.rank() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            got: t.rank(),
        });
    }
    let mut data = t.data().to_vec();
    data.shuffle(&mut rng.rng());
    Tensor::from_vec(data)
}

/// I.i.d. standard-normal tensor, deterministic per (master_seed, stream_id).
pub fn randn(shape: Vec<usize>, rng: &SeededRng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut gen = rng.rng();
    let data = (0..n)
        .map(|_| gen.sample(rand_distr::StandardNormal))
        .collect();
    Tensor::new(shape, data)
}

/// I.i.d. uniform samples on `[low, high)`.
pub fn rand_uniform(shape: Vec<usize>, low: f64, high: f64, rng: &SeededRng) -> Result<Tensor> {
    if !(high > low) {
        return Err(Error::InvalidArgument(format!(
            "uniform range [{low}, {high}) is empty"
        )));
    }
    let n: usize = shape.iter().product();
    let mut gen = rng.rng();
    let data = (0..n).map(|_| gen.random_range(low..high)).collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![1, 2, 3, 4, 5], vec![0.0; 120]).is_err());
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::from_vec(vec![]).is_err());
    }

    #[test]
    fn stats_constant_vector() {
        let t = Tensor::from_vec(vec![0.0; 4]).unwrap();
        let s = t.stats();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.count, 4);
    }

    #[test]
    fn stats_hand_computed() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = t.stats();
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.variance - 1.25).abs() < 1e-15);
    }

    #[test]
    fn stats_large_normal_converges() {
        // law-of-large-numbers oracle at several sizes
        for (n, tol) in [(10_000usize, 0.1), (100_000, 0.03), (1_000_000, 0.01)] {
            let t = randn(vec![n], &SeededRng::new(42)).unwrap();
            let s = t.stats();
            assert!(s.mean.abs() < tol, "n={n} mean={}", s.mean);
            assert!((s.variance - 1.0).abs() < tol, "n={n} var={}", s.variance);
        }
    }

    #[test]
    fn concat_duplication_preserves_stats() {
        let t = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let c = concat(&t, &t).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 1.0, 2.0]);
        let (a, b) = (t.stats(), c.stats());
        assert!((a.mean - b.mean).abs() < 1e-15);
        assert!((a.variance - b.variance).abs() < 1e-15);
    }

    #[test]
    fn concat_pooled_exact() {
        // two constructed vectors sharing mean 0 and variance 1 exactly
        let a = standardized(100, 11);
        let b = standardized(300, 12);
        let c = concat(&a, &b).unwrap();
        let s = c.stats();
        assert!(s.mean.abs() < 1e-12);
        assert!((s.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_zero_variance() {
        let a = Tensor::from_vec(vec![5.0]).unwrap();
        let b = Tensor::from_vec(vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(concat(&a, &b).unwrap().stats().variance, 0.0);
    }

    #[test]
    fn concat_rank_checked() {
        let a = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let m = a.reshape(vec![2, 1]).unwrap();
        assert!(matches!(
            concat(&a, &m),
            Err(Error::RankMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn crop_identity_and_errors() {
        let t = randn(vec![4, 6], &SeededRng::new(1)).unwrap();
        let full = crop(&t, &[0, 0], &[4, 6]).unwrap();
        assert_eq!(full, t);
        assert!(crop(&t, &[0, 0], &[4, 0]).is_err());
        assert!(crop(&t, &[2, 0], &[3, 6]).is_err());
    }

    #[test]
    fn crop_extracts_rows_and_cols() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = crop(&t, &[0, 1], &[2, 2]).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn crop_middle_variance_close() {
        // Var[Crop(v)] ~= Var[v]; Monte-Carlo average over seeds
        let mut ratio_sum = 0.0;
        let trials = 200;
        for seed in 0..trials {
            let v = randn(vec![4096], &SeededRng::new(seed)).unwrap();
            let c = crop(&v, &[1024], &[2048]).unwrap();
            ratio_sum += c.stats().variance / v.stats().variance;
        }
        let avg = ratio_sum / trials as f64;
        assert!((avg - 1.0).abs() < 0.05, "avg crop variance ratio {avg}");
    }

    #[test]
    fn shuffle_preserves_multiset_and_stats() {
        let t = randn(vec![10_000], &SeededRng::new(7)).unwrap();
        let s = shuffle(&t, &SeededRng::new(8)).unwrap();
        let mut a = t.data().to_vec();
        let mut b = s.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        let (ts, ss) = (t.stats(), s.stats());
        assert!((ts.mean - ss.mean).abs() < 1e-12);
        assert!((ts.variance - ss.variance).abs() < 1e-12);
    }

    #[test]
    fn shuffle_single_element() {
        let t = Tensor::from_vec(vec![3.25]).unwrap();
        assert_eq!(shuffle(&t, &SeededRng::new(0)).unwrap(), t);
    }

    #[test]
    fn randn_deterministic_per_key() {
        let k = SeededRng::with_stream(42, 3);
        let a = randn(vec![257], &k).unwrap();
        let b = randn(vec![257], &k).unwrap();
        assert_eq!(a, b);
        let c = randn(vec![257], &SeededRng::with_stream(42, 4)).unwrap();
        assert_ne!(a, c);
        let d = randn(vec![257], &SeededRng::with_stream(43, 3)).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn substream_distinct() {
        let base = SeededRng::new(0);
        let ids: Vec<u64> = (0..1000).map(|i| base.substream(i).stream_id).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len());
    }

    #[test]
    fn uniform_range_stats() {
        let t = rand_uniform(vec![100_000], 0.0, 1.0, &SeededRng::new(5)).unwrap();
        let s = t.stats();
        assert!((s.mean - 0.5).abs() < 0.01);
        assert!((s.variance - 1.0 / 12.0).abs() < 0.005);
        assert!(rand_uniform(vec![4], 1.0, 1.0, &SeededRng::new(0)).is_err());
    }

    // test-only helper: exact-ish standardization to mean 0, var 1
    fn standardized(n: usize, seed: u64) -> Tensor {
        let z = randn(vec![n], &SeededRng::new(seed)).unwrap();
        let s = z.stats();
        let inv = 1.0 / s.variance.sqrt();
        z.map(|x| (x - s.mean) * inv)
    }

    #[test]
    fn duplication_many_copies() {
        let t = randn(vec![97], &SeededRng::new(3)).unwrap();
        let base = t.stats();
        let mut acc = t.clone();
        for _ in 0..7 {
            acc = concat(&acc, &t).unwrap();
            let s = acc.stats();
            assert!((s.mean - base.mean).abs() < 1e-12);
            assert!((s.variance - base.variance).abs() < 1e-12);
        }
    }
}
