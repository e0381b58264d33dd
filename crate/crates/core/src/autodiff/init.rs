//! Seeded randomness: parameter initialization and dropout masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};
use super::AutodiffError;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for a named draw: mixes the run seed, the name bytes (FNV-1a)
/// and a counter.
pub fn derive_seed(seed: u64, name: &str, counter: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(counter))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn uniform_values<T: Real>(
    n: usize,
    bound: f64,
    seed: u64,
) -> Result<Vec<T>, AutodiffError> {
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(AutodiffError::InvalidArgument(format!(
            "uniform bound must be positive, got {bound}"
        )));
    }
    let mut rng = rng_from(seed);
    Ok((0..n)
        .map(|_| T::lit(rng.gen_range(-bound..=bound)))
        .collect())
}

/// I.i.d. `U[-bound, bound]` tensor, deterministic in `seed`.
pub fn uniform_init<T: Real>(
    shape: Vec<usize>,
    bound: f64,
    seed: u64,
) -> Result<Tensor<T>, AutodiffError> {
    let n = shape.iter().product();
    Tensor::new(shape, uniform_values(n, bound, seed)?)
}

/// Explicit keep/drop pattern for one dropout application.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    shape: Vec<usize>,
    keep: Vec<bool>,
    p: f64,
}

impl DropoutMask {
    /// Draws each entry independently: dropped with probability `p`.
    pub fn sample(shape: Vec<usize>, p: f64, seed: u64) -> Result<Self, AutodiffError> {
        check_p(p)?;
        let n = shape.iter().product();
        let mut rng = rng_from(seed);
        let keep = (0..n).map(|_| rng.gen::<f64>() >= p).collect();
        Ok(Self { shape, keep, p })
    }

    pub fn from_keep(shape: Vec<usize>, keep: Vec<bool>, p: f64) -> Result<Self, AutodiffError> {
        check_p(p)?;
        if shape.iter().product::<usize>() != keep.len() {
            return Err(AutodiffError::Shape {
                op: "dropout_mask",
                detail: format!("{} flags for shape {shape:?}", keep.len()),
            });
        }
        Ok(Self { shape, keep, p })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.keep.iter().filter(|k| !**k).count() as f64 / self.keep.len().max(1) as f64
    }
}

fn check_p(p: f64) -> Result<(), AutodiffError> {
    if !(0.0..1.0).contains(&p) {
        return Err(AutodiffError::InvalidArgument(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Source of per-application mask seeds for one encoder pass.
///
/// The n-th mask drawn under mask seed `z` is always the same, so replaying a
/// pass with the same `z` reproduces it exactly.
#[derive(Debug, Clone)]
pub struct MaskStream {
    seed: u64,
    counter: u64,
}

impl MaskStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn next_mask(&mut self, shape: Vec<usize>, p: f64) -> Result<DropoutMask, AutodiffError> {
        let s = derive_seed(self.seed, "dropout", self.counter);
        self.counter += 1;
        DropoutMask::sample(shape, p, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn uniform_is_bounded_deterministic_and_centered() {
        let a: Tensor<f64> = uniform_init(vec![100_000], 0.5, 7).unwrap();
        let b: Tensor<f64> = uniform_init(vec![100_000], 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (-0.5..=0.5).contains(v)));
        let mean = a.values().iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.01 * 0.5, "mean {mean}");
        assert!(uniform_init::<f32>(vec![3], 0.0, 1).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_name_and_counter() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_eq!(derive_seed(9, "x", 3), derive_seed(9, "x", 3));
    }

    #[test]
    fn dropout_zero_p_is_identity() {
        let mut g = Graph::<f64>::checked();
        let x = g.input(Tensor::row(vec![1.0, -2.0, 3.0])).unwrap();
        let m = DropoutMask::sample(vec![1, 3], 0.0, 3).unwrap();
        let y = g.dropout(x, &m).unwrap();
        assert_eq!(g.value(y).values(), g.value(x).values());
    }

    #[test]
    fn all_drop_mask_zeroes_output_and_gradient() {
        let mut g = Graph::<f64>::checked();
        let x = g.input(Tensor::row(vec![1.0, -2.0, 3.0])).unwrap();
        let m = DropoutMask::from_keep(vec![1, 3], vec![false; 3], 0.1).unwrap();
        let y = g.dropout(x, &m).unwrap();
        assert!(g.value(y).values().iter().all(|&v| v == 0.0));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x, &g).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_rejects_p_of_one() {
        assert!(DropoutMask::sample(vec![2], 1.0, 0).is_err());
    }

    #[test]
    fn dropout_is_unbiased_in_expectation() {
        let x = [0.7, -1.3, 2.0, 0.05];
        let draws = 10_000;
        let mut acc = [0.0f64; 4];
        let mut stream = MaskStream::new(11);
        for _ in 0..draws {
            let mut g = Graph::<f64>::new();
            let v = g.input(Tensor::row(x.to_vec())).unwrap();
            let m = stream.next_mask(vec![1, 4], 0.1).unwrap();
            let y = g.dropout(v, &m).unwrap();
            for (a, &o) in acc.iter_mut().zip(g.value(y).values()) {
                *a += o;
            }
        }
        for (a, &xv) in acc.iter().zip(&x) {
            let mean = a / draws as f64;
            assert!((mean - xv).abs() <= 0.02 * xv.abs(), "{mean} vs {xv}");
        }
    }

    #[test]
    fn same_mask_seed_replays() {
        let mut a = MaskStream::new(5);
        let mut b = MaskStream::new(5);
        for _ in 0..3 {
            assert_eq!(
                a.next_mask(vec![4, 4], 0.3).unwrap(),
                b.next_mask(vec![4, 4], 0.3).unwrap()
            );
        }
    }
}
