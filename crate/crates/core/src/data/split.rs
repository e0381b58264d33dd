use rand::seq::SliceRandom;

use super::corpus::ReviewSample;
use super::DataError;
use crate::autodiff::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            stratified: true,
        }
    }
}

fn take_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Deterministic train/test partition. Both sides keep corpus order.
pub fn split(
    samples: &[ReviewSample],
    spec: &SplitSpec,
) -> Result<(Vec<ReviewSample>, Vec<ReviewSample>), DataError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DataError::Spec(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut in_train = vec![false; samples.len()];
    let groups: Vec<Vec<usize>> = if spec.stratified {
        (0..2u8)
            .map(|label| {
                (0..samples.len())
                    .filter(|&i| samples[i].label == label)
                    .collect()
            })
            .collect()
    } else {
        vec![(0..samples.len()).collect()]
    };
    for (g, mut idx) in groups.into_iter().enumerate() {
        idx.shuffle(&mut rng_from(derive_seed(spec.seed, "split", g as u64)));
        for &i in &idx[..take_count(idx.len(), spec.train_fraction)] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) =
        samples.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(s, _)| s).collect(),
        test.into_iter().map(|(s, _)| s).collect(),
    ))
}

/// Shuffled index chunks of size `n`; the last chunk may be shorter.
pub fn batch_indices(len: usize, n: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if n == 0 {
        return Err(DataError::Spec("batch size must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng_from(derive_seed(seed, "batches", 0)));
    Ok(idx.chunks(n).map(<[usize]>::to_vec).collect())
}

pub fn batches<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<Vec<T>>, DataError> {
    Ok(batch_indices(items.len(), n, seed)?
        .into_iter()
        .map(|b| b.into_iter().map(|i| items[i].clone()).collect())
        .collect())
}
