use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{EncoderError, Vocab};
use crate::autodiff::{derive_seed, rng_from, uniform_init, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 2,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            seed: 0,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling. Noise is drawn from the unigram
/// distribution raised to 0.75. Pairs whose context is the center token
/// itself are skipped. Returns the |V| × dim input-embedding matrix.
pub fn skipgram_pretrain<S: AsRef<str>>(
    sequences: &[Vec<S>],
    vocab: &Vocab,
    cfg: &SkipGramConfig,
) -> Result<Tensor<f32>, EncoderError> {
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(EncoderError::Config(
            "skip-gram dim and window must be at least 1".into(),
        ));
    }
    let dim = cfg.dim;
    let mut input: Tensor<f32> = uniform_init(
        vec![vocab.len(), dim],
        0.5 / dim as f64,
        derive_seed(cfg.seed, "skipgram.in", 0),
    )?;
    let mut output = vec![0f32; vocab.len() * dim];
    let corpus: Vec<Vec<usize>> = sequences.iter().map(|s| vocab.ids(s)).collect();
    let mut counts = vec![0f64; vocab.len()];
    for id in corpus.iter().flatten() {
        counts[*id] += 1.0;
    }
    let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let Ok(noise) = WeightedIndex::new(&weights) else {
        return Ok(input);
    };
    let total_steps = (cfg.epochs * corpus.iter().map(Vec::len).sum::<usize>()).max(1) as f64;
    let mut rng = rng_from(derive_seed(cfg.seed, "skipgram.sample", 0));
    let mut step = 0usize;
    let mut grad_in = vec![0f32; dim];
    let emb = input.values_mut();
    for _ in 0..cfg.epochs {
        for seq in &corpus {
            for (pos, &center) in seq.iter().enumerate() {
                let lr = (cfg.lr * (1.0 - step as f64 / total_steps)).max(cfg.lr * 1e-4) as f32;
                step += 1;
                let reach = rng.gen_range(1..=cfg.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(seq.len() - 1);
                for (ctx_pos, &context) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos || context == center {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let targets = std::iter::once((context, 1f32)).chain(
                        (0..cfg.negatives)
                            .map(|_| noise.sample(&mut rng))
                            .filter(|&t| t != context)
                            .map(|t| (t, 0f32)),
                    );
                    let v_in = &emb[center * dim..(center + 1) * dim];
                    let mut updates = Vec::with_capacity(cfg.negatives + 1);
                    for (t, label) in targets {
                        let v_out = &output[t * dim..(t + 1) * dim];
                        let dot: f32 = v_in.iter().zip(v_out).map(|(a, b)| a * b).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for k in 0..dim {
                            grad_in[k] += g * v_out[k];
                        }
                        updates.push((t, g));
                    }
                    let v_in_copy: Vec<f32> = v_in.to_vec();
                    for (t, g) in updates {
                        for k in 0..dim {
                            output[t * dim + k] += g * v_in_copy[k];
                        }
                    }
                    for k in 0..dim {
                        emb[center * dim + k] += grad_in[k];
                    }
                }
            }
        }
    }
    Ok(input)
}
