//! Dropout-twice contrastive pretraining with in-batch negatives.

use rand::Rng;

use crate::autodiff::{
    derive_seed, rng_from, AdamConfig, AdamState, AutodiffError, Graph, ParameterStore, Real,
    Tensor, Var,
};
use crate::data::batch_indices;
use crate::encoders::{CodeEncoder, CodeInput, CodeVars, EncoderError, TextEncoder, TextVars};

/// Mean over i of −log softmax_j(cos(h_i, h⁺_j) / τ) at j = i.
pub fn info_nce_loss<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    h_plus: Var,
    tau: f64,
) -> Result<Var, AutodiffError> {
    if !(tau > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let (n, d) = g.value(h).dims2();
    if g.value(h_plus).dims2() != (n, d) {
        return Err(AutodiffError::Shape {
            op: "info_nce_loss",
            detail: format!("{:?} vs {:?}", g.value(h).shape(), g.value(h_plus).shape()),
        });
    }
    let a = g.normalize_rows(h)?;
    let b = g.normalize_rows(h_plus)?;
    let bt = g.transpose(b)?;
    let sim = g.matmul(a, bt)?;
    let logits = g.scale(sim, T::lit(1.0 / tau))?;
    let log_p = g.log_softmax(logits, 1)?;
    let eye = g.input(Tensor::identity(n))?;
    let diag = g.mul(log_p, eye)?;
    let total = g.sum(diag)?;
    g.scale(total, T::lit(-1.0 / n as f64))
}

/// An encoder that can be pretrained contrastively.
pub trait ContrastiveEncoder {
    type Input;
    type Vars;

    fn bind_vars<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
    ) -> Result<Self::Vars, EncoderError>;

    /// 1 × width row for one input.
    fn encode_row<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &Self::Vars,
        input: &Self::Input,
        mask_seed: Option<u64>,
    ) -> Result<Var, EncoderError>;
}

impl ContrastiveEncoder for CodeEncoder {
    type Input = CodeInput;
    type Vars = CodeVars;

    fn bind_vars<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
    ) -> Result<CodeVars, EncoderError> {
        self.bind(g, store)
    }

    fn encode_row<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &CodeVars,
        input: &CodeInput,
        mask_seed: Option<u64>,
    ) -> Result<Var, EncoderError> {
        Ok(self.encode(g, vars, input, mask_seed)?.vector)
    }
}

impl ContrastiveEncoder for TextEncoder {
    type Input = Vec<usize>;
    type Vars = TextVars;

    fn bind_vars<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
    ) -> Result<TextVars, EncoderError> {
        self.bind(g, store)
    }

    fn encode_row<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &TextVars,
        input: &Vec<usize>,
        mask_seed: Option<u64>,
    ) -> Result<Var, EncoderError> {
        self.encode(g, vars, input, mask_seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            batch_size: 64,
            epochs: 10,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if !(self.tau > 0.0) {
            return Err(EncoderError::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.batch_size == 0 {
            return Err(EncoderError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(EncoderError::Config(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Two distinct mask seeds for one batch.
pub fn mask_pair(seed: u64, epoch: usize, batch: usize) -> (u64, u64) {
    let mut rng = rng_from(derive_seed(
        seed,
        &format!("contrastive.masks.{epoch}"),
        batch as u64,
    ));
    let z: u64 = rng.gen();
    let mut z2: u64 = rng.gen();
    while z2 == z {
        z2 = rng.gen();
    }
    (z, z2)
}

/// Per-sample mask seed: a batch-level seed specialised to one input.
pub fn sample_mask(batch_seed: u64, sample: usize) -> u64 {
    derive_seed(batch_seed, "sample", sample as u64)
}

fn batch_loss<E: ContrastiveEncoder, T: Real>(
    encoder: &E,
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    inputs: &[E::Input],
    batch: &[usize],
    masks: (u64, u64),
    tau: f64,
) -> Result<Var, EncoderError> {
    let vars = encoder.bind_vars(g, store)?;
    let mut first = Vec::with_capacity(batch.len());
    let mut second = Vec::with_capacity(batch.len());
    for &i in batch {
        first.push(encoder.encode_row(g, &vars, &inputs[i], Some(sample_mask(masks.0, i)))?);
        second.push(encoder.encode_row(g, &vars, &inputs[i], Some(sample_mask(masks.1, i)))?);
    }
    let h = g.concat_rows(&first)?;
    let h_plus = g.concat_rows(&second)?;
    Ok(info_nce_loss(g, h, h_plus, tau)?)
}

/// Mean contrastive loss over one pass of batches, without updating anything.
pub fn contrastive_loss<E: ContrastiveEncoder, T: Real>(
    encoder: &E,
    store: &ParameterStore<T>,
    inputs: &[E::Input],
    cfg: &ContrastiveConfig,
) -> Result<f64, EncoderError> {
    cfg.validate()?;
    let batches = batch_indices(
        inputs.len(),
        cfg.batch_size,
        derive_seed(cfg.seed, "contrastive.epoch", 0),
    )?;
    let mut total = 0.0;
    for (b, batch) in batches.iter().enumerate() {
        let mut g = Graph::new();
        let loss = batch_loss(
            encoder,
            &mut g,
            store,
            inputs,
            batch,
            mask_pair(cfg.seed, 0, b),
            cfg.tau,
        )?;
        total += g.value(loss).item().to_f64_lossy() * batch.len() as f64;
    }
    Ok(total / inputs.len().max(1) as f64)
}

/// Trains `store` in place; returns the sample-weighted mean loss of every epoch.
///
/// Labels never enter: inputs are bare fragments or comments.
pub fn pretrain_encoder<E: ContrastiveEncoder, T: Real>(
    encoder: &E,
    store: &mut ParameterStore<T>,
    inputs: &[E::Input],
    cfg: &ContrastiveConfig,
) -> Result<Vec<f64>, EncoderError>
where
    E::Input: PartialEq,
{
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(EncoderError::Config("nothing to pretrain on".into()));
    }
    if inputs.iter().all(|x| *x == inputs[0]) {
        log::warn!(
            "all {} pretraining inputs are identical; negatives carry no signal",
            inputs.len()
        );
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = batch_indices(
            inputs.len(),
            cfg.batch_size,
            derive_seed(cfg.seed, "contrastive.epoch", epoch as u64),
        )?;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let mut g = Graph::new();
            let loss = batch_loss(
                encoder,
                &mut g,
                store,
                inputs,
                batch,
                mask_pair(cfg.seed, epoch, b),
                cfg.tau,
            )?;
            total += g.value(loss).item().to_f64_lossy() * batch.len() as f64;
            let grads = g.backward(loss)?;
            store.zero_grad();
            store.accumulate(&g, &grads)?;
            fill_missing_grads(store);
            adam.step(store)?;
        }
        let mean = total / inputs.len() as f64;
        log::info!("contrastive epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}

/// Parameters outside the encoder (or untouched by a batch) get a zero gradient.
pub(crate) fn fill_missing_grads<T: Real>(store: &mut ParameterStore<T>) {
    for name in store.trainable_names() {
        if store.grad(&name).is_none() {
            let n = store.get(&name).map_or(0, Tensor::len);
            store
                .set_grad(&name, vec![T::zero(); n])
                .expect("sized from the value");
        }
    }
}

/// Mean cosine of positive pairs (same input, two masks) and of in-batch
/// negatives (different inputs), over the given inputs as one batch.
pub fn pair_cosines<E: ContrastiveEncoder, T: Real>(
    encoder: &E,
    store: &ParameterStore<T>,
    inputs: &[E::Input],
    seed: u64,
) -> Result<(f64, f64), EncoderError> {
    let (z, z2) = mask_pair(seed, usize::MAX, 0);
    let mut g = Graph::new();
    let vars = encoder.bind_vars(&mut g, store)?;
    let rows = |mask: u64, g: &mut Graph<T>| -> Result<Vec<Vec<f64>>, EncoderError> {
        (0..inputs.len())
            .map(|i| {
                let v = encoder.encode_row(g, &vars, &inputs[i], Some(sample_mask(mask, i)))?;
                Ok(unit(g.value(v).to_f64_vec()))
            })
            .collect()
    };
    let a = rows(z, &mut g)?;
    let b = rows(z2, &mut g)?;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let n = inputs.len();
    let pos = (0..n).map(|i| dot(&a[i], &b[i])).sum::<f64>() / n as f64;
    let mut neg = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                neg += dot(&a[i], &b[j]);
            }
        }
    }
    let pairs = (n * (n - 1)).max(1) as f64;
    Ok((pos, neg / pairs))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_inputs;
    use crate::encoders::{CodeEncoderConfig, Vocab};
    use crate::java::code_graph;
    use proptest::prelude::*;

    fn loss_of(h: &[f64], hp: &[f64], n: usize, tau: f64) -> f64 {
        let d = h.len() / n;
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::from_f64(vec![n, d], h).unwrap()).unwrap();
        let b = g.input(Tensor::from_f64(vec![n, d], hp).unwrap()).unwrap();
        let l = info_nce_loss(&mut g, a, b, tau).unwrap();
        g.value(l).item()
    }

    /// Direct evaluation of the definition, without the tape.
    fn oracle(h: &[f64], hp: &[f64], n: usize, tau: f64) -> f64 {
        let d = h.len() / n;
        let cos = |i: usize, j: usize| {
            let x = &h[i * d..(i + 1) * d];
            let y = &hp[j * d..(j + 1) * d];
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            dot / (x.iter().map(|a| a * a).sum::<f64>().sqrt()
                * y.iter().map(|a| a * a).sum::<f64>().sqrt())
        };
        (0..n)
            .map(|i| {
                let denom: f64 = (0..n).map(|j| (cos(i, j) / tau).exp()).sum();
                -((cos(i, i) / tau).exp() / denom).ln()
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn single_row_loss_is_zero() {
        assert_eq!(loss_of(&[0.3, -2.0], &[1.0, 5.0], 1, 0.05), 0.0);
    }

    #[test]
    fn identical_rows_give_log_n() {
        let n = 6;
        let h: Vec<f64> = (0..n).flat_map(|_| [0.2, -0.7, 1.1]).collect();
        assert!((loss_of(&h, &h, n, 0.05) - (n as f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn orthonormal_positives_match_closed_form() {
        let n = 4;
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        let expected = -((20f64).exp() / ((20f64).exp() + (n as f64 - 1.0))).ln();
        let got = loss_of(&h, &h, n, 0.05);
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!((got - 6.2e-9).abs() < 1e-10);
    }

    #[test]
    fn invalid_arguments() {
        let mut g = Graph::<f64>::new();
        let a = g
            .input(Tensor::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let z = g
            .input(Tensor::from_f64(vec![2, 2], &[1.0, 0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        assert!(info_nce_loss(&mut g, a, a, 0.0).is_err());
        assert!(info_nce_loss(&mut g, a, a, -1.0).is_err());
        assert!(matches!(
            info_nce_loss(&mut g, a, z, 0.05),
            Err(AutodiffError::ZeroNorm { row: 1 })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = Tensor::from_f64(
            vec![3, 4],
            &[
                0.3, -0.2, 0.9, 0.1, -0.5, 0.4, 0.2, 0.8, 0.7, 0.6, -0.3, -0.1,
            ],
        )
        .unwrap();
        let hp = Tensor::from_f64(
            vec![3, 4],
            &[
                0.2, -0.1, 0.8, 0.3, -0.4, 0.5, 0.1, 0.6, 0.9, 0.5, -0.2, 0.1,
            ],
        )
        .unwrap();
        let r = check_inputs(&[h, hp], 1e-6, |g, v| info_nce_loss(g, v[0], v[1], 0.5)).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn mask_pairs_are_distinct_and_deterministic() {
        for b in 0..50 {
            let (z, z2) = mask_pair(1, 0, b);
            assert_ne!(z, z2);
            assert_eq!((z, z2), mask_pair(1, 0, b));
        }
    }

    fn tiny_code() -> (CodeEncoder, Vec<CodeInput>) {
        let srcs: Vec<String> = (0..6)
            .map(|k| format!("int m{k}(int a){{ return a * {k} + v{k}; }}"))
            .collect();
        let graphs: Vec<_> = srcs.iter().map(|s| code_graph(s).unwrap()).collect();
        let vocab = Vocab::build(graphs.iter().map(|g| g.labels().to_vec()), 1).unwrap();
        let cfg = CodeEncoderConfig {
            embed_dim: 6,
            hidden_dim: 4,
            gcn_layers: 2,
            dropout_p: 0.1,
        };
        let enc = CodeEncoder::new(cfg, vocab).unwrap();
        let inputs = graphs.iter().map(|g| enc.prepare(g)).collect();
        (enc, inputs)
    }

    #[test]
    fn same_seed_same_loss_curve() {
        let (enc, inputs) = tiny_code();
        let run = || {
            let mut store = ParameterStore::<f32>::new(2);
            enc.init_params(&mut store).unwrap();
            let cfg = ContrastiveConfig {
                batch_size: 3,
                epochs: 3,
                seed: 4,
                ..ContrastiveConfig::default()
            };
            (
                pretrain_encoder(&enc, &mut store, &inputs, &cfg).unwrap(),
                store,
            )
        };
        let (h1, s1) = run();
        let (h2, s2) = run();
        assert_eq!(h1, h2);
        assert_eq!(s1, s2);
        assert_eq!(h1.len(), 3);
    }

    #[test]
    fn identical_corpus_still_trains() {
        let (enc, inputs) = tiny_code();
        let same = vec![inputs[0].clone(); 4];
        let mut store = ParameterStore::<f32>::new(2);
        enc.init_params(&mut store).unwrap();
        let cfg = ContrastiveConfig {
            batch_size: 4,
            epochs: 1,
            ..ContrastiveConfig::default()
        };
        let h = pretrain_encoder(&enc, &mut store, &same, &cfg).unwrap();
        assert!(h[0].is_finite());
    }

    proptest! {
        #[test]
        fn matches_oracle_and_is_scale_invariant(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..6),
            noise in prop::collection::vec(-0.3f64..0.3, 18),
            c in 0.1f64..10.0,
            tau in 0.05f64..2.0,
        ) {
            let n = rows.len();
            let h: Vec<f64> = rows.iter().flatten().map(|x| x + 1.5).collect();
            let hp: Vec<f64> = h.iter().zip(&noise).map(|(x, e)| x + e).collect();
            let loss = loss_of(&h, &hp, n, tau);
            prop_assert!(loss >= 0.0);
            prop_assert!((loss - oracle(&h, &hp, n, tau)).abs() < 1e-9);
            let mut scaled = h.clone();
            for x in &mut scaled[..3] {
                *x *= c;
            }
            prop_assert!((loss_of(&scaled, &hp, n, tau) - loss).abs() < 1e-6);
        }
    }
}
