//! The review classifier: code difference fused with the comment vector,
//! a softmax head and weighted cross-entropy fine-tuning.
//!
//! Class order is (reject, accept). `p̂` is the predicted probability of
//! accept. Errors on accepted samples (y = 1, term `log p̂`) are weighted by
//! `w_accept`; errors on rejected samples (y = 0, term `log(1 − p̂)`) by
//! `w_reject`.

use crate::autodiff::{
    derive_seed, l2_penalty, AdamConfig, AdamState, AutodiffError, Graph, ParameterStore, Real,
    Tensor, Var,
};
use crate::contrastive::fill_missing_grads;
use crate::data::{batch_indices, CorpusStats, DataError, ReviewSample};
use crate::encoders::{CodeEncoder, CodeInput, CodeVars, EncoderError, TextEncoder, TextVars};
use crate::java::JavaError;
use crate::metrics::{confusion, ConfusionMatrix, MetricsError};

pub const FUSION_W: &str = "fusion.w";
pub const FUSION_B: &str = "fusion.b";
const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{0}")]
    Config(String),
    #[error("sample {id}: {source}")]
    Sample { id: String, source: JavaError },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// r = [c_orig − c_rev, t].
pub fn fuse<T: Real>(
    g: &mut Graph<T>,
    c_orig: Var,
    c_rev: Var,
    t: Var,
) -> Result<Var, AutodiffError> {
    let c = g.sub(c_orig, c_rev)?;
    g.concat_cols(&[c, t])
}

/// Rows of `r` (B × (d+e)) times Wᵀ plus b, giving B × 2 logits.
pub fn logits<T: Real>(g: &mut Graph<T>, r: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let wt = g.transpose(w)?;
    let z = g.matmul(r, wt)?;
    g.add_row(z, b)
}

/// softmax(W r + b) for one fused vector, as (reject, accept).
pub fn predict(r: &[f64], w: &Tensor<f64>, b: &Tensor<f64>) -> Result<[f64; 2], AutodiffError> {
    let mut g = Graph::new();
    let rv = g.input(Tensor::row(r.to_vec()))?;
    let wv = g.input(w.clone())?;
    let bv = g.input(b.clone())?;
    let z = logits(&mut g, rv, wv, bv)?;
    let y = g.softmax(z, 1)?;
    let v = g.value(y).values();
    Ok([v[0], v[1]])
}

/// Accept only when the accept logit is strictly larger.
pub fn decide(logit_reject: f64, logit_accept: f64) -> u8 {
    u8::from(logit_accept > logit_reject)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub reject: f64,
    pub accept: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            reject: 1.0,
            accept: 1.0,
        }
    }
}

impl ClassWeights {
    pub fn new(reject: f64, accept: f64) -> Result<Self, ModelError> {
        if !(reject > 0.0 && accept > 0.0) {
            return Err(ModelError::Config(format!(
                "class weights must be positive, got ({reject}, {accept})"
            )));
        }
        Ok(Self { reject, accept })
    }
}

/// w_c = S / (2 · S_c).
pub fn balanced_weights(stats: &CorpusStats) -> Result<ClassWeights, ModelError> {
    let s = stats.sample_count as f64;
    let rejected = stats.rejected_count as f64;
    let accepted = s - rejected;
    if rejected == 0.0 || accepted == 0.0 {
        return Err(ModelError::Config(
            "balanced weights need both classes present".into(),
        ));
    }
    ClassWeights::new(s / (2.0 * rejected), s / (2.0 * accepted))
}

/// −Σ_i [w_accept·y_i·log p̂_i + w_reject·(1−y_i)·log(1−p̂_i)] + λ‖Θ‖².
///
/// `p_accept` is a B × 1 column of accept probabilities, clamped to
/// [1e-7, 1 − 1e-7] before the logarithms.
pub fn weighted_ce_loss<T: Real>(
    g: &mut Graph<T>,
    p_accept: Var,
    labels: &[u8],
    weights: &ClassWeights,
    lambda: f64,
    store: &ParameterStore<T>,
) -> Result<Var, AutodiffError> {
    let (rows, cols) = g.value(p_accept).dims2();
    if cols != 1 || rows != labels.len() {
        return Err(AutodiffError::Shape {
            op: "weighted_ce_loss",
            detail: format!("[{rows}, {cols}] probabilities for {} labels", labels.len()),
        });
    }
    let p = g.clamp(p_accept, T::lit(PROB_FLOOR), T::lit(1.0 - PROB_FLOOR))?;
    let log_p = g.log(p)?;
    let q = g.affine(p, T::lit(-1.0), T::one())?;
    let log_q = g.log(q)?;
    let accept_coef: Vec<f64> = labels
        .iter()
        .map(|&y| weights.accept * f64::from(y))
        .collect();
    let reject_coef: Vec<f64> = labels
        .iter()
        .map(|&y| weights.reject * f64::from(1 - y.min(1)))
        .collect();
    let ca = g.input(Tensor::from_f64(vec![rows, 1], &accept_coef)?)?;
    let cr = g.input(Tensor::from_f64(vec![rows, 1], &reject_coef)?)?;
    let ta = g.mul(ca, log_p)?;
    let tr = g.mul(cr, log_q)?;
    let both = g.add(ta, tr)?;
    let s = g.sum(both)?;
    let data = g.neg(s)?;
    if lambda == 0.0 {
        return Ok(data);
    }
    let reg = l2_penalty(g, store, T::lit(lambda))?;
    g.add(data, reg)
}

/// One sample ready for the encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub original: CodeInput,
    pub revised: CodeInput,
    pub comment: Vec<usize>,
    pub label: u8,
}

/// Both encoders and the head. With `use_text` off the comment vector is zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Clmn {
    pub code: CodeEncoder,
    pub text: TextEncoder,
    pub use_text: bool,
}

pub struct ClmnVars {
    code: CodeVars,
    text: TextVars,
    w: Var,
    b: Var,
}

impl Clmn {
    pub fn fused_width(&self) -> usize {
        self.code.width() + self.text.width()
    }

    /// Adds the head parameters, checking their shape if already present.
    pub fn init_head<T: Real>(&self, store: &mut ParameterStore<T>) -> Result<(), ModelError> {
        let width = self.fused_width();
        let bound = 1.0 / (width as f64).sqrt();
        match store.get(FUSION_W).map(|t| t.shape().to_vec()) {
            None => {
                store.insert_uniform(FUSION_W, vec![2, width], bound)?;
                store.insert(FUSION_B, Tensor::zeros(vec![2]))?;
            }
            Some(shape) if shape == [2, width] => {}
            Some(shape) => {
                return Err(ModelError::Config(format!(
                    "{FUSION_W} has shape {shape:?}, encoders need [2, {width}]"
                )))
            }
        }
        Ok(())
    }

    /// Fresh parameters for every component.
    pub fn init_params<T: Real>(&self, store: &mut ParameterStore<T>) -> Result<(), ModelError> {
        self.code.init_params(store)?;
        self.text.init_params(store)?;
        self.init_head(store)
    }

    /// Shapes of stored parameters against the configured widths and vocabularies.
    pub fn check_store<T: Real>(&self, store: &ParameterStore<T>) -> Result<(), ModelError> {
        let mut fresh = ParameterStore::<T>::new(0);
        self.init_params(&mut fresh)?;
        for (name, t) in fresh.iter() {
            match store.get(name) {
                None => return Err(ModelError::Config(format!("parameter {name} is missing"))),
                Some(s) if s.shape() != t.shape() => {
                    return Err(ModelError::Config(format!(
                        "parameter {name} has shape {:?}, configuration needs {:?}",
                        s.shape(),
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn prepare(&self, sample: &ReviewSample) -> Result<PreparedSample, ModelError> {
        let graph = |f: &crate::data::Fragment| {
            f.ast()
                .map(|a| a.simplify().to_code_graph())
                .map_err(|source| ModelError::Sample {
                    id: sample.id.clone(),
                    source,
                })
        };
        Ok(PreparedSample {
            original: self.code.prepare(&graph(&sample.original)?),
            revised: self.code.prepare(&graph(&sample.revised)?),
            comment: self.text.prepare(&sample.comment),
            label: sample.label,
        })
    }

    pub fn prepare_all(&self, samples: &[ReviewSample]) -> Result<Vec<PreparedSample>, ModelError> {
        samples.iter().map(|s| self.prepare(s)).collect()
    }

    pub fn bind<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
    ) -> Result<ClmnVars, ModelError> {
        Ok(ClmnVars {
            code: self.code.bind(g, store)?,
            text: self.text.bind(g, store)?,
            w: g.param(store, FUSION_W)?,
            b: g.param(store, FUSION_B)?,
        })
    }

    /// Fused vector r (1 × (d+e)) of one sample. Dropout applies when `mask_seed` is set.
    pub fn fused<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &ClmnVars,
        s: &PreparedSample,
        mask_seed: Option<u64>,
    ) -> Result<Var, ModelError> {
        let role = |name: &str| mask_seed.map(|m| derive_seed(m, name, 0));
        let co = self
            .code
            .encode(g, &vars.code, &s.original, role("original"))?
            .vector;
        let cr = self
            .code
            .encode(g, &vars.code, &s.revised, role("revised"))?
            .vector;
        let t = if self.use_text {
            self.text
                .encode(g, &vars.text, &s.comment, role("comment"))?
        } else {
            g.input(Tensor::zeros(vec![1, self.text.width()]))?
        };
        Ok(fuse(g, co, cr, t)?)
    }

    /// B × 2 logits for a batch.
    pub fn batch_logits<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &ClmnVars,
        batch: &[&PreparedSample],
        mask_seeds: Option<&[u64]>,
    ) -> Result<Var, ModelError> {
        let rows = batch
            .iter()
            .enumerate()
            .map(|(i, s)| self.fused(g, vars, s, mask_seeds.map(|m| m[i])))
            .collect::<Result<Vec<_>, _>>()?;
        let r = g.concat_rows(&rows)?;
        Ok(logits(g, r, vars.w, vars.b)?)
    }

    /// Inference-mode (reject, accept) probabilities.
    pub fn probabilities<T: Real>(
        &self,
        store: &ParameterStore<T>,
        s: &PreparedSample,
    ) -> Result<[f64; 2], ModelError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, store)?;
        let z = self.batch_logits(&mut g, &vars, &[s], None)?;
        let y = g.softmax(z, 1)?;
        let v = g.value(y).to_f64_vec();
        Ok([v[0], v[1]])
    }

    pub fn predict_labels<T: Real>(
        &self,
        store: &ParameterStore<T>,
        samples: &[PreparedSample],
    ) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(64) {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, store)?;
            let refs: Vec<&PreparedSample> = chunk.iter().collect();
            let z = self.batch_logits(&mut g, &vars, &refs, None)?;
            let v = g.value(z).to_f64_vec();
            out.extend(v.chunks(2).map(|p| decide(p[0], p[1])));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassWeightMode {
    None,
    Balanced,
    Explicit(ClassWeights),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub class_weights: ClassWeightMode,
    pub freeze_encoders: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            lr: 1e-3,
            batch_size: 64,
            epochs: 20,
            seed: 0,
            class_weights: ClassWeightMode::Balanced,
            freeze_encoders: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda >= 0.0) {
            return Err(ModelError::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.lr >= 0.0) {
            return Err(ModelError::Config(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn weights(&self, train: &[PreparedSample]) -> Result<ClassWeights, ModelError> {
        match self.class_weights {
            ClassWeightMode::None => Ok(ClassWeights::default()),
            ClassWeightMode::Explicit(w) => ClassWeights::new(w.reject, w.accept),
            ClassWeightMode::Balanced => {
                let rejected = train.iter().filter(|s| s.label == 0).count();
                balanced_weights(&CorpusStats {
                    sample_count: train.len(),
                    rejected_count: rejected,
                    reject_rate: rejected as f64 / train.len().max(1) as f64,
                })
            }
        }
    }
}

/// Metrics of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<ConfusionMatrix>,
}

/// Fine-tunes `store` in place and returns the per-epoch history. The
/// training loss of an epoch is the mean of its batch losses.
pub fn train<T: Real>(
    model: &Clmn,
    store: &mut ParameterStore<T>,
    train_set: &[PreparedSample],
    val_set: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Config("training set is empty".into()));
    }
    model.check_store(store)?;
    let weights = cfg.weights(train_set)?;
    for prefix in ["code.", "text."] {
        store.set_trainable(prefix, !cfg.freeze_encoders);
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = batch_indices(
            train_set.len(),
            cfg.batch_size,
            derive_seed(cfg.seed, "train.epoch", epoch as u64),
        )?;
        let mut total = 0.0;
        for batch in &batches {
            let mut g = Graph::new();
            let vars = model.bind(&mut g, store)?;
            let samples: Vec<&PreparedSample> = batch.iter().map(|&i| &train_set[i]).collect();
            let masks: Vec<u64> = batch
                .iter()
                .map(|&i| derive_seed(cfg.seed, &format!("train.mask.{epoch}"), i as u64))
                .collect();
            let z = model.batch_logits(&mut g, &vars, &samples, Some(&masks))?;
            let y = g.softmax(z, 1)?;
            let p_accept = g.slice_cols(y, 1, 1)?;
            let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
            let loss = weighted_ce_loss(&mut g, p_accept, &labels, &weights, cfg.lambda, store)?;
            total += g.value(loss).item().to_f64_lossy();
            let grads = g.backward(loss)?;
            store.zero_grad();
            store.accumulate(&g, &grads)?;
            fill_missing_grads(store);
            adam.step(store)?;
        }
        let train_loss = total / batches.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, store, val_set)?)
        };
        match &val {
            Some(cm) => log::info!(
                "epoch {epoch}: loss {train_loss:.6} val f1 {:.4} mcc {:.4}",
                cm.f1(),
                cm.mcc()
            ),
            None => log::info!("epoch {epoch}: loss {train_loss:.6}"),
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val,
        });
    }
    store.set_trainable("", true);
    Ok(history)
}

/// Inference-mode confusion matrix (accept positive, ties rejected).
pub fn evaluate<T: Real>(
    model: &Clmn,
    store: &ParameterStore<T>,
    samples: &[PreparedSample],
) -> Result<ConfusionMatrix, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Config("evaluation set is empty".into()));
    }
    let predictions = model.predict_labels(store, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok(confusion(&predictions, &labels)?)
}
