//! Pipeline steps shared by the subcommands and the acceptance suite.

use std::collections::{BTreeMap, HashSet};

use anyhow::{Context, Result};
use clmn::autodiff::{derive_seed, ParameterStore};
use clmn::bundle::grow_embedding;
use clmn::contrastive::{pretrain_encoder, ContrastiveConfig};
use clmn::data::{split, ReviewSample, SplitSpec};
use clmn::encoders::{
    skipgram_pretrain, tokenize_text, CodeEncoder, CodeEncoderConfig, SkipGramConfig, TextEncoder,
    TextEncoderConfig, Vocab, CODE_PREFIX, TEXT_PREFIX,
};
use clmn::fusion::{evaluate, train, Clmn, EpochRecord, TrainConfig};
use clmn::java::CodeGraph;
use clmn::metrics::{ConfusionMatrix, ReportRow};

/// Bound of freshly initialized embedding rows.
const EMBED_BOUND: f64 = 0.1;

/// Encoder widths used whenever an encoder is created from scratch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gcn_layers: usize,
    pub dropout_p: f64,
    pub max_len: usize,
    pub min_count: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            gcn_layers: 4,
            dropout_p: 0.1,
            max_len: 64,
            min_count: 1,
        }
    }
}

impl Arch {
    pub fn code_config(&self) -> CodeEncoderConfig {
        CodeEncoderConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            gcn_layers: self.gcn_layers,
            dropout_p: self.dropout_p,
        }
    }

    pub fn text_config(&self) -> TextEncoderConfig {
        TextEncoderConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            dropout_p: self.dropout_p,
            max_len: self.max_len,
        }
    }
}

/// Which fragments of each sample feed code pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Sides {
    Original,
    Revised,
    Both,
}

fn graph(sample: &ReviewSample, revised: bool) -> Result<CodeGraph> {
    let f = if revised {
        &sample.revised
    } else {
        &sample.original
    };
    let ast = f.ast().with_context(|| {
        format!(
            "sample {}: {} fragment",
            sample.id,
            if revised { "revised" } else { "original" }
        )
    })?;
    Ok(ast.simplify().to_code_graph())
}

/// Graphs of the selected sides, duplicates dropped, in corpus order.
pub fn code_graphs(samples: &[ReviewSample], sides: Sides) -> Result<Vec<CodeGraph>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in samples {
        let picks: &[bool] = match sides {
            Sides::Original => &[false],
            Sides::Revised => &[true],
            Sides::Both => &[false, true],
        };
        for &rev in picks {
            let g = graph(s, rev)?;
            if seen.insert((g.labels().to_vec(), g.adjacency().to_vec())) {
                out.push(g);
            }
        }
    }
    Ok(out)
}

/// Tokenized comments, duplicates dropped, in corpus order.
pub fn comment_tokens(samples: &[ReviewSample]) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .map(|s| tokenize_text(&s.comment))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn label_sequences(samples: &[ReviewSample]) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(2 * samples.len());
    for s in samples {
        out.push(graph(s, false)?.labels().to_vec());
        out.push(graph(s, true)?.labels().to_vec());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    pub contrastive: ContrastiveConfig,
    /// 0 skips the skip-gram initialization of code symbol embeddings.
    pub skipgram_epochs: usize,
    pub skipgram_window: usize,
    pub skipgram_negatives: usize,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            contrastive: ContrastiveConfig::default(),
            skipgram_epochs: 1,
            skipgram_window: 2,
            skipgram_negatives: 5,
        }
    }
}

pub struct Pretrained<E> {
    pub encoder: E,
    pub store: ParameterStore<f32>,
    /// Mean loss per epoch.
    pub history: Vec<f64>,
}

pub fn pretrain_code(
    samples: &[ReviewSample],
    sides: Sides,
    arch: &Arch,
    opts: &PretrainOptions,
) -> Result<Pretrained<CodeEncoder>> {
    let graphs = code_graphs(samples, sides)?;
    let sequences: Vec<Vec<String>> = graphs.iter().map(|g| g.labels().to_vec()).collect();
    let vocab = Vocab::build(&sequences, arch.min_count)?;
    let seed = opts.contrastive.seed;
    let encoder = CodeEncoder::new(arch.code_config(), vocab)?;
    let mut store = ParameterStore::new(derive_seed(seed, "pretrain.code.init", 0));
    encoder.init_params(&mut store)?;
    if opts.skipgram_epochs > 0 {
        let cfg = SkipGramConfig {
            dim: arch.embed_dim,
            window: opts.skipgram_window,
            negatives: opts.skipgram_negatives,
            epochs: opts.skipgram_epochs,
            seed: derive_seed(seed, "pretrain.skipgram", 0),
            ..SkipGramConfig::default()
        };
        let table = skipgram_pretrain(&sequences, &encoder.vocab, &cfg)?;
        store.set(&format!("{CODE_PREFIX}.embed"), table)?;
    }
    let inputs: Vec<_> = graphs.iter().map(|g| encoder.prepare(g)).collect();
    log::info!(
        "code pretraining on {} distinct fragments, vocabulary {}",
        inputs.len(),
        encoder.vocab.len()
    );
    let history = pretrain_encoder(&encoder, &mut store, &inputs, &opts.contrastive)?;
    Ok(Pretrained {
        encoder,
        store,
        history,
    })
}

pub fn pretrain_text(
    samples: &[ReviewSample],
    arch: &Arch,
    opts: &PretrainOptions,
) -> Result<Pretrained<TextEncoder>> {
    let comments = comment_tokens(samples);
    let vocab = Vocab::build(&comments, arch.min_count)?;
    let encoder = TextEncoder::new(arch.text_config(), vocab)?;
    let mut store =
        ParameterStore::new(derive_seed(opts.contrastive.seed, "pretrain.text.init", 0));
    encoder.init_params(&mut store)?;
    let inputs: Vec<Vec<usize>> = comments.iter().map(|c| encoder.prepare_tokens(c)).collect();
    log::info!(
        "text pretraining on {} distinct comments, vocabulary {}",
        inputs.len(),
        encoder.vocab.len()
    );
    let history = pretrain_encoder(&encoder, &mut store, &inputs, &opts.contrastive)?;
    Ok(Pretrained {
        encoder,
        store,
        history,
    })
}

/// Starting points for fine-tuning. A missing encoder is created from scratch.
#[derive(Default)]
pub struct Init {
    pub code: Option<(CodeEncoder, ParameterStore<f32>)>,
    pub text: Option<(TextEncoder, ParameterStore<f32>)>,
}

fn adopt(store: &mut ParameterStore<f32>, loaded: &ParameterStore<f32>) -> Result<()> {
    for (name, t) in loaded.iter() {
        store.insert(name, t.clone())?;
    }
    Ok(())
}

fn extend(
    vocab: &mut Vocab,
    store: &mut ParameterStore<f32>,
    prefix: &str,
    seen: &Vocab,
) -> Result<()> {
    let added = vocab.extend(seen.tokens());
    if added > 0 {
        grow_embedding(store, &format!("{prefix}.embed"), vocab.len(), EMBED_BOUND)?;
        log::info!(
            "{prefix} vocabulary extended by {added} tokens to {}",
            vocab.len()
        );
    }
    Ok(())
}

/// Builds the full model for a training set. With `extend_vocab`, tokens of
/// the training set missing from a loaded vocabulary are appended and get
/// fresh embedding rows; otherwise they map to the unknown token.
pub fn assemble(
    train_set: &[ReviewSample],
    init: Init,
    arch: &Arch,
    extend_vocab: bool,
    use_text: bool,
    seed: u64,
) -> Result<(Clmn, ParameterStore<f32>)> {
    let code_vocab = Vocab::build(label_sequences(train_set)?, arch.min_count)?;
    let text_vocab = Vocab::build(
        train_set.iter().map(|s| tokenize_text(&s.comment)),
        arch.min_count,
    )?;
    let mut store = ParameterStore::new(derive_seed(seed, "model.init", 0));
    let code = match init.code {
        Some((mut enc, loaded)) => {
            adopt(&mut store, &loaded)?;
            if extend_vocab {
                extend(&mut enc.vocab, &mut store, CODE_PREFIX, &code_vocab)?;
            }
            enc
        }
        None => {
            let enc = CodeEncoder::new(arch.code_config(), code_vocab)?;
            enc.init_params(&mut store)?;
            enc
        }
    };
    let text = match init.text {
        Some((mut enc, loaded)) => {
            adopt(&mut store, &loaded)?;
            if extend_vocab {
                extend(&mut enc.vocab, &mut store, TEXT_PREFIX, &text_vocab)?;
            }
            enc
        }
        None => {
            let enc = TextEncoder::new(arch.text_config(), text_vocab)?;
            enc.init_params(&mut store)?;
            enc
        }
    };
    let model = Clmn {
        code,
        text,
        use_text,
    };
    model.init_head(&mut store)?;
    model.check_store(&store)?;
    Ok((model, store))
}

pub fn fit(
    model: &Clmn,
    store: &mut ParameterStore<f32>,
    train_set: &[ReviewSample],
    val_set: &[ReviewSample],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    let tr = model.prepare_all(train_set)?;
    let va = model.prepare_all(val_set)?;
    Ok(train(model, store, &tr, &va, cfg)?)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_f1,val_mcc\n");
    for r in history {
        let (f1, mcc) = r.val.map_or((String::new(), String::new()), |cm| {
            (format!("{:.6}", cm.f1()), format!("{:.6}", cm.mcc()))
        });
        out.push_str(&format!("{},{:.6},{f1},{mcc}\n", r.epoch, r.train_loss));
    }
    out
}

pub fn loss_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (e, l) in history.iter().enumerate() {
        out.push_str(&format!("{e},{l:.6}\n"));
    }
    out
}

/// One row per repository, then `all`.
pub fn report_rows(
    model: &Clmn,
    store: &ParameterStore<f32>,
    samples: &[ReviewSample],
) -> Result<Vec<ReportRow>> {
    let prepared = model.prepare_all(samples)?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.repo.as_str()).or_default().push(i);
    }
    let mut rows = Vec::with_capacity(groups.len() + 1);
    for (repo, idx) in groups {
        let subset: Vec<_> = idx.iter().map(|&i| prepared[i].clone()).collect();
        rows.push(ReportRow {
            repo: repo.to_string(),
            cm: evaluate(model, store, &subset)?,
        });
    }
    let all = rows
        .iter()
        .fold(ConfusionMatrix::default(), |acc, r| ConfusionMatrix {
            tp: acc.tp + r.cm.tp,
            fp: acc.fp + r.cm.fp,
            fn_: acc.fn_ + r.cm.fn_,
            tn: acc.tn + r.cm.tn,
        });
    rows.push(ReportRow {
        repo: "all".into(),
        cm: all,
    });
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOptions {
    pub arch: Arch,
    pub pretrain: PretrainOptions,
    pub train: TrainConfig,
    pub sides: Sides,
    pub train_fraction: f64,
}

/// Held-out results on the target corpus for one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferResult {
    pub seed: u64,
    /// Code encoder pretrained on the other project.
    pub cross: ConfusionMatrix,
    /// Code encoder pretrained on the target's own training split.
    pub own: ConfusionMatrix,
}

/// Pretrains the code encoder on `source` and, separately, on the target's
/// training split; fine-tunes each on that split and scores the target's
/// test split. The text encoder starts from the same fresh weights in both.
pub fn transfer_eval(
    source: &[ReviewSample],
    target: &[ReviewSample],
    opts: &TransferOptions,
    seed: u64,
) -> Result<TransferResult> {
    let (train_set, test_set) = split(
        target,
        &SplitSpec {
            train_fraction: opts.train_fraction,
            seed,
            stratified: true,
        },
    )?;
    let mut pre = opts.pretrain;
    pre.contrastive.seed = seed;
    let mut cfg = opts.train;
    cfg.seed = seed;
    let score = |corpus: &[ReviewSample], name: &str| -> Result<ConfusionMatrix> {
        let p = pretrain_code(corpus, opts.sides, &opts.arch, &pre)
            .with_context(|| format!("{name} pretraining"))?;
        let init = Init {
            code: Some((p.encoder, p.store)),
            text: None,
        };
        let (model, mut store) = assemble(&train_set, init, &opts.arch, true, true, seed)?;
        fit(&model, &mut store, &train_set, &[], &cfg)?;
        let cm = evaluate(&model, &store, &model.prepare_all(&test_set)?)?;
        log::info!(
            "transfer seed {seed} {name}: f1 {:.4} mcc {:.4}",
            cm.f1(),
            cm.mcc()
        );
        Ok(cm)
    };
    let cross = score(source, "cross")?;
    let own = score(&train_set, "own")?;
    Ok(TransferResult { seed, cross, own })
}

pub fn transfer_csv(results: &[TransferResult]) -> String {
    let mut out = String::from("setting,seed,samples,tp,fp,fn,tn,precision,recall,f1,mcc\n");
    let mut line = |setting: &str, seed: String, cm: &ConfusionMatrix| {
        out.push_str(&format!(
            "{setting},{seed},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
            cm.total(),
            cm.tp,
            cm.fp,
            cm.fn_,
            cm.tn,
            cm.precision(),
            cm.recall(),
            cm.f1(),
            cm.mcc()
        ));
    };
    for r in results {
        line("cross", r.seed.to_string(), &r.cross);
        line("own", r.seed.to_string(), &r.own);
    }
    out
}

/// Mean held-out F1 of (cross, own) over runs.
pub fn mean_f1(results: &[TransferResult]) -> (f64, f64) {
    let n = results.len().max(1) as f64;
    (
        results.iter().map(|r| r.cross.f1()).sum::<f64>() / n,
        results.iter().map(|r| r.own.f1()).sum::<f64>() / n,
    )
}
