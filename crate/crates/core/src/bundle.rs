//! Checkpoints together with their sidecar files.
//!
//! A checkpoint at `p` is accompanied by `p.meta.json` (settings that cannot
//! be read off tensor shapes) and `p.code.vocab` / `p.text.vocab`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{
    derive_seed, read_checkpoint, save_checkpoint, uniform_init, AutodiffError, ParameterStore,
    Real, Tensor,
};
use crate::encoders::{
    CodeEncoder, CodeEncoderConfig, EncoderError, TextEncoder, TextEncoderConfig, Vocab,
    CODE_PREFIX, TEXT_PREFIX,
};
use crate::fusion::{Clmn, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {message}")]
    Meta { path: PathBuf, message: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Meta {
    Code {
        dropout_p: f64,
    },
    Text {
        dropout_p: f64,
        max_len: usize,
    },
    Model {
        code_dropout_p: f64,
        text_dropout_p: f64,
        max_len: usize,
        use_text: bool,
    },
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn code_vocab_path(path: &Path) -> PathBuf {
    sidecar(path, ".code.vocab")
}

pub fn text_vocab_path(path: &Path) -> PathBuf {
    sidecar(path, ".text.vocab")
}

pub fn meta_path(path: &Path) -> PathBuf {
    sidecar(path, ".meta.json")
}

fn write_meta(path: &Path, meta: &Meta) -> Result<(), BundleError> {
    let mut text = serde_json::to_string_pretty(meta).expect("meta serializes");
    text.push('\n');
    crate::io::write_atomic(&meta_path(path), text.as_bytes())?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Meta, BundleError> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| BundleError::Meta {
        path: mp.clone(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| BundleError::Meta {
        path: mp,
        message: e.to_string(),
    })
}

fn wrong_kind(path: &Path, want: &str, got: &Meta) -> BundleError {
    BundleError::Meta {
        path: meta_path(path),
        message: format!("expected a {want} checkpoint, found {got:?}"),
    }
}

/// Parameters whose names start with `prefix.`.
pub fn substore<T: Real>(
    store: &ParameterStore<T>,
    prefix: &str,
) -> Result<ParameterStore<T>, AutodiffError> {
    let dotted = format!("{prefix}.");
    let mut out = ParameterStore::new(store.seed());
    for (name, t) in store.iter().filter(|(n, _)| n.starts_with(&dotted)) {
        out.insert(name, t.clone())?;
    }
    Ok(out)
}

fn load_all<T: Real>(path: &Path, seed: u64) -> Result<ParameterStore<T>, BundleError> {
    let mut store = ParameterStore::new(seed);
    for (name, t) in read_checkpoint::<T>(path)? {
        store.insert(name, t)?;
    }
    Ok(store)
}

fn check_vocab<T: Real>(
    store: &ParameterStore<T>,
    prefix: &str,
    rows: usize,
    vocab: &Vocab,
) -> Result<(), BundleError> {
    if rows != vocab.len() {
        return Err(EncoderError::Config(format!(
            "{prefix}.embed has {rows} rows but the vocabulary has {} tokens",
            vocab.len()
        ))
        .into());
    }
    debug_assert!(store.contains(&format!("{prefix}.embed")));
    Ok(())
}

pub fn save_code_encoder<T: Real>(
    enc: &CodeEncoder,
    store: &ParameterStore<T>,
    path: &Path,
) -> Result<(), BundleError> {
    save_checkpoint(&substore(store, CODE_PREFIX)?, path)?;
    enc.vocab.save(&code_vocab_path(path))?;
    write_meta(
        path,
        &Meta::Code {
            dropout_p: enc.config.dropout_p,
        },
    )
}

pub fn save_text_encoder<T: Real>(
    enc: &TextEncoder,
    store: &ParameterStore<T>,
    path: &Path,
) -> Result<(), BundleError> {
    save_checkpoint(&substore(store, TEXT_PREFIX)?, path)?;
    enc.vocab.save(&text_vocab_path(path))?;
    write_meta(
        path,
        &Meta::Text {
            dropout_p: enc.config.dropout_p,
            max_len: enc.config.max_len,
        },
    )
}

/// Loads `code.*` parameters. Other parameters in the file are ignored, so a
/// full model checkpoint also serves as a code encoder source.
pub fn load_code_encoder<T: Real>(
    path: &Path,
    seed: u64,
) -> Result<(CodeEncoder, ParameterStore<T>), BundleError> {
    let dropout_p = match read_meta(path)? {
        Meta::Code { dropout_p } => dropout_p,
        Meta::Model { code_dropout_p, .. } => code_dropout_p,
        other => return Err(wrong_kind(path, "code encoder", &other)),
    };
    let store = substore(&load_all::<T>(path, seed)?, CODE_PREFIX)?;
    let (rows, cfg) = CodeEncoderConfig::infer(&store, dropout_p)?;
    let vocab = Vocab::load(&code_vocab_path(path))?;
    check_vocab(&store, CODE_PREFIX, rows, &vocab)?;
    Ok((CodeEncoder::new(cfg, vocab)?, store))
}

pub fn load_text_encoder<T: Real>(
    path: &Path,
    seed: u64,
) -> Result<(TextEncoder, ParameterStore<T>), BundleError> {
    let (dropout_p, max_len) = match read_meta(path)? {
        Meta::Text { dropout_p, max_len } => (dropout_p, max_len),
        Meta::Model {
            text_dropout_p,
            max_len,
            ..
        } => (text_dropout_p, max_len),
        other => return Err(wrong_kind(path, "text encoder", &other)),
    };
    let store = substore(&load_all::<T>(path, seed)?, TEXT_PREFIX)?;
    let (rows, cfg) = TextEncoderConfig::infer(&store, dropout_p, max_len)?;
    let vocab = Vocab::load(&text_vocab_path(path))?;
    check_vocab(&store, TEXT_PREFIX, rows, &vocab)?;
    Ok((TextEncoder::new(cfg, vocab)?, store))
}

pub fn save_model<T: Real>(
    model: &Clmn,
    store: &ParameterStore<T>,
    path: &Path,
) -> Result<(), BundleError> {
    model.check_store(store)?;
    save_checkpoint(store, path)?;
    model.code.vocab.save(&code_vocab_path(path))?;
    model.text.vocab.save(&text_vocab_path(path))?;
    write_meta(
        path,
        &Meta::Model {
            code_dropout_p: model.code.config.dropout_p,
            text_dropout_p: model.text.config.dropout_p,
            max_len: model.text.config.max_len,
            use_text: model.use_text,
        },
    )
}

pub fn load_model<T: Real>(
    path: &Path,
    seed: u64,
) -> Result<(Clmn, ParameterStore<T>), BundleError> {
    let use_text = match read_meta(path)? {
        Meta::Model { use_text, .. } => use_text,
        other => return Err(wrong_kind(path, "full model", &other)),
    };
    let (code, _) = load_code_encoder::<T>(path, seed)?;
    let (text, _) = load_text_encoder::<T>(path, seed)?;
    let store = load_all::<T>(path, seed)?;
    let model = Clmn {
        code,
        text,
        use_text,
    };
    model.check_store(&store)?;
    Ok((model, store))
}

/// Appends freshly initialized rows to the matrix `name` until it has `rows`
/// rows. Existing rows are untouched. Returns the number of rows added.
pub fn grow_embedding<T: Real>(
    store: &mut ParameterStore<T>,
    name: &str,
    rows: usize,
    bound: f64,
) -> Result<usize, AutodiffError> {
    let current = store
        .get(name)
        .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?
        .clone();
    let (old, dim) = current.dims2();
    if rows <= old {
        return Ok(0);
    }
    let extra: Tensor<T> = uniform_init(
        vec![rows - old, dim],
        bound,
        derive_seed(store.seed(), &format!("{name}.grow"), old as u64),
    )?;
    let mut values = current.into_values();
    values.extend_from_slice(extra.values());
    let grown = Tensor::matrix(rows, dim, values)?;
    store.remove(name);
    store.insert(name, grown)?;
    Ok(rows - old)
}
