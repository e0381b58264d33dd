use serde::{Deserialize, Serialize};

use super::code::{check_dropout, infer_embed_and_hidden};
use super::gru::{bigru, bind_bigru, init_bigru, GruVars};
use super::vocab::{tokenize_text, PAD_ID};
use super::{EncoderError, Vocab};
use crate::autodiff::{derive_seed, DropoutMask, Graph, ParameterStore, Real, Var};

pub const TEXT_PREFIX: &str = "text";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
    pub max_len: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            dropout_p: 0.1,
            max_len: 64,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return Err(EncoderError::Config(
                "text encoder dimensions and max_len must be at least 1".into(),
            ));
        }
        check_dropout(self.dropout_p)
    }

    pub fn width(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn infer<T: Real>(
        store: &ParameterStore<T>,
        dropout_p: f64,
        max_len: usize,
    ) -> Result<(usize, Self), EncoderError> {
        let (vocab, embed_dim, hidden_dim) = infer_embed_and_hidden(store, TEXT_PREFIX)?;
        let cfg = Self {
            embed_dim,
            hidden_dim,
            dropout_p,
            max_len,
        };
        cfg.validate()?;
        Ok((vocab, cfg))
    }
}

#[derive(Debug, Clone)]
pub struct TextVars {
    embed: Var,
    gru: [GruVars; 2],
}

/// Comment encoder: embedding, Bi-GRU, mean over positions, dropout on the pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub vocab: Vocab,
}

impl TextEncoder {
    pub fn new(config: TextEncoderConfig, vocab: Vocab) -> Result<Self, EncoderError> {
        config.validate()?;
        Ok(Self { config, vocab })
    }

    pub fn width(&self) -> usize {
        self.config.width()
    }

    pub fn init_params<T: Real>(&self, store: &mut ParameterStore<T>) -> Result<(), EncoderError> {
        let c = &self.config;
        store.insert_uniform(
            format!("{TEXT_PREFIX}.embed"),
            vec![self.vocab.len(), c.embed_dim],
            0.1,
        )?;
        init_bigru(
            store,
            &format!("{TEXT_PREFIX}.gru"),
            c.embed_dim,
            c.hidden_dim,
            1.0 / (c.hidden_dim as f64).sqrt(),
        )?;
        Ok(())
    }

    /// Token ids of a comment, truncated to `max_len`; an empty comment is the pad token.
    pub fn prepare(&self, comment: &str) -> Vec<usize> {
        self.prepare_tokens(&tokenize_text(comment))
    }

    pub fn prepare_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut ids = self
            .vocab
            .ids(&tokens[..tokens.len().min(self.config.max_len)]);
        if ids.is_empty() {
            ids.push(PAD_ID);
        }
        ids
    }

    pub fn bind<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
    ) -> Result<TextVars, EncoderError> {
        Ok(TextVars {
            embed: g.param(store, &format!("{TEXT_PREFIX}.embed"))?,
            gru: bind_bigru(g, store, &format!("{TEXT_PREFIX}.gru"))?,
        })
    }

    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &TextVars,
        ids: &[usize],
        mask_seed: Option<u64>,
    ) -> Result<Var, EncoderError> {
        let ids: &[usize] = if ids.is_empty() { &[PAD_ID] } else { ids };
        let x = g.gather_rows(vars.embed, ids)?;
        let h = bigru(g, &vars.gru, x, self.config.hidden_dim)?;
        let mut pooled = g.mean_rows(h)?;
        if let Some(seed) = mask_seed {
            if self.config.dropout_p > 0.0 {
                let mask = DropoutMask::sample(
                    vec![1, self.width()],
                    self.config.dropout_p,
                    derive_seed(seed, "text.pool", 0),
                )?;
                pooled = g.dropout(pooled, &mask)?;
            }
        }
        Ok(pooled)
    }

    pub fn embed<T: Real>(
        &self,
        store: &ParameterStore<T>,
        comment: &str,
        mask_seed: Option<u64>,
    ) -> Result<Vec<T>, EncoderError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, store)?;
        let v = self.encode(&mut g, &vars, &self.prepare(comment), mask_seed)?;
        Ok(g.value(v).values().to_vec())
    }
}
