use serde::{Deserialize, Serialize};

use super::gru::{bigru, bind_bigru, init_bigru, GruVars};
use super::{EncoderError, Vocab};
use crate::autodiff::{
    derive_seed, AutodiffError, DropoutMask, Graph, ParameterStore, Real, Tensor, Var,
};
use crate::java::CodeGraph;

pub const CODE_PREFIX: &str = "code";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeEncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gcn_layers: usize,
    pub dropout_p: f64,
}

impl Default for CodeEncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            gcn_layers: 4,
            dropout_p: 0.1,
        }
    }
}

impl CodeEncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.gcn_layers == 0 {
            return Err(EncoderError::Config(
                "code encoder dimensions and layer count must be at least 1".into(),
            ));
        }
        check_dropout(self.dropout_p)
    }

    /// Output width (forward and backward states side by side).
    pub fn width(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Recovers the widths from stored parameter shapes.
    pub fn infer<T: Real>(
        store: &ParameterStore<T>,
        dropout_p: f64,
    ) -> Result<(usize, Self), EncoderError> {
        let (vocab, embed_dim, hidden_dim) = infer_embed_and_hidden(store, CODE_PREFIX)?;
        let gcn_layers = (0..)
            .take_while(|l| store.contains(&format!("{CODE_PREFIX}.gcn.{l}.w")))
            .count();
        let cfg = Self {
            embed_dim,
            hidden_dim,
            gcn_layers,
            dropout_p,
        };
        cfg.validate()?;
        Ok((vocab, cfg))
    }
}

pub(crate) fn check_dropout(p: f64) -> Result<(), EncoderError> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(EncoderError::Config(format!(
            "dropout must lie in [0, 1), got {p}"
        )))
    }
}

pub(crate) fn infer_embed_and_hidden<T: Real>(
    store: &ParameterStore<T>,
    prefix: &str,
) -> Result<(usize, usize, usize), EncoderError> {
    let shape = |name: String| {
        store
            .get(&name)
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| EncoderError::Config(format!("checkpoint lacks `{name}`")))
    };
    let embed = shape(format!("{prefix}.embed"))?;
    let w_h = shape(format!("{prefix}.gru.fwd.w_h"))?;
    match (embed.as_slice(), w_h.as_slice()) {
        ([v, e], [h, h3]) if *h3 == 3 * h => Ok((*v, *e, *h)),
        _ => Err(EncoderError::Config(format!(
            "unexpected {prefix} shapes: embed {embed:?}, recurrent {w_h:?}"
        ))),
    }
}

/// Embedding ids plus the row-normalized relation matrix of one fragment.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeInput {
    pub ids: Vec<usize>,
    pub relation: Vec<f64>,
}

impl CodeInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CodeVars {
    embed: Var,
    gru: [GruVars; 2],
    gcn: Vec<(Var, Var)>,
}

/// Vector and attention weights of one encoding.
#[derive(Debug, Clone, Copy)]
pub struct CodeOutput {
    /// 1 × 2·hidden.
    pub vector: Var,
    /// n × 1.
    pub attention: Var,
}

/// Graph code encoder: embedding, Bi-GRU over the node sequence, a GCN stack
/// and retrieval attention that pools the Bi-GRU states.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeEncoder {
    pub config: CodeEncoderConfig,
    pub vocab: Vocab,
}

impl CodeEncoder {
    pub fn new(config: CodeEncoderConfig, vocab: Vocab) -> Result<Self, EncoderError> {
        config.validate()?;
        Ok(Self { config, vocab })
    }

    pub fn width(&self) -> usize {
        self.config.width()
    }

    /// Adds freshly initialized `code.*` parameters.
    pub fn init_params<T: Real>(&self, store: &mut ParameterStore<T>) -> Result<(), EncoderError> {
        let c = &self.config;
        let w = c.width();
        store.insert_uniform(
            format!("{CODE_PREFIX}.embed"),
            vec![self.vocab.len(), c.embed_dim],
            EMBED_BOUND,
        )?;
        init_bigru(
            store,
            &format!("{CODE_PREFIX}.gru"),
            c.embed_dim,
            c.hidden_dim,
            1.0 / (c.hidden_dim as f64).sqrt(),
        )?;
        let bound = 1.0 / (w as f64).sqrt();
        for l in 0..c.gcn_layers {
            store.insert_uniform(format!("{CODE_PREFIX}.gcn.{l}.w"), vec![w, w], bound)?;
            store.insert_uniform(format!("{CODE_PREFIX}.gcn.{l}.b"), vec![w], bound)?;
        }
        Ok(())
    }

    pub fn prepare(&self, graph: &CodeGraph) -> CodeInput {
        CodeInput {
            ids: self.vocab.ids(graph.labels()),
            relation: graph.row_normalized(),
        }
    }

    pub fn bind<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
    ) -> Result<CodeVars, EncoderError> {
        let embed = g.param(store, &format!("{CODE_PREFIX}.embed"))?;
        let gru = bind_bigru(g, store, &format!("{CODE_PREFIX}.gru"))?;
        let gcn = (0..self.config.gcn_layers)
            .map(|l| {
                Ok((
                    g.param(store, &format!("{CODE_PREFIX}.gcn.{l}.w"))?,
                    g.param(store, &format!("{CODE_PREFIX}.gcn.{l}.b"))?,
                ))
            })
            .collect::<Result<_, AutodiffError>>()?;
        Ok(CodeVars { embed, gru, gcn })
    }

    /// Encodes one fragment. Dropout on every GCN layer output is applied
    /// only when `mask_seed` is given.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &CodeVars,
        input: &CodeInput,
        mask_seed: Option<u64>,
    ) -> Result<CodeOutput, EncoderError> {
        let n = input.len();
        if n == 0 {
            return Err(EncoderError::Config("code fragment has no nodes".into()));
        }
        let x = g.gather_rows(vars.embed, &input.ids)?;
        let h_seq = bigru(g, &vars.gru, x, self.config.hidden_dim)?;
        let relation = g.input(Tensor::from_f64(vec![n, n], &input.relation)?)?;
        let mut h = h_seq;
        for (l, &(w, b)) in vars.gcn.iter().enumerate() {
            h = gcn_layer(g, h, relation, w, b)?;
            if let Some(seed) = mask_seed {
                if self.config.dropout_p > 0.0 {
                    let mask = DropoutMask::sample(
                        vec![n, self.width()],
                        self.config.dropout_p,
                        derive_seed(seed, "code.gcn", l as u64),
                    )?;
                    h = g.dropout(h, &mask)?;
                }
            }
        }
        let (vector, attention) = retrieval_attention(g, h_seq, h)?;
        Ok(CodeOutput { vector, attention })
    }

    /// Inference-mode encoding on a private tape.
    pub fn embed<T: Real>(
        &self,
        store: &ParameterStore<T>,
        graph: &CodeGraph,
        mask_seed: Option<u64>,
    ) -> Result<Vec<T>, EncoderError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, store)?;
        let out = self.encode(&mut g, &vars, &self.prepare(graph), mask_seed)?;
        Ok(g.value(out.vector).values().to_vec())
    }
}

const EMBED_BOUND: f64 = 0.1;

/// ReLU(relation · (h W) + b).
pub fn gcn_layer<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    relation: Var,
    w: Var,
    b: Var,
) -> Result<Var, AutodiffError> {
    let hw = g.matmul(h, w)?;
    let agg = g.matmul(relation, hw)?;
    let pre = g.add_row(agg, b)?;
    g.relu(pre)
}

/// score_t = H_t · Σ_i h_i; α = softmax over t; output = Σ_t α_t H_t.
pub fn retrieval_attention<T: Real>(
    g: &mut Graph<T>,
    seq: Var,
    graph_states: Var,
) -> Result<(Var, Var), AutodiffError> {
    let pooled = g.sum_rows(graph_states)?;
    let pooled_t = g.transpose(pooled)?;
    let scores = g.matmul(seq, pooled_t)?;
    let alpha = g.softmax(scores, 0)?;
    let alpha_t = g.transpose(alpha)?;
    let out = g.matmul(alpha_t, seq)?;
    Ok((out, alpha))
}
