//! Relation extraction: a sentence encoder `f` producing `r_hat`, scored
//! against every relation embedding as `logits = R^T r_hat + b_re`.

mod cgcn;
mod palstm;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::embeddings::EmbeddingBank;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Graph, Matrix, NodeId, ParamStore};

pub use cgcn::{gcn_entries, CgcnMini};
pub use palstm::PalstmMini;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "palstm-mini")]
    PalstmMini,
    #[serde(rename = "cgcn-mini")]
    CgcnMini,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::PalstmMini => "palstm-mini",
            Architecture::CgcnMini => "cgcn-mini",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "palstm-mini" | "palstm" => Ok(Architecture::PalstmMini),
            "cgcn-mini" | "cgcn" => Ok(Architecture::CgcnMini),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReModelConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    /// Recurrent layers for palstm-mini, GCN layers for cgcn-mini.
    pub num_layers: usize,
    pub dropout_rate: f64,
    /// Pruning distance for cgcn-mini; `None` keeps the full tree.
    pub prune_k: Option<usize>,
    pub attention_dim: usize,
}

impl Default for ReModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::PalstmMini,
            hidden_dim: 50,
            num_layers: 1,
            dropout_rate: 0.0,
            prune_k: Some(1),
            attention_dim: 50,
        }
    }
}

impl ReModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.architecture == Architecture::PalstmMini && self.attention_dim == 0 {
            return Err(Error::Config("attention_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Plain-matrix result of an evaluation forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ReOutput {
    pub r_hat: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
}

/// Graph nodes produced by a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ReNodes {
    pub r_hat: NodeId,
    pub logits: NodeId,
}

#[derive(Clone, Debug)]
enum Encoder {
    Palstm(PalstmMini),
    Cgcn(CgcnMini),
}

#[derive(Clone, Debug)]
pub struct ReModel {
    config: ReModelConfig,
    input_dim: usize,
    relation_dim: usize,
    encoder: Encoder,
}

impl ReModel {
    /// Register the encoder's parameters in `store` under `re.*`.
    pub fn new(
        store: &mut ParamStore,
        bank: &EmbeddingBank,
        config: &ReModelConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let dims = bank.dims();
        if dims.word == 0 || dims.relation == 0 || dims.attribute == 0 {
            return Err(Error::Shape("embedding dimensions must be positive".into()));
        }
        let input_dim = dims.word + 2 * dims.attribute;
        let encoder = match config.architecture {
            Architecture::PalstmMini => Encoder::Palstm(PalstmMini::new(store, dims, config, rng)?),
            Architecture::CgcnMini => Encoder::Cgcn(CgcnMini::new(store, dims, config, rng)?),
        };
        Ok(Self {
            config: config.clone(),
            input_dim,
            relation_dim: dims.relation,
            encoder,
        })
    }

    pub fn config(&self) -> &ReModelConfig {
        &self.config
    }

    fn check_bank(&self, bank: &EmbeddingBank) -> Result<()> {
        let dims = bank.dims();
        if dims.word + 2 * dims.attribute != self.input_dim || dims.relation != self.relation_dim {
            return Err(Error::Shape(format!(
                "model built for input {} / relation {}, bank has {} / {}",
                self.input_dim,
                self.relation_dim,
                dims.word + 2 * dims.attribute,
                dims.relation
            )));
        }
        Ok(())
    }

    /// The encoder `f`: one `D_r` column per sentence.
    pub fn predict(&self, g: &mut Graph, batch: &Batch, bank: &EmbeddingBank, mode: &mut Mode) -> Result<NodeId> {
        self.check_bank(bank)?;
        let n = batch.size * batch.max_len;
        if [&batch.pos, &batch.ner, &batch.so, &batch.oo].iter().any(|f| f.len() != n) {
            return Err(Error::Input("batch is missing token feature annotations".into()));
        }
        match &self.encoder {
            Encoder::Palstm(m) => m.predict(g, batch, bank, mode),
            Encoder::Cgcn(m) => m.predict(g, batch, bank, mode),
        }
    }

    pub fn forward(&self, g: &mut Graph, batch: &Batch, bank: &EmbeddingBank, mode: &mut Mode) -> Result<ReNodes> {
        let r_hat = self.predict(g, batch, bank, mode)?;
        let logits = relation_logits(g, bank, r_hat);
        Ok(ReNodes { r_hat, logits })
    }

    /// Attention weights (`T x B`) for palstm-mini; `None` for other encoders.
    pub fn attention(&self, store: &ParamStore, batch: &Batch, bank: &EmbeddingBank) -> Result<Option<Matrix>> {
        match &self.encoder {
            Encoder::Palstm(m) => {
                self.check_bank(bank)?;
                let mut g = Graph::new(store);
                let (_, alpha) = m.encode(&mut g, batch, bank, &mut Mode::eval())?;
                Ok(Some(g.value(alpha).clone()))
            }
            Encoder::Cgcn(_) => Ok(None),
        }
    }
}

/// `R^T r_hat + b_re`.
pub fn relation_logits(g: &mut Graph, bank: &EmbeddingBank, r_hat: NodeId) -> NodeId {
    let r = g.param(bank.relations);
    let b = g.param(bank.re_bias);
    let raw = g.matmul_tn(r, r_hat);
    g.add_bias(raw, b)
}

/// Evaluation-mode forward pass.
pub fn forward_re(store: &ParamStore, model: &ReModel, bank: &EmbeddingBank, batch: &Batch) -> Result<ReOutput> {
    let mut g = Graph::new(store);
    let nodes = model.forward(&mut g, batch, bank, &mut Mode::eval())?;
    let logits = g.value(nodes.logits).clone();
    Ok(ReOutput {
        r_hat: g.value(nodes.r_hat).clone(),
        probs: crate::tensor::softmax_columns(&logits),
        logits,
    })
}

/// `[word; pos; ner]` embeddings for every time-major token slot.
pub(crate) fn token_features(
    g: &mut Graph,
    batch: &Batch,
    bank: &EmbeddingBank,
    dropout: f64,
    mode: &mut Mode,
) -> Result<NodeId> {
    let words = bank.embed_tokens(g, &batch.tokens)?;
    let pos = bank.embed_attributes(g, &batch.pos)?;
    let ner = bank.embed_attributes(g, &batch.ner)?;
    let x = g.concat_rows(&[words, pos, ner]);
    Ok(crate::nn::dropout(g, x, dropout, mode))
}

pub(crate) fn split_steps(g: &mut Graph, x: NodeId, steps: usize, size: usize) -> Vec<NodeId> {
    (0..steps).map(|t| g.slice_cols(x, t * size, size)).collect()
}
