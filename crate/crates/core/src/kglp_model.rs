//! Link prediction: merge `(subject type, relation)` into `z`, then score
//! every candidate object type as `sigmoid(V_dom^T z + b_kglp)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::corpus::AnswerSets;
use crate::embeddings::EmbeddingBank;
use crate::error::{Error, Result};
use crate::nn::{dropout, glorot, Linear, Mode};
use crate::tensor::{ConvGeometry, Graph, Matrix, NodeId, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    Conve,
    Distmult,
}

impl Merge {
    pub fn as_str(self) -> &'static str {
        match self {
            Merge::Conve => "conve",
            Merge::Distmult => "distmult",
        }
    }
}

impl fmt::Display for Merge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Merge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conve" => Ok(Merge::Conve),
            "distmult" => Ok(Merge::Distmult),
            other => Err(Error::Config(format!("unknown merge `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KglpModelConfig {
    pub merge: Merge,
    pub conve_filters: usize,
    pub conve_kernel: usize,
    pub reshape_rows: usize,
    pub reshape_cols: usize,
    /// Dropout on the flattened feature map.
    pub dropout_rate: f64,
}

impl Default for KglpModelConfig {
    fn default() -> Self {
        Self {
            merge: Merge::Conve,
            conve_filters: 4,
            conve_kernel: 3,
            reshape_rows: 5,
            reshape_cols: 10,
            dropout_rate: 0.0,
        }
    }
}

impl KglpModelConfig {
    pub fn validate(&self, word_dim: usize, relation_dim: usize) -> Result<()> {
        if word_dim != relation_dim {
            return Err(Error::Config(format!(
                "merge needs equal word and relation sizes, got {word_dim} and {relation_dim}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("kglp dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.merge == Merge::Conve {
            if self.reshape_rows * self.reshape_cols != word_dim {
                return Err(Error::Config(format!(
                    "reshape {}x{} does not factor embedding size {word_dim}",
                    self.reshape_rows, self.reshape_cols
                )));
            }
            if self.conve_filters == 0 || self.conve_kernel == 0 {
                return Err(Error::Config("conve needs at least one filter of size >= 1".into()));
            }
            if self.conve_kernel > 2 * self.reshape_rows || self.conve_kernel > self.reshape_cols {
                return Err(Error::Config(format!(
                    "kernel {} does not fit the stacked {}x{} image",
                    self.conve_kernel,
                    2 * self.reshape_rows,
                    self.reshape_cols
                )));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            height: 2 * self.reshape_rows,
            width: self.reshape_cols,
            kernel: self.conve_kernel,
            filters: self.conve_filters,
        }
    }
}

#[derive(Clone, Debug)]
struct Conve {
    kernel: ParamId,
    conv_bias: ParamId,
    projection: Linear,
    geometry: ConvGeometry,
    dropout: f64,
}

#[derive(Clone, Debug)]
pub struct KglpModel {
    config: KglpModelConfig,
    dim: usize,
    conve: Option<Conve>,
}

/// Plain-matrix result of an evaluation forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct KglpOutput {
    pub z: Matrix,
    pub obj_probs: Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct KglpNodes {
    pub z: NodeId,
    pub logits: NodeId,
}

impl KglpModel {
    pub fn new(store: &mut ParamStore, bank: &EmbeddingBank, config: &KglpModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let dims = bank.dims();
        config.validate(dims.word, dims.relation)?;
        let conve = match config.merge {
            Merge::Distmult => None,
            Merge::Conve => {
                let geometry = config.geometry();
                let k2 = geometry.kernel * geometry.kernel;
                Some(Conve {
                    kernel: store.add("kglp.conv.kernel", glorot(geometry.filters, k2, rng))?,
                    conv_bias: store.add("kglp.conv.bias", Matrix::zeros((geometry.filters, 1)))?,
                    projection: Linear::new(store, "kglp.proj", geometry.out_len(), dims.word, rng)?,
                    geometry,
                    dropout: config.dropout_rate,
                })
            }
        };
        Ok(Self {
            config: config.clone(),
            dim: dims.word,
            conve,
        })
    }

    pub fn config(&self) -> &KglpModelConfig {
        &self.config
    }

    /// The merge `g(s, r)` applied column-wise to `D x B` inputs.
    pub fn merge(&self, g: &mut Graph, s: NodeId, r: NodeId, mode: &mut Mode) -> Result<NodeId> {
        let (sr, sc) = g.shape(s);
        let (rr, rc) = g.shape(r);
        if sr != self.dim || rr != self.dim || sc != rc {
            return Err(Error::Shape(format!(
                "merge expects two {} x B inputs, got {sr}x{sc} and {rr}x{rc}",
                self.dim
            )));
        }
        Ok(match &self.conve {
            None => merge_distmult(g, s, r),
            Some(c) => {
                let kernel = g.param(c.kernel);
                let bias = g.param(c.conv_bias);
                let features = merge_conve_features(g, s, r, kernel, bias, c.geometry);
                let features = dropout(g, features, c.dropout, mode);
                let z = c.projection.forward(g, features);
                g.relu(z)
            }
        })
    }

    /// Merge the given relation representations (`D_r x B`) with each
    /// sentence's subject-type embedding and score the candidate domain.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        batch: &Batch,
        bank: &EmbeddingBank,
        answers: &AnswerSets,
        relation: NodeId,
        mode: &mut Mode,
    ) -> Result<KglpNodes> {
        let s = bank.embed_tokens(g, &batch.subj_types)?;
        let z = self.merge(g, s, relation, mode)?;
        let logits = score_logits(g, bank, answers, z)?;
        Ok(KglpNodes { z, logits })
    }

    /// The merge gives the same output for equal inputs in this mode.
    fn merge_is_pure(&self, mode: &Mode) -> bool {
        self.conve.as_ref().is_none_or(|c| c.dropout <= 0.0) || !mode.is_training()
    }

    /// Distinct `(subject type, relation)` queries of the batch in order of
    /// first appearance, plus each sentence's query column. Without
    /// dropout every sentence's column is one of these; otherwise each
    /// sentence keeps its own column.
    fn gold_queries(&self, batch: &Batch, mode: &Mode) -> (Vec<usize>, Vec<usize>, Vec<Option<usize>>) {
        if !self.merge_is_pure(mode) {
            return (batch.subj_types.clone(), batch.relations.clone(), (0..batch.size).map(Some).collect());
        }
        let mut seen = HashMap::new();
        let (mut subjects, mut relations) = (Vec::new(), Vec::new());
        let column = batch
            .subj_types
            .iter()
            .zip(&batch.relations)
            .map(|(&s, &r)| {
                let next = subjects.len();
                let c = *seen.entry((s, r)).or_insert(next);
                if c == next {
                    subjects.push(s);
                    relations.push(r);
                }
                Some(c)
            })
            .collect();
        (subjects, relations, column)
    }

    /// Score both the true relation embeddings and `r_hat` in one pass.
    /// Returns `(true-relation logits, r_hat logits)`, each `|dom| x B`.
    pub fn forward_pair(
        &self,
        g: &mut Graph,
        batch: &Batch,
        bank: &EmbeddingBank,
        answers: &AnswerSets,
        r_hat: NodeId,
        mode: &mut Mode,
    ) -> Result<(NodeId, NodeId)> {
        let b = batch.size;
        let (gold_subjects, gold_relations, column) = self.gold_queries(batch, mode);
        let u = gold_subjects.len();
        let subjects: Vec<usize> = gold_subjects.iter().chain(&batch.subj_types).copied().collect();
        let s = bank.embed_tokens(g, &subjects)?;
        let r_true = bank.embed_relations(g, &gold_relations)?;
        let r = g.concat_cols(&[r_true, r_hat]);
        let z = self.merge(g, s, r, mode)?;
        let logits = score_logits(g, bank, answers, z)?;
        let gold = g.slice_cols(logits, 0, u);
        Ok((g.gather_cols(gold, &column), g.slice_cols(logits, u, b)))
    }

    /// KGLP forward driven by the true relation embeddings.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &Batch,
        bank: &EmbeddingBank,
        answers: &AnswerSets,
        mode: &mut Mode,
    ) -> Result<KglpNodes> {
        let (subjects, relations, column) = self.gold_queries(batch, mode);
        let s = bank.embed_tokens(g, &subjects)?;
        let r = bank.embed_relations(g, &relations)?;
        let z = self.merge(g, s, r, mode)?;
        let logits = score_logits(g, bank, answers, z)?;
        Ok(KglpNodes {
            z: g.gather_cols(z, &column),
            logits: g.gather_cols(logits, &column),
        })
    }
}

/// Stack `s` over `r` (each read row-major as a grid), convolve and rectify.
/// Returns the flattened feature map, `filters * out_h * out_w` rows.
pub fn merge_conve_features(
    g: &mut Graph,
    s: NodeId,
    r: NodeId,
    kernel: NodeId,
    bias: NodeId,
    geometry: ConvGeometry,
) -> NodeId {
    // Row-major grids stacked vertically flatten to the plain concatenation.
    let image = g.concat_rows(&[s, r]);
    let conv = g.conv2d(image, kernel, bias, geometry);
    g.relu(conv)
}

pub fn merge_distmult(g: &mut Graph, s: NodeId, r: NodeId) -> NodeId {
    g.mul(s, r)
}

/// `V_dom^T z + b_kglp`.
pub fn score_logits(g: &mut Graph, bank: &EmbeddingBank, answers: &AnswerSets, z: NodeId) -> Result<NodeId> {
    let v = bank.valid_object_matrix(g, answers)?;
    let b = g.param(bank.kglp_bias);
    let raw = g.matmul_tn(v, z);
    Ok(g.add_bias(raw, b))
}

pub fn score_objects(store: &ParamStore, bank: &EmbeddingBank, answers: &AnswerSets, z: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new(store);
    let z = g.input(z.clone());
    let logits = score_logits(&mut g, bank, answers, z)?;
    Ok(g.value(logits).mapv(crate::tensor::sigmoid))
}

/// Evaluation-mode forward with true relation embeddings.
pub fn forward_kglp(
    store: &ParamStore,
    model: &KglpModel,
    bank: &EmbeddingBank,
    answers: &AnswerSets,
    batch: &Batch,
) -> Result<KglpOutput> {
    let mut g = Graph::new(store);
    let nodes = model.forward(&mut g, batch, bank, answers, &mut Mode::eval())?;
    Ok(KglpOutput {
        z: g.value(nodes.z).clone(),
        obj_probs: g.value(nodes.logits).mapv(crate::tensor::sigmoid),
    })
}
