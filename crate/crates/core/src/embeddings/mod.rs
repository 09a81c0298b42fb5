//! The shared lookup tables: token embeddings `V`, relation embeddings `R`,
//! attribute embeddings `A` and the two output biases. Both tasks read
//! these through the same [`ParamId`] handles, so every update made on
//! behalf of one task is seen by the other.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, NamedTensor};

use crate::corpus::{AnswerSets, Vocab, PAD};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Matrix, NodeId, ParamId, ParamStore, ParamView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    /// Token embedding size (rows of `V`).
    pub word: usize,
    /// Relation embedding size (rows of `R`).
    pub relation: usize,
    /// Attribute embedding size (rows of `A`).
    pub attribute: usize,
}

#[derive(Clone, Debug)]
pub struct EmbeddingBank {
    pub tokens: ParamId,
    pub relations: ParamId,
    pub attributes: ParamId,
    pub re_bias: ParamId,
    pub kglp_bias: ParamId,
    dims: EmbeddingDims,
    num_tokens: usize,
    num_relations: usize,
    num_attributes: usize,
    domain_len: usize,
}

pub(crate) fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

pub(crate) const INIT_SCALE: f64 = 0.1;

impl EmbeddingBank {
    /// Register the bank's tensors in `store`: `V`, `R` and `A` uniform in
    /// (-0.1, 0.1) with the PAD columns pinned at zero, biases zero.
    pub fn new(
        store: &mut ParamStore,
        vocab: &Vocab,
        domain_len: usize,
        dims: EmbeddingDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.word == 0 || dims.relation == 0 || dims.attribute == 0 {
            return Err(Error::Config("embedding sizes must be positive".into()));
        }
        if domain_len == 0 {
            return Err(Error::Config("empty candidate domain".into()));
        }
        let (nv, nr, nc) = (vocab.num_tokens(), vocab.num_relations(), vocab.num_attributes());
        let tokens = store.add("bank.V", uniform(dims.word, nv, INIT_SCALE, rng))?;
        let relations = store.add("bank.R", uniform(dims.relation, nr, INIT_SCALE, rng))?;
        let attributes = store.add("bank.A", uniform(dims.attribute, nc, INIT_SCALE, rng))?;
        let re_bias = store.add("bank.b_re", Matrix::zeros((nr, 1)))?;
        let kglp_bias = store.add("bank.b_kglp", Matrix::zeros((domain_len, 1)))?;
        store.freeze_column(tokens, PAD);
        store.freeze_column(attributes, PAD);
        Ok(Self {
            tokens,
            relations,
            attributes,
            re_bias,
            kglp_bias,
            dims,
            num_tokens: nv,
            num_relations: nr,
            num_attributes: nc,
            domain_len,
        })
    }

    pub fn dims(&self) -> EmbeddingDims {
        self.dims
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn domain_len(&self) -> usize {
        self.domain_len
    }

    fn lookup(
        g: &mut Graph,
        table: ParamId,
        name: &str,
        size: usize,
        indices: &[usize],
        pad: Option<usize>,
    ) -> Result<NodeId> {
        let cols = indices
            .iter()
            .map(|&i| {
                if i >= size {
                    Err(Error::Lookup {
                        table: name.to_string(),
                        index: i,
                        size,
                    })
                } else if Some(i) == pad {
                    Ok(None)
                } else {
                    Ok(Some(i))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let t = g.param(table);
        Ok(g.gather_cols(t, &cols))
    }

    /// `D_v x n` matrix whose column `i` is the embedding of `indices[i]`.
    pub fn embed_tokens(&self, g: &mut Graph, indices: &[usize]) -> Result<NodeId> {
        Self::lookup(g, self.tokens, "tokens", self.num_tokens, indices, Some(PAD))
    }

    /// Like [`EmbeddingBank::embed_tokens`], with `None` entries mapped to zero columns.
    pub fn embed_tokens_padded(&self, g: &mut Graph, indices: &[Option<usize>]) -> Result<NodeId> {
        let flat: Vec<usize> = indices.iter().map(|i| i.unwrap_or(PAD)).collect();
        self.embed_tokens(g, &flat)
    }

    pub fn embed_relations(&self, g: &mut Graph, indices: &[usize]) -> Result<NodeId> {
        Self::lookup(g, self.relations, "relations", self.num_relations, indices, None)
    }

    pub fn embed_attributes(&self, g: &mut Graph, indices: &[usize]) -> Result<NodeId> {
        Self::lookup(g, self.attributes, "attributes", self.num_attributes, indices, Some(PAD))
    }

    pub fn embed_attributes_padded(&self, g: &mut Graph, indices: &[Option<usize>]) -> Result<NodeId> {
        let flat: Vec<usize> = indices.iter().map(|i| i.unwrap_or(PAD)).collect();
        self.embed_attributes(g, &flat)
    }

    /// Columns of `V` for the candidate object types, in domain order.
    pub fn valid_object_matrix(&self, g: &mut Graph, answers: &AnswerSets) -> Result<NodeId> {
        let domain = answers.candidate_domain();
        if domain.is_empty() {
            return Err(Error::Config("empty candidate domain".into()));
        }
        if domain.len() != self.domain_len {
            return Err(Error::Shape(format!(
                "answer sets have {} candidates, bank was built for {}",
                domain.len(),
                self.domain_len
            )));
        }
        self.embed_tokens(g, domain)
    }

    /// Plain (graph-free) copy of one relation embedding.
    pub fn relation_vector(&self, store: &ParamStore, index: usize) -> Vec<f64> {
        store.value(self.relations).column(index).to_vec()
    }
}

/// Every learnable tensor in `store` exactly once, in registration order.
pub fn parameters(store: &ParamStore) -> Vec<ParamView<'_>> {
    store.views()
}
