use rand::Rng;

use crate::batch::Batch;
use crate::corpus::PrunedTree;
use crate::embeddings::{EmbeddingBank, EmbeddingDims};
use crate::error::{Error, Result};
use crate::nn::{dropout, Linear, LstmLayer, Mode};
use crate::tensor::{Graph, NodeId, ParamStore};

use super::{split_steps, token_features, ReModelConfig};

/// BiLSTM encoder followed by GCN layers over the pruned dependency tree,
/// pooled over the sentence, subject and object.
#[derive(Clone, Debug)]
pub struct CgcnMini {
    forward_lstm: LstmLayer,
    backward_lstm: LstmLayer,
    gcn: Vec<Linear>,
    output: Linear,
    dropout: f64,
}

/// Degree-normalized aggregation entries `(i, j, 1/d_i)` for every kept
/// pair `i ~ j` (self-loops included), with node `t` mapped to column
/// `offset + rank of t among kept nodes`.
pub fn gcn_entries(tree: &PrunedTree, offset: usize) -> Vec<(usize, usize, f64)> {
    let kept = tree.kept_indices();
    let mut entries = Vec::new();
    for (pi, &i) in kept.iter().enumerate() {
        let w = 1.0 / tree.degree(i) as f64;
        for (pj, &j) in kept.iter().enumerate() {
            if tree.adjacent(i, j) {
                entries.push((offset + pi, offset + pj, w));
            }
        }
    }
    entries
}

impl CgcnMini {
    pub(crate) fn new(
        store: &mut ParamStore,
        dims: EmbeddingDims,
        config: &ReModelConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = config.hidden_dim;
        let input = dims.word + 2 * dims.attribute;
        let forward_lstm = LstmLayer::new(store, "re.bilstm.fwd", input, h, rng)?;
        let backward_lstm = LstmLayer::new(store, "re.bilstm.bwd", input, h, rng)?;
        let mut gcn = Vec::with_capacity(config.num_layers);
        let mut width = 2 * h;
        for l in 0..config.num_layers {
            gcn.push(Linear::new(store, &format!("re.gcn{l}"), width, h, rng)?);
            width = h;
        }
        Ok(Self {
            forward_lstm,
            backward_lstm,
            gcn,
            output: Linear::new(store, "re.out", 3 * h, dims.relation, rng)?,
            dropout: config.dropout_rate,
        })
    }

    pub(crate) fn predict(&self, g: &mut Graph, batch: &Batch, bank: &EmbeddingBank, mode: &mut Mode) -> Result<NodeId> {
        let trees = batch
            .trees
            .as_ref()
            .ok_or_else(|| Error::Input("batch carries no pruned dependency trees".into()))?;
        let (steps, size) = (batch.max_len, batch.size);

        let mut columns = Vec::new();
        let mut entries = Vec::new();
        let mut sentence = Vec::with_capacity(size);
        let mut subject = Vec::with_capacity(size);
        let mut object = Vec::with_capacity(size);
        for (b, tree) in trees.iter().enumerate() {
            let kept = tree.kept_indices();
            if kept.is_empty() {
                return Err(Error::Input(format!("empty pruned graph for batch item {b}")));
            }
            let offset = columns.len();
            entries.extend(gcn_entries(tree, offset));
            let rank = |pred: &dyn Fn(usize) -> bool| -> Vec<usize> {
                kept.iter()
                    .enumerate()
                    .filter(|(_, &t)| pred(t))
                    .map(|(p, _)| offset + p)
                    .collect()
            };
            sentence.push(rank(&|_| true));
            let subj = rank(&|t| batch.subj_spans[b].contains(t));
            let obj = rank(&|t| batch.obj_spans[b].contains(t));
            if subj.is_empty() || obj.is_empty() {
                return Err(Error::Input(format!("pruned graph for batch item {b} drops an entity")));
            }
            subject.push(subj);
            object.push(obj);
            columns.extend(kept.iter().map(|&t| Some(t * size + b)));
        }

        let x = token_features(g, batch, bank, self.dropout, mode)?;
        let masks: Vec<Vec<f64>> = (0..steps).map(|t| batch.step_mask(t)).collect();
        let seq = split_steps(g, x, steps, size);
        let fwd = self.forward_lstm.run(g, &seq, &masks, false);
        let bwd = self.backward_lstm.run(g, &seq, &masks, true);
        let fwd = g.concat_cols(&fwd);
        let bwd = g.concat_cols(&bwd);
        let enc = g.concat_rows(&[fwd, bwd]);
        let enc = dropout(g, enc, self.dropout, mode);

        let mut h = g.gather_cols(enc, &columns);
        let nodes = columns.len();
        for (l, layer) in self.gcn.iter().enumerate() {
            if l > 0 {
                h = dropout(g, h, self.dropout, mode);
            }
            let mixed = g.sparse_mix(h, entries.clone(), nodes);
            let lin = layer.forward(g, mixed);
            h = g.relu(lin);
        }

        let pooled_sentence = g.segment_max(h, &sentence);
        let pooled_subject = g.segment_max(h, &subject);
        let pooled_object = g.segment_max(h, &object);
        let pooled = g.concat_rows(&[pooled_sentence, pooled_subject, pooled_object]);
        Ok(self.output.forward(g, pooled))
    }
}
