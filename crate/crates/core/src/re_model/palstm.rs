use rand::Rng;

use crate::batch::Batch;
use crate::embeddings::{EmbeddingBank, EmbeddingDims};
use crate::error::Result;
use crate::nn::{dropout, glorot, Linear, LstmLayer, Mode};
use crate::tensor::{Graph, Matrix, NodeId, ParamId, ParamStore};

use super::{split_steps, token_features, ReModelConfig};

/// Unidirectional LSTM with position-aware additive attention.
///
/// Score for token `t`: `v . tanh(W_h h_t + W_q h_final + W_p [so_t; oo_t] + b)`.
#[derive(Clone, Debug)]
pub struct PalstmMini {
    layers: Vec<LstmLayer>,
    w_h: ParamId,
    w_q: ParamId,
    w_p: ParamId,
    b_att: ParamId,
    v_att: ParamId,
    output: Linear,
    dropout: f64,
}

impl PalstmMini {
    pub(crate) fn new(
        store: &mut ParamStore,
        dims: EmbeddingDims,
        config: &ReModelConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = config.hidden_dim;
        let a = config.attention_dim;
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut input = dims.word + 2 * dims.attribute;
        for l in 0..config.num_layers {
            layers.push(LstmLayer::new(store, &format!("re.lstm{l}"), input, h, rng)?);
            input = h;
        }
        Ok(Self {
            layers,
            w_h: store.add("re.att.w_h", glorot(a, h, rng))?,
            w_q: store.add("re.att.w_q", glorot(a, h, rng))?,
            w_p: store.add("re.att.w_p", glorot(a, 2 * dims.attribute, rng))?,
            b_att: store.add("re.att.bias", Matrix::zeros((a, 1)))?,
            v_att: store.add("re.att.v", glorot(1, a, rng))?,
            output: Linear::new(store, "re.out", h, dims.relation, rng)?,
            dropout: config.dropout_rate,
        })
    }

    pub(crate) fn predict(&self, g: &mut Graph, batch: &Batch, bank: &EmbeddingBank, mode: &mut Mode) -> Result<NodeId> {
        Ok(self.encode(g, batch, bank, mode)?.0)
    }

    /// Returns `(r_hat, attention)` with attention shaped `T x B`.
    pub(crate) fn encode(
        &self,
        g: &mut Graph,
        batch: &Batch,
        bank: &EmbeddingBank,
        mode: &mut Mode,
    ) -> Result<(NodeId, NodeId)> {
        let (steps, size) = (batch.max_len, batch.size);
        let x = token_features(g, batch, bank, self.dropout, mode)?;
        let masks: Vec<Vec<f64>> = (0..steps).map(|t| batch.step_mask(t)).collect();
        let mut seq = split_steps(g, x, steps, size);
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                seq = seq.into_iter().map(|s| dropout(g, s, self.dropout, mode)).collect();
            }
            seq = layer.run(g, &seq, &masks, false);
        }
        // Masked steps carry state forward, so the last step already holds
        // every sentence's final hidden state.
        let h_final = *seq.last().expect("batch has at least one step");
        let h_all = g.concat_cols(&seq);

        let so = bank.embed_attributes(g, &batch.so)?;
        let oo = bank.embed_attributes(g, &batch.oo)?;
        let tags = g.concat_rows(&[so, oo]);

        let w_h = g.param(self.w_h);
        let w_q = g.param(self.w_q);
        let w_p = g.param(self.w_p);
        let b_att = g.param(self.b_att);
        let v_att = g.param(self.v_att);
        let from_h = g.matmul(w_h, h_all);
        let query = g.matmul(w_q, h_final);
        let tile: Vec<Option<usize>> = (0..steps * size).map(|k| Some(k % size)).collect();
        let query = g.gather_cols(query, &tile);
        let from_tags = g.matmul(w_p, tags);
        let pre = g.sum(&[from_h, query, from_tags]);
        let pre = g.add_bias(pre, b_att);
        let act = g.tanh(pre);
        let scores = g.matmul(v_att, act);
        let scores = g.reshape(scores, steps, size);
        let alpha = g.masked_softmax(scores, &batch.mask);

        let flat = g.reshape(alpha, 1, steps * size);
        let weighted = g.scale_cols(h_all, flat);
        let entries = (0..steps * size).map(|k| (k % size, k, 1.0)).collect();
        let context = g.sparse_mix(weighted, entries, size);
        Ok((self.output.forward(g, context), alpha))
    }
}
