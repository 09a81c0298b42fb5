//! Layers shared by the relation-extraction and link-prediction models.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::uniform;
use crate::error::Result;
use crate::tensor::{Graph, Matrix, NodeId, ParamId, ParamStore};

/// Training or evaluation mode. Dropout draws from the carried RNG in
/// training mode and is the identity in evaluation mode.
pub struct Mode<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Mode<'static> {
    pub fn eval() -> Self {
        Mode { rng: None }
    }
}

impl<'a> Mode<'a> {
    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Mode { rng: Some(rng) }
    }

    /// Whether dropout layers draw masks in this mode.
    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }
}

/// Inverted dropout with keep probability `1 - rate`.
pub fn dropout(g: &mut Graph, x: NodeId, rate: f64, mode: &mut Mode) -> NodeId {
    let Some(rng) = mode.rng.as_deref_mut() else {
        return x;
    };
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let (r, c) = g.shape(x);
    let mask = Matrix::from_shape_fn((r, c), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
    g.mul_const(x, mask)
}

pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, scale, rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), glorot(output, input, rng))?,
            bias: store.add(format!("{name}.bias"), Matrix::zeros((output, 1)))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.affine(w, x, b)
    }
}

/// Single-direction LSTM layer; gates are stacked `[input; forget; cell; output]`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), glorot(4 * hidden, input + hidden, rng))?,
            bias: store.add(format!("{name}.bias"), Matrix::zeros((4 * hidden, 1)))?,
            hidden,
        })
    }

    /// Run over `inputs` (one `input x B` node per step). Columns whose step
    /// mask is 0 carry their previous state forward unchanged, so running
    /// in reverse over right-padded batches starts every sentence from a
    /// zero state at its own last token.
    pub fn run(&self, g: &mut Graph, inputs: &[NodeId], masks: &[Vec<f64>], reverse: bool) -> Vec<NodeId> {
        let h = self.hidden;
        let cols = masks.first().map_or(0, Vec::len);
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let mut hs = g.zeros(h, cols);
        let mut cs = g.zeros(h, cols);
        let mut outputs = vec![hs; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let xh = g.concat_rows(&[inputs[t], hs]);
            let gates = g.affine(w, xh, b);
            let i = g.slice_rows(gates, 0, h);
            let i = g.sigmoid(i);
            let f = g.slice_rows(gates, h, h);
            let f = g.sigmoid(f);
            let c_hat = g.slice_rows(gates, 2 * h, h);
            let c_hat = g.tanh(c_hat);
            let o = g.slice_rows(gates, 3 * h, h);
            let o = g.sigmoid(o);
            let keep = g.mul(f, cs);
            let write = g.mul(i, c_hat);
            let c_new = g.add(keep, write);
            let squashed = g.tanh(c_new);
            let h_new = g.mul(o, squashed);
            cs = g.blend(c_new, cs, &masks[t]);
            hs = g.blend(h_new, hs, &masks[t]);
            outputs[t] = hs;
        }
        outputs
    }
}
