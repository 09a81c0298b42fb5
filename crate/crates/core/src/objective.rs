//! The three loss terms and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::corpus::AnswerSets;
use crate::embeddings::EmbeddingBank;
use crate::error::{Error, Result};
use crate::kglp_model::KglpModel;
use crate::nn::Mode;
use crate::re_model::ReNodes;
use crate::tensor::{Graph, Matrix, NodeId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Divide by the number of contributing sentences.
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReLossKind {
    /// Softmax cross-entropy over relations.
    #[default]
    Softmax,
    /// Independent sigmoid per relation against the one-hot gold vector.
    Binary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_re: f64,
    pub l_kglp: f64,
    pub l_coupling: f64,
    pub l_joint: f64,
    pub lambda_kglp: f64,
    pub lambda_coupling: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_re, self.l_kglp, self.l_coupling, self.l_joint]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<(&'static str, f64)> {
        [
            ("l_re", self.l_re),
            ("l_kglp", self.l_kglp),
            ("l_coupling", self.l_coupling),
            ("l_joint", self.l_joint),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda_kglp: f64,
    pub lambda_coupling: f64,
    pub reduction: Reduction,
    pub re_loss: ReLossKind,
    /// Build the auxiliary terms even when their weight is zero. Only for
    /// timing diagnostics: it changes nothing numerically but costs time.
    pub force_aux_graph: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_kglp: 0.3,
            lambda_coupling: 0.3,
            reduction: Reduction::Mean,
            re_loss: ReLossKind::Softmax,
            force_aux_graph: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambdas(self.lambda_kglp, self.lambda_coupling)
    }

    pub fn needs_kglp(&self) -> bool {
        self.lambda_kglp > 0.0 || self.force_aux_graph
    }

    pub fn needs_coupling(&self) -> bool {
        self.lambda_coupling > 0.0 || self.force_aux_graph
    }
}

fn check_lambdas(lambda_kglp: f64, lambda_coupling: f64) -> Result<()> {
    for (name, v) in [("lambda_kglp", lambda_kglp), ("lambda_coupling", lambda_coupling)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    Ok(())
}

fn reduce(weights: Vec<f64>, reduction: Reduction) -> Vec<f64> {
    match reduction {
        Reduction::Sum => weights,
        Reduction::Mean => {
            let n = weights.iter().filter(|&&w| w > 0.0).count();
            if n == 0 {
                weights
            } else {
                weights.into_iter().map(|w| w / n as f64).collect()
            }
        }
    }
}

/// RE loss over every sentence of the batch; `logits` is `N_r x B`.
pub fn loss_re(g: &mut Graph, batch: &Batch, logits: NodeId, reduction: Reduction, kind: ReLossKind) -> NodeId {
    let weights = reduce(vec![1.0; batch.size], reduction);
    match kind {
        ReLossKind::Softmax => g.softmax_xent(logits, &batch.relations, &weights),
        ReLossKind::Binary => {
            let rows = g.shape(logits).0;
            let mut targets = Matrix::zeros((rows, batch.size));
            for (b, &r) in batch.relations.iter().enumerate() {
                targets[[r, b]] = 1.0;
            }
            g.bce_logits(logits, &targets, &weights)
        }
    }
}

/// Binary cross-entropy of candidate logits (`|dom| x B`) against the
/// batch's multi-hot targets, over KG-included sentences only.
pub fn loss_kglp(g: &mut Graph, batch: &Batch, logits: NodeId, reduction: Reduction) -> Result<NodeId> {
    let targets = batch
        .targets
        .as_ref()
        .ok_or_else(|| Error::Input("batch was built without answer sets".into()))?;
    if targets.nrows() == 0 {
        return Err(Error::Config("empty candidate domain".into()));
    }
    if g.shape(logits) != targets.dim() {
        return Err(Error::Shape(format!(
            "kglp logits {:?} do not match targets {:?}",
            g.shape(logits),
            targets.dim()
        )));
    }
    let weights = reduce(batch.kg_weights.clone(), reduction);
    Ok(g.bce_logits(logits, targets, &weights))
}

/// The KGLP loss with the RE prediction `r_hat` standing in for the true
/// relation embedding; gradients reach the encoder, the merge and the bank.
#[allow(clippy::too_many_arguments)]
pub fn loss_coupling(
    g: &mut Graph,
    batch: &Batch,
    r_hat: NodeId,
    kglp: &KglpModel,
    bank: &EmbeddingBank,
    answers: &AnswerSets,
    reduction: Reduction,
    mode: &mut Mode,
) -> Result<NodeId> {
    check_r_hat(g, r_hat, bank)?;
    let nodes = kglp.forward_with(g, batch, bank, answers, r_hat, mode)?;
    loss_kglp(g, batch, nodes.logits, reduction)
}

fn check_r_hat(g: &Graph, r_hat: NodeId, bank: &EmbeddingBank) -> Result<()> {
    let dr = g.shape(r_hat).0;
    if dr != bank.dims().relation {
        return Err(Error::Shape(format!(
            "r_hat has {dr} rows, relation embeddings have {}",
            bank.dims().relation
        )));
    }
    Ok(())
}

/// Combine already-computed terms.
pub fn loss_joint(l_re: f64, l_kglp: f64, l_coupling: f64, lambda_kglp: f64, lambda_coupling: f64) -> Result<LossBreakdown> {
    check_lambdas(lambda_kglp, lambda_coupling)?;
    Ok(LossBreakdown {
        l_re,
        l_kglp,
        l_coupling,
        l_joint: l_re + lambda_kglp * l_kglp + lambda_coupling * l_coupling,
        lambda_kglp,
        lambda_coupling,
    })
}

/// Graph nodes of one joint objective evaluation. Terms with zero weight
/// are not built unless `force_aux_graph` is set.
#[derive(Clone, Copy, Debug)]
pub struct JointNodes {
    pub re: NodeId,
    pub kglp: Option<NodeId>,
    pub coupling: Option<NodeId>,
    pub joint: NodeId,
}

impl JointNodes {
    pub fn breakdown(&self, g: &Graph, config: &ObjectiveConfig) -> LossBreakdown {
        let l_re = g.scalar(self.re);
        let l_kglp = self.kglp.map_or(0.0, |n| g.scalar(n));
        let l_coupling = self.coupling.map_or(0.0, |n| g.scalar(n));
        LossBreakdown {
            l_re,
            l_kglp,
            l_coupling,
            l_joint: g.scalar(self.joint),
            lambda_kglp: config.lambda_kglp,
            lambda_coupling: config.lambda_coupling,
        }
    }
}

/// Build `l_re + lambda_kglp * l_kglp + lambda_coupling * l_coupling`.
/// When both auxiliary terms are present their merges run as one batch.
///
/// `kglp_mode` drives dropout inside the merge and should draw from a
/// stream separate from the encoder's, so that skipping the auxiliary
/// terms leaves the encoder's randomness untouched.
#[allow(clippy::too_many_arguments)]
pub fn joint_objective(
    g: &mut Graph,
    batch: &Batch,
    re: &ReNodes,
    kglp: Option<&KglpModel>,
    bank: &EmbeddingBank,
    answers: Option<&AnswerSets>,
    config: &ObjectiveConfig,
    kglp_mode: &mut Mode,
) -> Result<JointNodes> {
    config.validate()?;
    let l_re = loss_re(g, batch, re.logits, config.reduction, config.re_loss);
    let aux = config.needs_kglp() || config.needs_coupling();
    let (kglp, answers) = match (aux, kglp, answers) {
        (false, _, _) => {
            return Ok(JointNodes {
                re: l_re,
                kglp: None,
                coupling: None,
                joint: l_re,
            })
        }
        (true, Some(k), Some(a)) => (k, a),
        _ => return Err(Error::Config("auxiliary terms need a link-prediction model and answer sets".into())),
    };
    let mut parts = vec![l_re];
    let (mut l_kglp, mut l_coupling) = (None, None);
    if config.needs_kglp() && config.needs_coupling() {
        check_r_hat(g, re.r_hat, bank)?;
        let (true_logits, hat_logits) = kglp.forward_pair(g, batch, bank, answers, re.r_hat, kglp_mode)?;
        let lk = loss_kglp(g, batch, true_logits, config.reduction)?;
        let lc = loss_kglp(g, batch, hat_logits, config.reduction)?;
        parts.push(g.scale(lk, config.lambda_kglp));
        parts.push(g.scale(lc, config.lambda_coupling));
        l_kglp = Some(lk);
        l_coupling = Some(lc);
    } else if config.needs_kglp() {
        let nodes = kglp.forward(g, batch, bank, answers, kglp_mode)?;
        let l = loss_kglp(g, batch, nodes.logits, config.reduction)?;
        parts.push(g.scale(l, config.lambda_kglp));
        l_kglp = Some(l);
    } else {
        let l = loss_coupling(g, batch, re.r_hat, kglp, bank, answers, config.reduction, kglp_mode)?;
        parts.push(g.scale(l, config.lambda_coupling));
        l_coupling = Some(l);
    }
    let joint = g.sum(&parts);
    Ok(JointNodes {
        re: l_re,
        kglp: l_kglp,
        coupling: l_coupling,
        joint,
    })
}
