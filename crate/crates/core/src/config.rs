//! Run configuration, read from TOML with `[data]`, `[model]`,
//! `[objective]` and `[trainer]` sections. Missing keys take defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::embeddings::EmbeddingDims;
use crate::error::{Error, Result};
use crate::kglp_model::{KglpModelConfig, Merge};
use crate::objective::{ObjectiveConfig, ReLossKind, Reduction};
use crate::optim::OptimizerKind;
use crate::re_model::{Architecture, ReModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoCoupling,
    NoKglp,
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoCoupling, Ablation::NoKglp, Ablation::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoCoupling => "no_coupling",
            Ablation::NoKglp => "no_kglp",
            Ablation::Baseline => "baseline",
        }
    }

    /// Apply the arm's switches to the configured weights.
    pub fn lambdas(self, lambda_kglp: f64, lambda_coupling: f64) -> (f64, f64) {
        match self {
            Ablation::Full => (lambda_kglp, lambda_coupling),
            Ablation::NoCoupling => (lambda_kglp, 0.0),
            Ablation::NoKglp => (0.0, lambda_coupling),
            Ablation::Baseline => (0.0, 0.0),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_count: usize,
    pub include_negative_relation: bool,
    pub dev_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            min_count: 1,
            include_negative_relation: true,
            dev_size: 800,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub word_dim: usize,
    pub relation_dim: usize,
    pub attr_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout: f64,
    pub prune_k: usize,
    pub attention_dim: usize,
    pub merge: Merge,
    pub conve_filters: usize,
    pub conve_kernel: usize,
    pub reshape_rows: usize,
    pub reshape_cols: usize,
    pub kglp_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::PalstmMini,
            word_dim: 50,
            relation_dim: 50,
            attr_dim: 10,
            hidden_dim: 50,
            num_layers: 1,
            dropout: 0.0,
            prune_k: 1,
            attention_dim: 50,
            merge: Merge::Conve,
            conve_filters: 4,
            conve_kernel: 3,
            reshape_rows: 5,
            reshape_cols: 10,
            kglp_dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self) -> EmbeddingDims {
        EmbeddingDims {
            word: self.word_dim,
            relation: self.relation_dim,
            attribute: self.attr_dim,
        }
    }

    pub fn re(&self) -> ReModelConfig {
        ReModelConfig {
            architecture: self.architecture,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            dropout_rate: self.dropout,
            prune_k: Some(self.prune_k),
            attention_dim: self.attention_dim,
        }
    }

    pub fn kglp(&self) -> KglpModelConfig {
        KglpModelConfig {
            merge: self.merge,
            conve_filters: self.conve_filters,
            conve_kernel: self.conve_kernel,
            reshape_rows: self.reshape_rows,
            reshape_cols: self.reshape_cols,
            dropout_rate: self.kglp_dropout,
        }
    }

    /// Pruning distance the examples must be prepared with, if any.
    pub fn tree_prune_k(&self) -> Option<usize> {
        (self.architecture == Architecture::CgcnMini).then_some(self.prune_k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Shared weight for both auxiliary terms.
    pub lambda: f64,
    /// Overrides `lambda` for the link-prediction term.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_kglp: Option<f64>,
    /// Overrides `lambda` for the coupling term.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_coupling: Option<f64>,
    pub reduction: Reduction,
    pub re_loss: ReLossKind,
    pub force_aux_graph: bool,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            lambda_kglp: None,
            lambda_coupling: None,
            reduction: Reduction::Mean,
            re_loss: ReLossKind::Softmax,
            force_aux_graph: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub decay: f64,
    pub clip_norm: f64,
    pub ablation: Ablation,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            seed: 13,
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            lr: 0.5,
            decay: 0.9,
            clip_norm: 5.0,
            ablation: Ablation::Full,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveSection,
    pub trainer: TrainerSection,
}

const KEY_DOCS: &[(&str, &str, &str)] = &[
    ("data", "min_count", "tokens seen fewer times map to <UNK>; type tokens are always kept"),
    ("data", "include_negative_relation", "NoRelation sentences contribute triples to the answer sets"),
    ("data", "dev_size", "examples carved from train when no dev split exists"),
    ("model", "architecture", "palstm-mini | cgcn-mini"),
    ("model", "word_dim", "token embedding size; must equal relation_dim"),
    ("model", "relation_dim", "relation embedding size"),
    ("model", "attr_dim", "POS / NER / position-offset embedding size"),
    ("model", "hidden_dim", "LSTM and GCN width"),
    ("model", "num_layers", "LSTM layers (palstm-mini) or GCN layers (cgcn-mini)"),
    ("model", "dropout", "on input embeddings, between stacked layers and on the BiLSTM output"),
    ("model", "prune_k", "dependency-path neighbourhood kept by cgcn-mini"),
    ("model", "attention_dim", "attention hidden size (palstm-mini)"),
    ("model", "merge", "conve | distmult"),
    ("model", "conve_filters", "convolution filters"),
    ("model", "conve_kernel", "square kernel side"),
    ("model", "reshape_rows", "grid rows per embedding; rows * cols = word_dim"),
    ("model", "reshape_cols", "grid columns per embedding"),
    ("model", "kglp_dropout", "dropout on the flattened feature map"),
    ("objective", "lambda", "shared weight of the link-prediction and coupling terms"),
    ("objective", "reduction", "mean | sum over sentences"),
    ("objective", "re_loss", "softmax | binary"),
    ("objective", "force_aux_graph", "build zero-weight auxiliary terms anyway (timing diagnostics)"),
    ("trainer", "seed", "drives initialisation, shuffling and dropout"),
    ("trainer", "epochs", "passes over the training set"),
    ("trainer", "batch_size", "sentences per step"),
    ("trainer", "optimizer", "sgd | adagrad | adam"),
    ("trainer", "lr", "initial learning rate"),
    ("trainer", "decay", "learning-rate factor applied when dev F1 does not improve"),
    ("trainer", "clip_norm", "global gradient-norm clip; 0 disables"),
    ("trainer", "ablation", "full | no_coupling | no_kglp | baseline"),
];

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Default configuration with a comment above every key.
    pub fn documented_defaults() -> String {
        let plain = Self::default().to_toml();
        let mut out = String::new();
        let mut section = "";
        for line in plain.lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = KEY_DOCS
                    .iter()
                    .map(|(s, _, _)| *s)
                    .find(|s| *s == name)
                    .unwrap_or("");
            } else if let Some((key, _)) = line.split_once(" = ") {
                if let Some((_, _, doc)) = KEY_DOCS.iter().find(|(s, k, _)| *s == section && *k == key) {
                    out.push_str("# ");
                    out.push_str(doc);
                    out.push('\n');
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        self.model.re().validate()?;
        self.model.kglp().validate(m.word_dim, m.relation_dim)?;
        if m.word_dim == 0 || m.attr_dim == 0 {
            return Err(Error::Config("embedding sizes must be positive".into()));
        }
        self.objective().validate()?;
        let t = &self.trainer;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(t.lr.is_finite() && t.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", t.lr)));
        }
        if !(t.decay > 0.0 && t.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", t.decay)));
        }
        if !(t.clip_norm.is_finite() && t.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be non-negative, got {}", t.clip_norm)));
        }
        Ok(())
    }

    /// Configured weights before the ablation switches.
    pub fn raw_lambdas(&self) -> (f64, f64) {
        let o = &self.objective;
        (o.lambda_kglp.unwrap_or(o.lambda), o.lambda_coupling.unwrap_or(o.lambda))
    }

    /// Objective with the ablation arm applied.
    pub fn objective(&self) -> ObjectiveConfig {
        let (k, c) = self.raw_lambdas();
        let (lambda_kglp, lambda_coupling) = self.trainer.ablation.lambdas(k, c);
        ObjectiveConfig {
            lambda_kglp,
            lambda_coupling,
            reduction: self.objective.reduction,
            re_loss: self.objective.re_loss,
            force_aux_graph: self.objective.force_aux_graph,
        }
    }

    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let mut c = self.clone();
        c.trainer.ablation = ablation;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.trainer.seed = seed;
        c
    }
}
