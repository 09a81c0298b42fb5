//! Seeded joint training, evaluation through the RE path only, the
//! ablation runner and the per-batch overhead measurement.

mod ablate;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{prepare_examples, Batch, Example};
use crate::config::TrainConfig;
use crate::corpus::{build_answer_sets, build_vocab, carve_dev_split, AnswerSets, Dataset, Vocab};
use crate::digest::sha256_hex;
use crate::embeddings::{Checkpoint, EmbeddingBank};
use crate::error::{Error, Result};
use crate::kglp_model::KglpModel;
use crate::metrics::{macro_prf, micro_prf, EvalReport};
use crate::nn::Mode;
use crate::objective::{joint_objective, LossBreakdown, ObjectiveConfig};
use crate::optim::{Optimizer, PlateauDecay};
use crate::re_model::{forward_re, ReModel};
use crate::tensor::{Graph, ParamStore};

pub use ablate::{ablate, measure_overhead, AblationTable, ArmSummary, OverheadReport, RunOutcome};

/// Independent random streams derived from one seed. Each consumer owns
/// its stream, so leaving one component out never shifts another's draws.
pub mod streams {
    pub const BANK: u64 = 0;
    pub const RE: u64 = 1;
    pub const KGLP: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const RE_DROPOUT: u64 = 4;
    pub const KGLP_DROPOUT: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn vocab_hash(vocab: &Vocab) -> String {
    sha256_hex(serde_json::to_string(vocab).expect("vocab serializes"))
}

/// Encoded splits plus the vocabulary and answer sets built from train.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub answers: AnswerSets,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl PreparedData {
    /// Type-substitute, build the vocabulary and answer sets from `train`
    /// and encode every split. Without a dev split one is carved from train.
    pub fn new(train: &Dataset, dev: Option<&Dataset>, test: Option<&Dataset>, config: &TrainConfig) -> Result<Self> {
        let (train, dev) = match dev {
            Some(d) => (train.clone(), d.clone()),
            None => carve_dev_split(train, config.data.dev_size, config.trainer.seed)?,
        };
        let train = train.type_substituted();
        let vocab = build_vocab(&train, config.data.min_count);
        let answers = build_answer_sets(&train, &vocab, config.data.include_negative_relation)?;
        Self::encode(vocab, answers, &train, &dev, test, config)
    }

    /// Encode splits under an existing vocabulary and answer sets.
    pub fn encode(
        vocab: Vocab,
        answers: AnswerSets,
        train: &Dataset,
        dev: &Dataset,
        test: Option<&Dataset>,
        config: &TrainConfig,
    ) -> Result<Self> {
        let k = config.model.tree_prune_k();
        let enc = |d: &Dataset| prepare_examples(&d.type_substituted(), &vocab, k);
        let train = enc(train)?;
        let dev = enc(dev)?;
        let test = match test {
            Some(t) => enc(t)?,
            None => Vec::new(),
        };
        Ok(Self {
            answers,
            train,
            dev,
            test,
            vocab,
        })
    }

    pub fn no_relation(&self) -> usize {
        self.vocab.no_relation_id()
    }
}

/// Every trained component over one parameter store.
#[derive(Clone, Debug)]
pub struct JointModel {
    pub store: ParamStore,
    pub bank: EmbeddingBank,
    pub re: ReModel,
    pub kglp: Option<KglpModel>,
}

impl JointModel {
    /// Bank, encoder and link-prediction head, initialised from
    /// `config.trainer.seed`. The head is built for every ablation arm so
    /// that all arms share one parameter layout.
    pub fn new(config: &TrainConfig, vocab: &Vocab, answers: &AnswerSets) -> Result<Self> {
        Self::build(config, vocab, answers, true)
    }

    /// Bank and encoder only; no link-prediction code is constructed.
    pub fn re_only(config: &TrainConfig, vocab: &Vocab, answers: &AnswerSets) -> Result<Self> {
        Self::build(config, vocab, answers, false)
    }

    fn build(config: &TrainConfig, vocab: &Vocab, answers: &AnswerSets, with_kglp: bool) -> Result<Self> {
        config.validate()?;
        let seed = config.trainer.seed;
        let mut store = ParamStore::new();
        let bank = EmbeddingBank::new(
            &mut store,
            vocab,
            answers.candidate_domain().len(),
            config.model.dims(),
            &mut stream_rng(seed, streams::BANK),
        )?;
        let re = ReModel::new(&mut store, &bank, &config.model.re(), &mut stream_rng(seed, streams::RE))?;
        let kglp = if with_kglp {
            Some(KglpModel::new(
                &mut store,
                &bank,
                &config.model.kglp(),
                &mut stream_rng(seed, streams::KGLP),
            )?)
        } else {
            None
        };
        Ok(Self { store, bank, re, kglp })
    }

    /// Relation predictions (argmax, lowest index on ties) in eval mode.
    pub fn predict(&self, examples: &[Example], batch_size: usize, no_relation: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(batch_size.max(1)) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let batch = Batch::new(&refs, None, no_relation)?;
            let res = forward_re(&self.store, &self.re, &self.bank, &batch)?;
            for col in res.logits.columns() {
                let mut best = 0;
                for (k, &v) in col.iter().enumerate() {
                    if v > col[best] {
                        best = k;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, examples: &[Example], batch_size: usize, no_relation: usize) -> Result<Evaluation> {
        if examples.is_empty() {
            return Err(Error::Input("nothing to evaluate".into()));
        }
        let preds = self.predict(examples, batch_size, no_relation)?;
        let golds: Vec<usize> = examples.iter().map(|e| e.enc.relation).collect();
        Ok(Evaluation {
            micro: micro_prf(&preds, &golds, no_relation)?,
            macro_avg: macro_prf(&preds, &golds, no_relation)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub micro: EvalReport,
    #[serde(rename = "macro")]
    pub macro_avg: EvalReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&EvalReport> for Prf {
    fn from(r: &EvalReport) -> Self {
        Prf {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    /// Forward, backward and update time, excluding batch assembly.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-field means over the epoch's steps.
    pub loss: LossBreakdown,
    pub dev: Prf,
    pub lr: f64,
    pub batch_seconds_mean: f64,
    pub batch_seconds_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

impl TrainHistory {
    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut h = self.clone();
        for e in &mut h.epochs {
            e.batch_seconds_mean = 0.0;
            e.batch_seconds_std = 0.0;
        }
        h
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mean_breakdown(steps: &[LossBreakdown]) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| steps.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        l_re: avg(|b| b.l_re),
        l_kglp: avg(|b| b.l_kglp),
        l_coupling: avg(|b| b.l_coupling),
        l_joint: avg(|b| b.l_joint),
        lambda_kglp: steps.first().map_or(0.0, |b| b.lambda_kglp),
        lambda_coupling: steps.first().map_or(0.0, |b| b.lambda_coupling),
    }
}

/// Step-level driver. `train` wraps it; tests use it directly to inspect
/// individual steps.
pub struct Trainer<'d> {
    config: TrainConfig,
    objective: ObjectiveConfig,
    data: &'d PreparedData,
    model: JointModel,
    optimizer: Optimizer,
    decay: PlateauDecay,
    shuffle_rng: ChaCha8Rng,
    re_dropout: ChaCha8Rng,
    kglp_dropout: ChaCha8Rng,
    steps_done: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(config: &TrainConfig, data: &'d PreparedData, model: JointModel) -> Result<Self> {
        config.validate()?;
        let objective = config.objective();
        if (objective.needs_kglp() || objective.needs_coupling()) && model.kglp.is_none() {
            return Err(Error::Config("auxiliary terms are enabled but the model has no link-prediction head".into()));
        }
        if data.train.is_empty() {
            return Err(Error::Input("empty training set".into()));
        }
        let seed = config.trainer.seed;
        let optimizer = Optimizer::new(config.trainer.optimizer, config.trainer.lr, &model.store)?;
        Ok(Self {
            objective,
            data,
            optimizer,
            decay: PlateauDecay::new(config.trainer.decay)?,
            shuffle_rng: stream_rng(seed, streams::SHUFFLE),
            re_dropout: stream_rng(seed, streams::RE_DROPOUT),
            kglp_dropout: stream_rng(seed, streams::KGLP_DROPOUT),
            steps_done: 0,
            model,
            config: config.clone(),
        })
    }

    pub fn model(&self) -> &JointModel {
        &self.model
    }

    pub fn into_model(self) -> JointModel {
        self.model
    }

    pub fn objective(&self) -> &ObjectiveConfig {
        &self.objective
    }

    /// A fresh shuffled partition of the training indices.
    pub fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        order.chunks(self.config.trainer.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn make_batch(&self, indices: &[usize]) -> Result<Batch> {
        let refs: Vec<&Example> = indices.iter().map(|&i| &self.data.train[i]).collect();
        Batch::new(&refs, Some(&self.data.answers), self.data.no_relation())
    }

    /// Forward, backward, clip and update on one batch.
    pub fn step(&mut self, epoch: usize, batch: &Batch) -> Result<StepRecord> {
        let start = Instant::now();
        let step = self.steps_done;
        let (breakdown, grads) = {
            let m = &self.model;
            let mut g = Graph::new(&m.store);
            let re = m.re.forward(&mut g, batch, &m.bank, &mut Mode::train(&mut self.re_dropout))?;
            let nodes = joint_objective(
                &mut g,
                batch,
                &re,
                m.kglp.as_ref(),
                &m.bank,
                Some(&self.data.answers),
                &self.objective,
                &mut Mode::train(&mut self.kglp_dropout),
            )?;
            let breakdown = nodes.breakdown(&g, &self.objective);
            if let Some((term, value)) = breakdown.non_finite_term() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    term: term.into(),
                    value,
                });
            }
            (breakdown, g.backward(nodes.joint))
        };
        let store = &mut self.model.store;
        store.zero_grad();
        store.accumulate(&grads);
        let grad_norm = store.clip_grad_norm(self.config.trainer.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                term: "gradient".into(),
                value: grad_norm,
            });
        }
        self.optimizer.step(store);
        if !store.all_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                term: "parameters".into(),
                value: f64::NAN,
            });
        }
        self.steps_done += 1;
        Ok(StepRecord {
            epoch,
            step,
            loss: breakdown,
            grad_norm,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// One pass over the training data. Records are written to `log` as
    /// line-delimited JSON when given.
    pub fn run_epoch(&mut self, epoch: usize, mut log: Option<&mut dyn Write>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        for indices in self.epoch_batches() {
            let batch = self.make_batch(&indices)?;
            let rec = self.step(epoch, &batch)?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io("<training log>", e))?;
            }
            records.push(rec);
        }
        Ok(records)
    }

    pub fn dev_scores(&self) -> Result<Prf> {
        let eval = self
            .model
            .evaluate(&self.data.dev, self.config.trainer.batch_size, self.data.no_relation())?;
        Ok(Prf::from(&eval.micro))
    }

    fn checkpoint(&self, epoch: usize, dev_f1: f64) -> Checkpoint {
        let mut c = Checkpoint::capture(
            &self.model.store,
            &vocab_hash(&self.data.vocab),
            &self.config.hash(),
            &self.config.to_toml(),
        );
        c.epoch = Some(epoch);
        c.dev_f1 = Some(dev_f1);
        c
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best dev epoch (earliest on ties).
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    /// Model holding the best-epoch parameters.
    pub model: JointModel,
}

/// Train for `config.trainer.epochs` epochs, scoring dev after each and
/// keeping the best-dev parameters.
pub fn train(config: &TrainConfig, data: &PreparedData, log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    let model = JointModel::new(config, &data.vocab, &data.answers)?;
    train_model(config, data, model, log)
}

pub fn train_model(
    config: &TrainConfig,
    data: &PreparedData,
    model: JointModel,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data, model)?;
    let mut epochs = Vec::with_capacity(config.trainer.epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;
    for epoch in 1..=config.trainer.epochs {
        let records = trainer.run_epoch(epoch, log.as_mut().map(|w| &mut **w as &mut dyn Write))?;
        let dev = trainer.dev_scores()?;
        let times: Vec<f64> = records.iter().map(|r| r.seconds).collect();
        let (batch_seconds_mean, batch_seconds_std) = mean_std(&times);
        let losses: Vec<LossBreakdown> = records.iter().map(|r| r.loss).collect();
        epochs.push(EpochRecord {
            epoch,
            loss: mean_breakdown(&losses),
            dev,
            lr: trainer.optimizer.lr(),
            batch_seconds_mean,
            batch_seconds_std,
        });
        if best.as_ref().is_none_or(|(_, f1, _)| dev.f1 > *f1) {
            best = Some((epoch, dev.f1, trainer.checkpoint(epoch, dev.f1)));
        }
        trainer.decay.observe(dev.f1, &mut trainer.optimizer);
    }
    let (best_epoch, best_dev_f1, checkpoint) = best.expect("at least one epoch");
    let mut model = trainer.into_model();
    checkpoint.restore(&mut model.store)?;
    Ok(TrainOutcome {
        checkpoint,
        history: TrainHistory {
            epochs,
            best_epoch,
            best_dev_f1,
        },
        model,
    })
}

/// Rebuild a model from a checkpoint, checking it matches `data`'s vocabulary.
pub fn load_model(checkpoint: &Checkpoint, data: &PreparedData) -> Result<(TrainConfig, JointModel)> {
    if checkpoint.vocab_hash != vocab_hash(&data.vocab) {
        return Err(Error::Checkpoint("checkpoint was trained under a different vocabulary".into()));
    }
    let config = TrainConfig::from_toml(&checkpoint.config)?;
    if config.hash() != checkpoint.config_hash {
        return Err(Error::Checkpoint("embedded configuration does not match its hash".into()));
    }
    let mut model = JointModel::new(&config, &data.vocab, &data.answers)?;
    checkpoint.restore(&mut model.store)?;
    Ok((config, model))
}
