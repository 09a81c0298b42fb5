#![allow(dead_code)]

pub mod oracle;

use jrrelp_core::batch::{prepare_examples, Batch, Example};
use jrrelp_core::corpus::{build_answer_sets, build_vocab, AnswerSets, Dataset, Sentence, Span, Split, Vocab};
use jrrelp_core::embeddings::{EmbeddingBank, EmbeddingDims};
use jrrelp_core::kglp_model::{KglpModel, KglpModelConfig, Merge};
use jrrelp_core::re_model::{Architecture, ReModel, ReModelConfig};
use jrrelp_core::tensor::{Graph, Matrix, NodeId, ParamId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn sentence(
    tokens: &str,
    subj: (usize, usize),
    obj: (usize, usize),
    types: (&str, &str),
    heads: &[usize],
    relation: &str,
) -> Sentence {
    let tokens: Vec<String> = tokens.split_whitespace().map(String::from).collect();
    let n = tokens.len();
    let (subj, obj) = (Span::new(subj.0, subj.1), Span::new(obj.0, obj.1));
    let ner = (0..n)
        .map(|i| {
            if subj.contains(i) {
                types.0.to_string()
            } else if obj.contains(i) {
                types.1.to_string()
            } else {
                "O".to_string()
            }
        })
        .collect();
    let pos = (0..n)
        .map(|i| if subj.contains(i) || obj.contains(i) { "NNP" } else if i % 2 == 0 { "VB" } else { "IN" })
        .map(String::from)
        .collect();
    Sentence {
        id: None,
        tokens,
        subj,
        obj,
        subj_type: types.0.into(),
        obj_type: types.1.into(),
        pos,
        ner,
        heads: heads.to_vec(),
        relation: relation.into(),
    }
}

/// Three relations (NoRelation and two positives) over three sentences.
pub fn toy_dataset() -> Dataset {
    Dataset::new(
        vec![
            sentence("Ann lives in Rome", (0, 0), (3, 3), ("PERSON", "CITY"), &[2, 0, 2, 3], "r:lives"),
            sentence(
                "Bob works for Acme Corp today",
                (0, 0),
                (3, 4),
                ("PERSON", "ORGANIZATION"),
                &[2, 0, 2, 5, 3, 2],
                "r:works",
            ),
            sentence("Cid met Dee", (0, 0), (2, 2), ("PERSON", "PERSON"), &[2, 0, 2], "NoRelation"),
        ],
        Split::Train,
    )
    .unwrap()
}

pub struct Toy {
    pub vocab: Vocab,
    pub answers: AnswerSets,
    pub examples: Vec<Example>,
}

pub fn toy(prune_k: Option<usize>) -> Toy {
    let data = toy_dataset().type_substituted();
    let vocab = build_vocab(&data, 1);
    let answers = build_answer_sets(&data, &vocab, true).unwrap();
    let examples = prepare_examples(&data, &vocab, prune_k).unwrap();
    Toy {
        vocab,
        answers,
        examples,
    }
}

impl Toy {
    pub fn batch(&self, idx: &[usize]) -> Batch {
        let refs: Vec<&Example> = idx.iter().map(|&i| &self.examples[i]).collect();
        Batch::new(&refs, Some(&self.answers), self.vocab.no_relation_id()).unwrap()
    }
}

/// Overwrite every parameter with a fixed, non-degenerate pattern.
pub fn fill_params(store: &mut ParamStore, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let m = store.value_mut(id);
        let cols = m.ncols();
        for ((r, c), v) in m.indexed_iter_mut() {
            let k = (r * cols + c) as f64;
            *v = scale * (1.7 * pi as f64 + 0.93 * r as f64 + 0.41 * c as f64 + 0.37 * k + 0.2).sin();
        }
    }
    store.enforce_frozen();
}

/// Largest relative error between analytic and central-difference gradients
/// over every free entry of `ids`. The denominator is floored at `1e-6` so
/// entries whose true gradient is zero compare absolutely.
pub fn gradient_error(
    store: &mut ParamStore,
    ids: &[ParamId],
    h: f64,
    loss: impl Fn(&mut Graph) -> NodeId,
) -> f64 {
    let analytic: Vec<Matrix> = {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        let grads = g.backward(l);
        ids.iter()
            .map(|&id| grads.get(id).cloned().unwrap_or_else(|| Matrix::zeros(store.value(id).dim())))
            .collect()
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let mut worst = 0.0f64;
    for (&id, a) in ids.iter().zip(&analytic) {
        let frozen = store.get(id).frozen_cols.clone();
        let (rows, cols) = store.value(id).dim();
        for c in (0..cols).filter(|c| !frozen.contains(c)) {
            for r in 0..rows {
                let orig = store.value(id)[[r, c]];
                store.value_mut(id)[[r, c]] = orig + h;
                let up = eval(store);
                store.value_mut(id)[[r, c]] = orig - h;
                let down = eval(store);
                store.value_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let exact = a[[r, c]];
                let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// Toy corpus with a full set of shared parameters.
pub struct Setup {
    pub toy: Toy,
    pub store: ParamStore,
    pub bank: EmbeddingBank,
    pub re: ReModel,
    pub kglp: KglpModel,
}

/// `dim` is the shared word/relation size and must be even; ConvE uses a
/// `2 x dim/2` grid per embedding with two `2 x 2` filters.
pub fn setup(arch: Architecture, merge: Merge, dim: usize) -> Setup {
    let toy = toy(Some(1));
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = EmbeddingDims {
        word: dim,
        relation: dim,
        attribute: 2,
    };
    let bank = EmbeddingBank::new(&mut store, &toy.vocab, toy.answers.candidate_domain().len(), dims, &mut rng).unwrap();
    let re_cfg = ReModelConfig {
        architecture: arch,
        hidden_dim: 3,
        num_layers: 1,
        dropout_rate: 0.0,
        prune_k: Some(1),
        attention_dim: 3,
    };
    let re = ReModel::new(&mut store, &bank, &re_cfg, &mut rng).unwrap();
    let kglp_cfg = KglpModelConfig {
        merge,
        conve_filters: 2,
        conve_kernel: 2,
        reshape_rows: 2,
        reshape_cols: dim / 2,
        dropout_rate: 0.0,
    };
    let kglp = KglpModel::new(&mut store, &bank, &kglp_cfg, &mut rng).unwrap();
    fill_params(&mut store, 0.6);
    Setup {
        toy,
        store,
        bank,
        re,
        kglp,
    }
}

/// Small desk configuration: 16-dim embeddings on a 4x4 grid, 16 hidden units.
pub fn small_config(arch: Architecture) -> jrrelp_core::config::TrainConfig {
    let mut c = jrrelp_core::config::TrainConfig::default();
    c.model.architecture = arch;
    c.model.word_dim = 16;
    c.model.relation_dim = 16;
    c.model.attr_dim = 4;
    c.model.hidden_dim = 16;
    c.model.attention_dim = 16;
    c.model.reshape_rows = 4;
    c.model.reshape_cols = 4;
    c.trainer.epochs = 2;
    c.trainer.batch_size = 16;
    c
}

/// Synthetic splits of the given sizes encoded under `cfg`.
pub fn synth_data(
    cfg: &jrrelp_core::config::TrainConfig,
    train: usize,
    held_out: usize,
    seed: u64,
) -> jrrelp_core::trainer::PreparedData {
    let spec = jrrelp_core::corpus::SyntheticSpec {
        train_size: train,
        dev_size: held_out,
        test_size: held_out,
        ..Default::default()
    };
    let (tr, dv, te) = jrrelp_core::corpus::generate_synthetic(&spec, seed).unwrap();
    jrrelp_core::trainer::PreparedData::new(&tr, Some(&dv), Some(&te), cfg).unwrap()
}
