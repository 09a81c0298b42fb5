//! Index-encoded, padded groups of sentences.

use serde::{Deserialize, Serialize};

use crate::corpus::{prune_dependency_tree, AnswerSets, Dataset, EncodedSentence, PrunedTree, Span, Vocab, PAD};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One encoded sentence with its spans and (optionally) its pruned tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub enc: EncodedSentence,
    pub subj: Span,
    pub obj: Span,
    pub tree: Option<PrunedTree>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.enc.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.enc.tokens.is_empty()
    }
}

/// Encode a type-substituted dataset; `prune_k` computes pruned trees.
pub fn prepare_examples(dataset: &Dataset, vocab: &Vocab, prune_k: Option<usize>) -> Result<Vec<Example>> {
    dataset
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let wrap = |e: Error| Error::Validation {
                index: i,
                message: e.to_string(),
            };
            let tree = match prune_k {
                Some(k) => Some(prune_dependency_tree(s, k).map_err(wrap)?),
                None => None,
            };
            Ok(Example {
                enc: vocab.encode(s).map_err(wrap)?,
                subj: s.subj,
                obj: s.obj,
                tree,
            })
        })
        .collect()
}

/// A padded batch. Sequence features are stored time-major: entry
/// `t * size + b` is position `t` of sentence `b`, with PAD past a
/// sentence's end.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub max_len: usize,
    pub lengths: Vec<usize>,
    pub tokens: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    pub so: Vec<usize>,
    pub oo: Vec<usize>,
    /// `max_len x size`, 1 on real tokens.
    pub mask: Matrix,
    pub subj_spans: Vec<Span>,
    pub obj_spans: Vec<Span>,
    pub trees: Option<Vec<PrunedTree>>,
    pub relations: Vec<usize>,
    pub subj_types: Vec<usize>,
    pub obj_types: Vec<usize>,
    /// `|candidate domain| x size` multi-hot answer sets.
    pub targets: Option<Matrix>,
    /// 1 for sentences that take part in the knowledge-graph losses.
    pub kg_weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BatchStats {
    pub size: usize,
    pub max_len: usize,
    pub kg_sentences: usize,
}

impl Batch {
    pub fn new(examples: &[&Example], answers: Option<&AnswerSets>, no_relation: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let size = examples.len();
        let lengths: Vec<usize> = examples.iter().map(|e| e.len()).collect();
        let max_len = *lengths.iter().max().unwrap();
        let mut tokens = vec![PAD; max_len * size];
        let mut pos = vec![PAD; max_len * size];
        let mut ner = vec![PAD; max_len * size];
        let mut so = vec![PAD; max_len * size];
        let mut oo = vec![PAD; max_len * size];
        let mut mask = Matrix::zeros((max_len, size));
        for (b, e) in examples.iter().enumerate() {
            for t in 0..e.len() {
                let k = t * size + b;
                tokens[k] = e.enc.tokens[t];
                pos[k] = e.enc.pos[t];
                ner[k] = e.enc.ner[t];
                so[k] = e.enc.so[t];
                oo[k] = e.enc.oo[t];
                mask[[t, b]] = 1.0;
            }
        }
        let trees = if examples.iter().all(|e| e.tree.is_some()) {
            Some(examples.iter().map(|e| e.tree.clone().unwrap()).collect())
        } else {
            None
        };
        let relations: Vec<usize> = examples.iter().map(|e| e.enc.relation).collect();
        let subj_types: Vec<usize> = examples.iter().map(|e| e.enc.subj_type).collect();
        let (targets, kg_weights) = match answers {
            Some(a) => {
                let mut targets = Matrix::zeros((a.candidate_domain().len(), size));
                let mut weights = vec![0.0; size];
                for (b, e) in examples.iter().enumerate() {
                    let included = e.enc.relation != no_relation || a.includes_negative_relation();
                    if included && a.get(e.enc.subj_type, e.enc.relation).is_some() {
                        weights[b] = 1.0;
                        let row = a.target_row(e.enc.subj_type, e.enc.relation);
                        for (p, v) in row.into_iter().enumerate() {
                            targets[[p, b]] = v;
                        }
                    }
                }
                (Some(targets), weights)
            }
            None => (None, vec![0.0; size]),
        };
        Ok(Self {
            size,
            max_len,
            lengths,
            tokens,
            pos,
            ner,
            so,
            oo,
            mask,
            subj_spans: examples.iter().map(|e| e.subj).collect(),
            obj_spans: examples.iter().map(|e| e.obj).collect(),
            trees,
            relations,
            subj_types,
            obj_types: examples.iter().map(|e| e.enc.obj_type).collect(),
            targets,
            kg_weights,
        })
    }

    /// Per-step column masks for recurrent updates.
    pub fn step_mask(&self, t: usize) -> Vec<f64> {
        self.mask.row(t).to_vec()
    }

    pub fn stats(&self) -> BatchStats {
        BatchStats {
            size: self.size,
            max_len: self.max_len,
            kg_sentences: self.kg_weights.iter().filter(|&&w| w > 0.0).count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_answer_sets, build_vocab, generate_synthetic, SyntheticSpec};

    #[test]
    fn padding_masks_and_targets_are_consistent() {
        let spec = SyntheticSpec {
            train_size: 40,
            ..Default::default()
        };
        let (train, _, _) = generate_synthetic(&spec, 5).unwrap();
        let train = train.type_substituted();
        let vocab = build_vocab(&train, 1);
        let answers = build_answer_sets(&train, &vocab, false).unwrap();
        let ex = prepare_examples(&train, &vocab, Some(1)).unwrap();
        let refs: Vec<&Example> = ex.iter().take(8).collect();
        let batch = Batch::new(&refs, Some(&answers), vocab.no_relation_id()).unwrap();
        assert!(batch.trees.is_some());
        for (b, e) in refs.iter().enumerate() {
            let valid = (0..batch.max_len).filter(|&t| batch.mask[[t, b]] == 1.0).count();
            assert_eq!(valid, e.len());
            for t in e.len()..batch.max_len {
                assert_eq!(batch.tokens[t * batch.size + b], PAD);
            }
            let negative = e.enc.relation == vocab.no_relation_id();
            assert_eq!(batch.kg_weights[b] == 0.0, negative);
            if !negative {
                let p = answers.domain_position(e.enc.obj_type).unwrap();
                assert_eq!(batch.targets.as_ref().unwrap()[[p, b]], 1.0);
            }
        }
    }
}
