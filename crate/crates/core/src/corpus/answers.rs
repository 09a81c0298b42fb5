use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::sentence::Dataset;
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// `(subject-type token, relation, object-type token)` as vocabulary indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct AnswerEntry {
    subject: usize,
    relation: usize,
    objects: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AnswerSetsFile {
    include_negative_relation: bool,
    candidate_domain: Vec<usize>,
    entries: Vec<AnswerEntry>,
}

/// Knowledge graph answer sets: for every `(subject type, relation)` key,
/// the object types observed with it in training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AnswerSetsFile", into = "AnswerSetsFile")]
pub struct AnswerSets {
    sets: BTreeMap<(usize, usize), BTreeSet<usize>>,
    candidate_domain: Vec<usize>,
    include_negative_relation: bool,
}

impl TryFrom<AnswerSetsFile> for AnswerSets {
    type Error = String;

    fn try_from(f: AnswerSetsFile) -> std::result::Result<Self, String> {
        let domain: BTreeSet<usize> = f.candidate_domain.iter().copied().collect();
        let mut sets = BTreeMap::new();
        for e in f.entries {
            if let Some(bad) = e.objects.iter().find(|o| !domain.contains(o)) {
                return Err(format!("object {bad} outside candidate domain"));
            }
            sets.insert((e.subject, e.relation), e.objects.into_iter().collect());
        }
        Ok(Self {
            sets,
            candidate_domain: f.candidate_domain,
            include_negative_relation: f.include_negative_relation,
        })
    }
}

impl From<AnswerSets> for AnswerSetsFile {
    fn from(a: AnswerSets) -> Self {
        AnswerSetsFile {
            include_negative_relation: a.include_negative_relation,
            candidate_domain: a.candidate_domain,
            entries: a
                .sets
                .into_iter()
                .map(|((subject, relation), objects)| AnswerEntry {
                    subject,
                    relation,
                    objects: objects.into_iter().collect(),
                })
                .collect(),
        }
    }
}

impl AnswerSets {
    pub fn get(&self, subject: usize, relation: usize) -> Option<&BTreeSet<usize>> {
        self.sets.get(&(subject, relation))
    }

    /// Object-type token indices in ascending order.
    pub fn candidate_domain(&self) -> &[usize] {
        &self.candidate_domain
    }

    pub fn domain_position(&self, object: usize) -> Option<usize> {
        self.candidate_domain.binary_search(&object).ok()
    }

    pub fn includes_negative_relation(&self) -> bool {
        self.include_negative_relation
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sets.keys().copied()
    }

    /// Multi-hot target over the candidate domain for one key; all zeros
    /// when the key was never observed.
    pub fn target_row(&self, subject: usize, relation: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.candidate_domain.len()];
        if let Some(objs) = self.get(subject, relation) {
            for o in objs {
                if let Some(p) = self.domain_position(*o) {
                    row[p] = 1.0;
                }
            }
        }
        row
    }
}

pub fn build_answer_sets(
    train: &Dataset,
    vocab: &Vocab,
    include_negative_relation: bool,
) -> Result<AnswerSets> {
    let negative = vocab.no_relation_id();
    let mut sets: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    let mut domain = BTreeSet::new();
    for (i, s) in train.sentences.iter().enumerate() {
        let e = vocab.encode(s).map_err(|e| Error::Validation {
            index: i,
            message: e.to_string(),
        })?;
        domain.insert(e.obj_type);
        if e.relation == negative && !include_negative_relation {
            continue;
        }
        sets.entry((e.subj_type, e.relation)).or_default().insert(e.obj_type);
    }
    if sets.is_empty() {
        return Err(Error::Input("no triples extracted".into()));
    }
    Ok(AnswerSets {
        sets,
        candidate_domain: domain.into_iter().collect(),
        include_negative_relation,
    })
}
