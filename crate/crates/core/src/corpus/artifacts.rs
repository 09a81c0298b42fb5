use super::answers::{build_answer_sets, AnswerSets};
use super::sentence::Dataset;
use super::tacred::dataset_to_json;
use super::vocab::{build_vocab, Vocab};
use crate::error::{Error, Result};

/// Serialized outputs of preprocessing one training split. Every field is
/// a pure function of the input records and flags, so reruns are
/// byte-identical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifacts {
    /// The records in canonical TACRED form, before type substitution.
    pub dataset: String,
    pub vocab: String,
    pub answers: String,
}

/// Build the vocabulary and answer sets from the type-substituted split.
pub fn preprocess(train: &Dataset, min_count: usize, include_negative_relation: bool) -> Result<Artifacts> {
    let typed = train.type_substituted();
    let vocab = build_vocab(&typed, min_count);
    let answers = build_answer_sets(&typed, &vocab, include_negative_relation)?;
    Ok(Artifacts {
        dataset: dataset_to_json(train),
        vocab: to_json(&vocab),
        answers: to_json(&answers),
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

pub fn parse_vocab(text: &str) -> Result<Vocab> {
    serde_json::from_str(text).map_err(|e| Error::Load(format!("vocabulary: {e}")))
}

pub fn parse_answer_sets(text: &str) -> Result<AnswerSets> {
    serde_json::from_str(text).map_err(|e| Error::Load(format!("answer sets: {e}")))
}
