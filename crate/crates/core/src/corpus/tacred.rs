//! TACRED-style JSON: an array of records with `token`, `subj_start`,
//! `subj_end`, `obj_start`, `obj_end`, `subj_type`, `obj_type`,
//! `stanford_pos`, `stanford_ner`, `stanford_head` and `relation`.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::sentence::{Dataset, Sentence, Span, Split, NO_RELATION};
use crate::error::{Error, Result};

const TACRED_NEGATIVE: &str = "no_relation";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    TacredJson,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tacred-json" => Ok(DatasetFormat::TacredJson),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat, split: Split) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DatasetFormat::TacredJson => parse_dataset(&text, split),
    }
}

pub fn parse_dataset(text: &str, split: Split) -> Result<Dataset> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::Load(format!("invalid JSON: {e}")))?;
    let records = root
        .as_array()
        .ok_or_else(|| Error::Load("top-level value is not a JSON array".into()))?;
    if records.is_empty() {
        return Err(Error::Load("empty dataset".into()));
    }
    let sentences = records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(i, r))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(sentences, split)
}

fn field<'a>(index: usize, record: &'a Value, name: &str) -> Result<&'a Value> {
    record.get(name).ok_or_else(|| Error::MissingField {
        index,
        field: name.to_string(),
    })
}

fn malformed(index: usize, name: &str) -> Error {
    Error::MissingField {
        index,
        field: name.to_string(),
    }
}

fn usize_field(index: usize, record: &Value, name: &str) -> Result<usize> {
    field(index, record, name)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| malformed(index, name))
}

fn str_field(index: usize, record: &Value, name: &str) -> Result<String> {
    field(index, record, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed(index, name))
}

fn str_list(index: usize, record: &Value, name: &str) -> Result<Vec<String>> {
    field(index, record, name)?
        .as_array()
        .ok_or_else(|| malformed(index, name))?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| malformed(index, name)))
        .collect()
}

fn head_list(index: usize, record: &Value, name: &str) -> Result<Vec<usize>> {
    field(index, record, name)?
        .as_array()
        .ok_or_else(|| malformed(index, name))?
        .iter()
        .map(|v| {
            // Heads are integers in the original release but strings in some dumps.
            v.as_u64()
                .map(|h| h as usize)
                .or_else(|| v.as_str().and_then(|s| s.parse().ok()))
                .ok_or_else(|| malformed(index, name))
        })
        .collect()
}

fn parse_record(index: usize, record: &Value) -> Result<Sentence> {
    if !record.is_object() {
        return Err(Error::Load(format!("record {index} is not a JSON object")));
    }
    let relation = str_field(index, record, "relation")?;
    let sentence = Sentence {
        id: record.get("id").and_then(Value::as_str).map(str::to_string),
        tokens: str_list(index, record, "token")?,
        subj: Span::new(
            usize_field(index, record, "subj_start")?,
            usize_field(index, record, "subj_end")?,
        ),
        obj: Span::new(
            usize_field(index, record, "obj_start")?,
            usize_field(index, record, "obj_end")?,
        ),
        subj_type: str_field(index, record, "subj_type")?,
        obj_type: str_field(index, record, "obj_type")?,
        pos: str_list(index, record, "stanford_pos")?,
        ner: str_list(index, record, "stanford_ner")?,
        heads: head_list(index, record, "stanford_head")?,
        relation: if relation == TACRED_NEGATIVE {
            NO_RELATION.to_string()
        } else {
            relation
        },
    };
    sentence.validate(index)?;
    Ok(sentence)
}

#[derive(Serialize)]
struct Record<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    relation: &'a str,
    token: &'a [String],
    subj_start: usize,
    subj_end: usize,
    obj_start: usize,
    obj_end: usize,
    subj_type: &'a str,
    obj_type: &'a str,
    stanford_pos: &'a [String],
    stanford_ner: &'a [String],
    stanford_head: &'a [usize],
}

/// Serialize in TACRED field names with a fixed key order. The negative
/// label is written back as `no_relation`.
pub fn dataset_to_json(dataset: &Dataset) -> String {
    let records: Vec<Record<'_>> = dataset
        .sentences
        .iter()
        .map(|s| Record {
            id: s.id.as_deref(),
            relation: if s.is_negative() { TACRED_NEGATIVE } else { &s.relation },
            token: &s.tokens,
            subj_start: s.subj.start,
            subj_end: s.subj.end,
            obj_start: s.obj.start,
            obj_end: s.obj.end,
            subj_type: &s.subj_type,
            obj_type: &s.obj_type,
            stanford_pos: &s.pos,
            stanford_ner: &s.ner,
            stanford_head: &s.heads,
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&records).expect("records serialize");
    out.push('\n');
    out
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_json(dataset)).map_err(|e| Error::io(path, e))
}
