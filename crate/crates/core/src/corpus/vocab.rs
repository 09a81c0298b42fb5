use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::sentence::{positional_offsets, Dataset, Sentence, NO_RELATION};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<PAD>";
const UNK_TOKEN: &str = "<UNK>";

/// Dense string <-> index table.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Index {
    items: Vec<String>,
    map: HashMap<String, usize>,
}

impl From<Vec<String>> for Index {
    fn from(items: Vec<String>) -> Self {
        let map = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { items, map }
    }
}

impl From<Index> for Vec<String> {
    fn from(index: Index) -> Self {
        index.items
    }
}

impl Index {
    fn push(&mut self, item: &str) -> usize {
        if let Some(&i) = self.map.get(item) {
            return i;
        }
        self.items.push(item.to_string());
        self.map.insert(item.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, item: &str) -> Option<usize> {
        self.map.get(item).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Token, relation and attribute tables. Attribute keys carry a family
/// prefix: `pos:`, `ner:`, `so:` and `oo:`. Index 0 of the token and
/// attribute tables is padding and index 1 is the unknown entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub tokens: Index,
    pub relations: Index,
    pub attributes: Index,
}

pub fn pos_key(tag: &str) -> String {
    format!("pos:{tag}")
}

pub fn ner_key(tag: &str) -> String {
    format!("ner:{tag}")
}

pub fn so_key(offset: i64) -> String {
    format!("so:{offset}")
}

pub fn oo_key(offset: i64) -> String {
    format!("oo:{offset}")
}

pub fn build_vocab(train: &Dataset, min_count: usize) -> Vocab {
    let min_count = min_count.max(1);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut type_tokens = BTreeSet::new();
    let mut relations = BTreeSet::new();
    let mut attrs: [BTreeSet<String>; 4] = Default::default();
    let mut offsets: [BTreeSet<i64>; 2] = Default::default();

    for s in &train.sentences {
        for t in &s.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        type_tokens.insert(s.subj_token());
        type_tokens.insert(s.obj_token());
        relations.insert(s.relation.clone());
        attrs[0].extend(s.pos.iter().cloned());
        attrs[1].extend(s.ner.iter().cloned());
        let (so, oo) = positional_offsets(s);
        offsets[0].extend(so);
        offsets[1].extend(oo);
    }

    let mut tokens = Index::default();
    tokens.push(PAD_TOKEN);
    tokens.push(UNK_TOKEN);
    for t in &type_tokens {
        tokens.push(t);
    }
    let mut frequent: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    frequent.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    for (t, _) in frequent {
        tokens.push(t);
    }

    let mut rel_index = Index::default();
    rel_index.push(NO_RELATION);
    for r in &relations {
        rel_index.push(r);
    }

    let mut attributes = Index::default();
    attributes.push(PAD_TOKEN);
    attributes.push(UNK_TOKEN);
    for tag in &attrs[0] {
        attributes.push(&pos_key(tag));
    }
    for tag in &attrs[1] {
        attributes.push(&ner_key(tag));
    }
    for &o in &offsets[0] {
        attributes.push(&so_key(o));
    }
    for &o in &offsets[1] {
        attributes.push(&oo_key(o));
    }

    Vocab {
        tokens,
        relations: rel_index,
        attributes,
    }
}

/// Integer view of one sentence under a vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSentence {
    pub tokens: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    pub so: Vec<usize>,
    pub oo: Vec<usize>,
    pub subj_type: usize,
    pub obj_type: usize,
    pub relation: usize,
}

impl Vocab {
    pub fn token_id(&self, token: &str) -> usize {
        self.tokens.get(token).unwrap_or(UNK)
    }

    pub fn decode_token(&self, index: usize) -> Option<&str> {
        self.tokens.name(index)
    }

    pub fn attribute_id(&self, key: &str) -> usize {
        self.attributes.get(key).unwrap_or(UNK)
    }

    pub fn relation_id(&self, relation: &str) -> Result<usize> {
        self.relations
            .get(relation)
            .ok_or_else(|| Error::Input(format!("relation `{relation}` not in vocabulary")))
    }

    pub fn no_relation_id(&self) -> usize {
        self.relations.get(NO_RELATION).expect("NoRelation is always indexed")
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn encode(&self, s: &Sentence) -> Result<EncodedSentence> {
        let (so, oo) = positional_offsets(s);
        let type_id = |t: String| {
            self.tokens
                .get(&t)
                .ok_or_else(|| Error::Input(format!("type token `{t}` not in vocabulary")))
        };
        Ok(EncodedSentence {
            tokens: s.tokens.iter().map(|t| self.token_id(t)).collect(),
            pos: s.pos.iter().map(|t| self.attribute_id(&pos_key(t))).collect(),
            ner: s.ner.iter().map(|t| self.attribute_id(&ner_key(t))).collect(),
            so: so.iter().map(|&o| self.attribute_id(&so_key(o))).collect(),
            oo: oo.iter().map(|&o| self.attribute_id(&oo_key(o))).collect(),
            subj_type: type_id(s.subj_token())?,
            obj_type: type_id(s.obj_token())?,
            relation: self.relation_id(&s.relation)?,
        })
    }

    /// Relation names in index order.
    pub fn relation_names(&self) -> &[String] {
        self.relations.items()
    }

    /// Summary used by diagnostics: count of tokens per prefix family.
    pub fn attribute_families(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for a in self.attributes.items() {
            if let Some((family, _)) = a.split_once(':') {
                *out.entry(family.to_string()).or_default() += 1;
            }
        }
        out
    }
}
