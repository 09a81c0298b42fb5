use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label marking a subject/object pair with no relation.
pub const NO_RELATION: &str = "NoRelation";

/// Inclusive, 0-based token span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub subj: Span,
    pub obj: Span,
    pub subj_type: String,
    pub obj_type: String,
    pub pos: Vec<String>,
    pub ner: Vec<String>,
    /// 1-based head index per token, 0 for the root.
    pub heads: Vec<usize>,
    pub relation: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_negative(&self) -> bool {
        self.relation == NO_RELATION
    }

    pub fn subj_token(&self) -> String {
        format!("SUBJ-{}", self.subj_type)
    }

    pub fn obj_token(&self) -> String {
        format!("OBJ-{}", self.obj_type)
    }

    /// Check every structural invariant; `index` names the record in errors.
    pub fn validate(&self, index: usize) -> Result<()> {
        let n = self.tokens.len();
        let fail = |message: String| Error::Validation { index, message };
        if n == 0 {
            return Err(fail("sentence has no tokens".into()));
        }
        for (name, span) in [("subject", self.subj), ("object", self.obj)] {
            if span.start > span.end || span.end >= n {
                return Err(fail(format!(
                    "{name} span ({}, {}) out of range for {n} tokens",
                    span.start, span.end
                )));
            }
        }
        if self.subj.overlaps(&self.obj) {
            return Err(fail("subject and object spans overlap".into()));
        }
        for (name, len) in [
            ("stanford_pos", self.pos.len()),
            ("stanford_ner", self.ner.len()),
            ("stanford_head", self.heads.len()),
        ] {
            if len != n {
                return Err(fail(format!("{name} has {len} entries for {n} tokens")));
            }
        }
        validate_heads(&self.heads).map_err(|e| fail(e.to_string()))
    }
}

/// Check that 1-based `heads` encode a single-rooted tree.
pub fn validate_heads(heads: &[usize]) -> Result<()> {
    let n = heads.len();
    let roots = heads.iter().filter(|&&h| h == 0).count();
    if roots != 1 {
        return Err(Error::Structure(format!("expected exactly one root, found {roots}")));
    }
    if let Some((i, h)) = heads.iter().enumerate().find(|(_, &h)| h > n) {
        return Err(Error::Structure(format!("token {i} has head {h} beyond {n} tokens")));
    }
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while heads[cur] != 0 {
            cur = heads[cur] - 1;
            steps += 1;
            if steps > n {
                return Err(Error::Structure(format!("cycle reachable from token {start}")));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub sentences: Vec<Sentence>,
    pub split: Split,
}

impl Dataset {
    pub fn new(sentences: Vec<Sentence>, split: Split) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Load("empty dataset".into()));
        }
        for (i, s) in sentences.iter().enumerate() {
            s.validate(i)?;
        }
        Ok(Self { sentences, split })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn type_substituted(&self) -> Dataset {
        Dataset {
            sentences: self.sentences.iter().map(type_substitute).collect(),
            split: self.split,
        }
    }

    pub fn negative_fraction(&self) -> f64 {
        let neg = self.sentences.iter().filter(|s| s.is_negative()).count();
        neg as f64 / self.sentences.len() as f64
    }
}

/// Replace subject tokens by `SUBJ-<type>` and object tokens by `OBJ-<type>`.
pub fn type_substitute(s: &Sentence) -> Sentence {
    let mut out = s.clone();
    let subj = s.subj_token();
    let obj = s.obj_token();
    for i in s.subj.indices() {
        out.tokens[i] = subj.clone();
    }
    for i in s.obj.indices() {
        out.tokens[i] = obj.clone();
    }
    out
}

fn offsets(n: usize, span: Span) -> Vec<i64> {
    (0..n)
        .map(|i| {
            if i < span.start {
                i as i64 - span.start as i64
            } else if i > span.end {
                (i - span.end) as i64
            } else {
                0
            }
        })
        .collect()
}

/// Signed distance of every token to the subject span and to the object span.
pub fn positional_offsets(s: &Sentence) -> (Vec<i64>, Vec<i64>) {
    let n = s.tokens.len();
    (offsets(n, s.subj), offsets(n, s.obj))
}

#[cfg(test)]
pub(crate) use tests::john_doe;

#[cfg(test)]
pub(crate) fn john_doe_with_id(id: &str) -> Sentence {
    Sentence {
        id: Some(id.to_string()),
        ..john_doe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn john_doe() -> Sentence {
        Sentence {
            id: None,
            tokens: ["John", "Doe", "lives", "in", "Miami"].map(String::from).to_vec(),
            subj: Span::new(0, 1),
            obj: Span::new(4, 4),
            subj_type: "PERSON".into(),
            obj_type: "CITY".into(),
            pos: ["NNP", "NNP", "VBZ", "IN", "NNP"].map(String::from).to_vec(),
            ner: ["PERSON", "PERSON", "O", "O", "CITY"].map(String::from).to_vec(),
            heads: vec![2, 3, 0, 5, 3],
            relation: "per:cities_of_residence".into(),
        }
    }

    #[test]
    fn substitution_matches_worked_example() {
        let s = type_substitute(&john_doe());
        assert_eq!(s.tokens, ["SUBJ-PERSON", "SUBJ-PERSON", "lives", "in", "OBJ-CITY"]);
        assert_eq!(type_substitute(&s), s);
        let orig = john_doe();
        assert_eq!((s.subj, s.obj, &s.pos, &s.ner, &s.heads), (orig.subj, orig.obj, &orig.pos, &orig.ner, &orig.heads));
    }

    #[test]
    fn subject_covering_everything_but_object() {
        let mut s = john_doe();
        s.subj = Span::new(0, 3);
        let t = type_substitute(&s);
        assert_eq!(t.tokens[..4], ["SUBJ-PERSON"; 4]);
        assert_eq!(t.tokens[4], "OBJ-CITY");
    }

    #[test]
    fn offsets_examples() {
        let (so, oo) = positional_offsets(&john_doe());
        assert_eq!(so, vec![0, 0, 1, 2, 3]);
        assert_eq!(oo, vec![-4, -3, -2, -1, 0]);

        let mut s = john_doe();
        s.tokens.truncate(3);
        s.pos.truncate(3);
        s.ner.truncate(3);
        s.heads = vec![2, 0, 2];
        s.subj = Span::new(2, 2);
        s.obj = Span::new(0, 0);
        let (so, oo) = positional_offsets(&s);
        assert_eq!(so, vec![-2, -1, 0]);
        assert_eq!(oo, vec![0, 1, 2]);
    }

    #[test]
    fn validation_errors() {
        let mut s = john_doe();
        s.subj = Span::new(0, 7);
        assert!(matches!(s.validate(3), Err(Error::Validation { index: 3, .. })));

        let mut s = john_doe();
        s.obj = Span::new(1, 2);
        assert!(s.validate(0).is_err());

        let mut s = john_doe();
        s.heads = vec![2, 1, 0, 5, 3];
        assert!(s.validate(0).is_err(), "0 <-> 1 cycle");
        s.heads = vec![3, 1, 0, 5, 3];
        assert!(s.validate(0).is_ok());
        s.heads = vec![2, 1, 0, 0, 3];
        assert!(s.validate(0).is_err());
        assert!(validate_heads(&[2, 3, 1, 0]).is_err());
        assert!(validate_heads(&[0, 9]).is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let err = Dataset::new(vec![], Split::Train).unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
    }
}
