//! Template-driven synthetic corpora with typed entities.
//!
//! A template is a whitespace-separated token string containing exactly one
//! `{S}` and one `{O}` placeholder. A word prefixed with `*` is the
//! dependency root; otherwise the first word is. Every template maps to a
//! fixed parse: placeholders and ordinary words attach to the root, except
//! a word directly in front of a placeholder, which attaches to that
//! mention (a preposition-like case marker). Multi-token mentions are
//! headed by their last token.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sentence::{Dataset, Sentence, Span, Split, NO_RELATION};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    /// Legal `[subject type, object type]` pairs.
    pub pairs: Vec<[String; 2]>,
    pub templates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub entity_types: Vec<String>,
    pub relations: Vec<RelationSpec>,
    /// Templates that never express a relation.
    pub negative_templates: Vec<String>,
    /// Share of sentences labeled `NoRelation` in every split.
    pub negative_fraction: f64,
    /// Share of negatives built from a positive template filled with a type
    /// pair the template's relations do not admit.
    pub violation_fraction: f64,
    pub filler_words: Vec<String>,
    pub max_fillers: usize,
    pub names_per_type: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

fn rel(name: &str, pairs: &[(&str, &str)], templates: &[&str]) -> RelationSpec {
    RelationSpec {
        name: name.to_string(),
        pairs: pairs.iter().map(|(s, o)| [s.to_string(), o.to_string()]).collect(),
        templates: templates.iter().map(|t| t.to_string()).collect(),
    }
}

impl Default for SyntheticSpec {
    /// A TACRED-flavored corpus where several relations share surface
    /// templates and are told apart only by their argument types.
    fn default() -> Self {
        let born = ["{S} was *born in {O}", "{S} , *born in {O} , is", "{S} *arrived in {O} at birth"];
        let lives = ["{S} *lives in {O}", "{S} has *resided in {O}", "{S} *moved to {O}"];
        let based = ["{S} is *based in {O}", "{S} *headquartered in {O}", "{S} *opened offices in {O}"];
        Self {
            entity_types: ["PERSON", "ORGANIZATION", "CITY", "COUNTRY", "DATE", "TITLE"]
                .map(String::from)
                .to_vec(),
            relations: vec![
                rel("per:city_of_birth", &[("PERSON", "CITY")], &born),
                rel("per:country_of_birth", &[("PERSON", "COUNTRY")], &born),
                rel("per:date_of_birth", &[("PERSON", "DATE")], &["{S} was *born in {O}", "{S} was *born on {O}"]),
                rel("per:cities_of_residence", &[("PERSON", "CITY")], &lives),
                rel("per:countries_of_residence", &[("PERSON", "COUNTRY")], &lives),
                rel(
                    "per:employee_of",
                    &[("PERSON", "ORGANIZATION")],
                    &["{S} *works for {O}", "{S} *joined {O}", "{S} , who *works at {O} ,"],
                ),
                rel(
                    "per:title",
                    &[("PERSON", "TITLE")],
                    &["{S} *serves as {O}", "{O} {S} *said", "{S} *became {O}"],
                ),
                rel("org:city_of_headquarters", &[("ORGANIZATION", "CITY")], &based),
                rel("org:country_of_headquarters", &[("ORGANIZATION", "COUNTRY")], &based),
                rel(
                    "org:founded",
                    &[("ORGANIZATION", "DATE")],
                    &["{S} was *founded in {O}", "{S} , *established in {O} ,"],
                ),
                rel(
                    "org:top_members",
                    &[("ORGANIZATION", "PERSON")],
                    &["{O} *leads {S}", "{O} , head of {S} , *said", "{S} *appointed {O}"],
                ),
                rel(
                    "org:founded_by",
                    &[("ORGANIZATION", "PERSON")],
                    &["{S} was *founded by {O}", "{O} *established {S}"],
                ),
            ],
            negative_templates: ["{S} *met {O} yesterday", "{O} and {S} *attended the meeting", "{S} *mentioned {O} in passing", "{S} *criticized {O}"]
                .map(String::from)
                .to_vec(),
            negative_fraction: 0.6,
            violation_fraction: 0.5,
            filler_words: ["reportedly", "meanwhile", "however", "officially", "recently", "also"]
                .map(String::from)
                .to_vec(),
            max_fillers: 2,
            names_per_type: 12,
            train_size: 1400,
            dev_size: 300,
            test_size: 300,
        }
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn relation(&self, name: &str) -> Option<&RelationSpec> {
        self.relations.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Unit {
    Word(String),
    Subj,
    Obj,
}

#[derive(Clone, Debug)]
struct Template {
    units: Vec<Unit>,
    root: usize,
}

fn parse_template(text: &str) -> Result<Template> {
    let mut units = Vec::new();
    let mut root = None;
    for (i, tok) in text.split_whitespace().enumerate() {
        match tok {
            "{S}" => units.push(Unit::Subj),
            "{O}" => units.push(Unit::Obj),
            w => {
                if let Some(stripped) = w.strip_prefix('*') {
                    if root.is_some() {
                        return Err(Error::Generation(format!("template `{text}` marks two roots")));
                    }
                    root = Some(i);
                    units.push(Unit::Word(stripped.to_string()));
                } else {
                    units.push(Unit::Word(w.to_string()));
                }
            }
        }
    }
    let count = |u: &Unit| units.iter().filter(|x| *x == u).count();
    if count(&Unit::Subj) != 1 || count(&Unit::Obj) != 1 {
        return Err(Error::Generation(format!(
            "template `{text}` needs exactly one {{S}} and one {{O}}"
        )));
    }
    let root = match root {
        Some(r) => r,
        None => units
            .iter()
            .position(|u| matches!(u, Unit::Word(_)))
            .ok_or_else(|| Error::Generation(format!("template `{text}` has no words")))?,
    };
    Ok(Template { units, root })
}

fn is_punct(w: &str) -> bool {
    w.chars().all(|c| c.is_ascii_punctuation())
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "sa", "tor", "vi", "bel", "da", "no", "ri", "gan", "zu", "fe", "hal", "po",
];

fn pseudo_name(rng: &mut ChaCha8Rng) -> String {
    let parts = rng.gen_range(2..=3);
    let mut s: String = (0..parts).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    templates: BTreeMap<String, Template>,
    /// Legal pairs of every relation that uses a template.
    template_pairs: BTreeMap<String, BTreeSet<(String, String)>>,
    positives: Vec<(usize, usize)>,
    names: BTreeMap<String, Vec<String>>,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let types: BTreeSet<&str> = spec.entity_types.iter().map(String::as_str).collect();
        if types.is_empty() {
            return Err(Error::Generation("no entity types".into()));
        }
        if !(0.0..=1.0).contains(&spec.negative_fraction) || !(0.0..=1.0).contains(&spec.violation_fraction) {
            return Err(Error::Generation("fractions must lie in [0, 1]".into()));
        }
        let mut templates = BTreeMap::new();
        let mut template_pairs: BTreeMap<String, BTreeSet<(String, String)>> = BTreeMap::new();
        let mut positives = Vec::new();
        for (ri, r) in spec.relations.iter().enumerate() {
            if r.name == NO_RELATION {
                return Err(Error::Generation(format!("relation name `{NO_RELATION}` is reserved")));
            }
            for [s, o] in &r.pairs {
                for t in [s, o] {
                    if !types.contains(t.as_str()) {
                        return Err(Error::Generation(format!("relation `{}` uses unknown type `{t}`", r.name)));
                    }
                }
            }
            for t in &r.templates {
                templates.insert(t.clone(), parse_template(t)?);
                let entry = template_pairs.entry(t.clone()).or_default();
                entry.extend(r.pairs.iter().map(|[s, o]| (s.clone(), o.clone())));
            }
            if !r.templates.is_empty() {
                for pi in 0..r.pairs.len() {
                    positives.push((ri, pi));
                }
            }
        }
        for t in &spec.negative_templates {
            templates.insert(t.clone(), parse_template(t)?);
        }
        if positives.is_empty() {
            return Err(Error::Generation("no legal (subject type, relation, object type) triple".into()));
        }
        let mut names = BTreeMap::new();
        for t in &spec.entity_types {
            let pool: Vec<String> = (0..spec.names_per_type.max(1)).map(|_| pseudo_name(rng)).collect();
            names.insert(t.clone(), pool);
        }
        Ok(Self {
            spec,
            templates,
            template_pairs,
            positives,
            names,
        })
    }

    fn mention(&self, ty: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
        let pool = &self.names[ty];
        let len = rng.gen_range(1..=2);
        (0..len).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
    }

    fn render(&self, template: &str, s_type: &str, o_type: &str, relation: &str, rng: &mut ChaCha8Rng) -> Sentence {
        let tpl = &self.templates[template];
        let n_fill = rng.gen_range(0..=self.spec.max_fillers);
        let fillers: Vec<String> = if self.spec.filler_words.is_empty() {
            Vec::new()
        } else {
            (0..n_fill)
                .map(|_| self.spec.filler_words[rng.gen_range(0..self.spec.filler_words.len())].clone())
                .collect()
        };
        let subj_words = self.mention(s_type, rng);
        let obj_words = self.mention(o_type, rng);

        let mut tokens: Vec<String> = fillers.clone();
        let mut pos: Vec<String> = vec!["RB".into(); fillers.len()];
        let mut ner: Vec<String> = vec!["O".into(); fillers.len()];
        // token range of every unit
        let mut ranges = Vec::with_capacity(tpl.units.len());
        for (ui, unit) in tpl.units.iter().enumerate() {
            let start = tokens.len();
            match unit {
                Unit::Word(w) => {
                    tokens.push(w.clone());
                    let next_is_slot = matches!(tpl.units.get(ui + 1), Some(Unit::Subj | Unit::Obj));
                    pos.push(if ui == tpl.root {
                        "VBD".into()
                    } else if is_punct(w) {
                        w.clone()
                    } else if next_is_slot {
                        "IN".into()
                    } else {
                        "NN".into()
                    });
                    ner.push("O".into());
                }
                Unit::Subj | Unit::Obj => {
                    let (words, ty) = if *unit == Unit::Subj {
                        (&subj_words, s_type)
                    } else {
                        (&obj_words, o_type)
                    };
                    for w in words {
                        tokens.push(w.clone());
                        pos.push("NNP".into());
                        ner.push(ty.to_string());
                    }
                }
            }
            ranges.push((start, tokens.len() - 1));
        }

        let root_tok = ranges[tpl.root].0;
        let mut heads = vec![0usize; tokens.len()];
        for h in heads.iter_mut().take(fillers.len()) {
            *h = root_tok + 1;
        }
        for (ui, unit) in tpl.units.iter().enumerate() {
            let (start, end) = ranges[ui];
            match unit {
                Unit::Word(_) if ui == tpl.root => heads[start] = 0,
                Unit::Word(_) => {
                    heads[start] = match tpl.units.get(ui + 1) {
                        Some(Unit::Subj | Unit::Obj) => ranges[ui + 1].1 + 1,
                        _ => root_tok + 1,
                    };
                }
                Unit::Subj | Unit::Obj => {
                    for h in heads.iter_mut().take(end).skip(start) {
                        *h = end + 1;
                    }
                    heads[end] = root_tok + 1;
                }
            }
        }

        let slot = |u: Unit| {
            let i = tpl.units.iter().position(|x| *x == u).unwrap();
            Span::new(ranges[i].0, ranges[i].1)
        };
        Sentence {
            id: None,
            tokens,
            subj: slot(Unit::Subj),
            obj: slot(Unit::Obj),
            subj_type: s_type.to_string(),
            obj_type: o_type.to_string(),
            pos,
            ner,
            heads,
            relation: relation.to_string(),
        }
    }

    fn positive(&self, rng: &mut ChaCha8Rng) -> Sentence {
        let (ri, pi) = self.positives[rng.gen_range(0..self.positives.len())];
        let r = &self.spec.relations[ri];
        let [s, o] = &r.pairs[pi];
        let t = &r.templates[rng.gen_range(0..r.templates.len())];
        self.render(t, s, o, &r.name, rng)
    }

    fn negative(&self, rng: &mut ChaCha8Rng) -> Result<Sentence> {
        let types = &self.spec.entity_types;
        if rng.gen_bool(self.spec.violation_fraction) {
            let (ri, _) = self.positives[rng.gen_range(0..self.positives.len())];
            let r = &self.spec.relations[ri];
            let t = &r.templates[rng.gen_range(0..r.templates.len())];
            let legal = &self.template_pairs[t];
            let illegal: Vec<(&String, &String)> = types
                .iter()
                .flat_map(|s| types.iter().map(move |o| (s, o)))
                .filter(|(s, o)| !legal.contains(&((*s).clone(), (*o).clone())))
                .collect();
            if let Some((s, o)) = illegal.choose(rng) {
                return Ok(self.render(t, s, o, NO_RELATION, rng));
            }
        }
        if self.spec.negative_templates.is_empty() {
            return Err(Error::Generation(
                "cannot build negatives: no negative templates and no type-violating pairs".into(),
            ));
        }
        let t = &self.spec.negative_templates[rng.gen_range(0..self.spec.negative_templates.len())];
        let s = &types[rng.gen_range(0..types.len())];
        let o = &types[rng.gen_range(0..types.len())];
        Ok(self.render(t, s, o, NO_RELATION, rng))
    }

    fn split(&self, size: usize, split: Split, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        let n_neg = (self.spec.negative_fraction * size as f64).round() as usize;
        let mut labels: Vec<bool> = (0..size).map(|i| i < n_neg).collect();
        labels.shuffle(rng);
        let sentences = labels
            .into_iter()
            .map(|neg| if neg { self.negative(rng) } else { Ok(self.positive(rng)) })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(sentences, split)
    }
}

/// Generate train, dev and test splits. Identical `(spec, seed)` inputs
/// produce identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generator = Generator::new(spec, &mut rng)?;
    let train = generator.split(spec.train_size, Split::Train, &mut rng)?;
    let dev = generator.split(spec.dev_size, Split::Dev, &mut rng)?;
    let test = generator.split(spec.test_size, Split::Test, &mut rng)?;
    Ok((train, dev, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dataset_to_json;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            entity_types: ["PERSON", "CITY", "COUNTRY", "ORGANIZATION"].map(String::from).to_vec(),
            relations: vec![
                rel("LivesIn", &[("PERSON", "CITY")], &["{S} *lives in {O}", "{S} has *resided in {O}"]),
                rel("BornIn", &[("PERSON", "CITY"), ("PERSON", "COUNTRY")], &["{S} was *born in {O}"]),
                rel("WorksFor", &[("PERSON", "ORGANIZATION")], &["{S} *works for {O}"]),
                rel("BasedIn", &[("ORGANIZATION", "CITY"), ("ORGANIZATION", "COUNTRY")], &["{S} is *based in {O}"]),
                rel("Leads", &[("PERSON", "ORGANIZATION")], &["{S} *leads {O}", "{O} is *led by {S}"]),
            ],
            train_size: 200,
            dev_size: 50,
            test_size: 50,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = small_spec();
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        for (x, y) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2)] {
            assert_eq!(dataset_to_json(x), dataset_to_json(y));
        }
        assert_eq!((a.0.len(), a.1.len(), a.2.len()), (200, 50, 50));
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(dataset_to_json(&a.0), dataset_to_json(&c.0));
    }

    #[test]
    fn negative_fraction_is_exact_up_to_rounding() {
        let mut spec = small_spec();
        spec.negative_fraction = 0.8;
        let (train, dev, _) = generate_synthetic(&spec, 3).unwrap();
        assert_eq!(train.sentences.iter().filter(|s| s.is_negative()).count(), 160);
        assert_eq!(dev.sentences.iter().filter(|s| s.is_negative()).count(), 40);
    }

    #[test]
    fn generated_triples_are_legal() {
        let spec = small_spec();
        let (train, _, _) = generate_synthetic(&spec, 11).unwrap();
        for s in &train.sentences {
            if s.is_negative() {
                continue;
            }
            let r = spec.relation(&s.relation).unwrap();
            assert!(r.pairs.contains(&[s.subj_type.clone(), s.obj_type.clone()]), "{s:?}");
        }
        let lives: Vec<_> = train.sentences.iter().filter(|s| s.relation == "LivesIn").collect();
        assert!(!lives.is_empty());
        assert!(lives.iter().all(|s| s.subj_type == "PERSON" && s.obj_type == "CITY"));
    }

    #[test]
    fn parse_trees_are_valid_and_mentions_typed() {
        let (train, _, _) = generate_synthetic(&SyntheticSpec::default(), 2).unwrap();
        for (i, s) in train.sentences.iter().enumerate() {
            s.validate(i).unwrap();
            for j in s.subj.indices() {
                assert_eq!(s.ner[j], s.subj_type);
            }
        }
    }

    #[test]
    fn infeasible_spec_is_rejected() {
        let mut spec = small_spec();
        for r in &mut spec.relations {
            r.pairs.clear();
        }
        assert!(matches!(generate_synthetic(&spec, 1), Err(Error::Generation(_))));

        let mut spec = small_spec();
        spec.relations[0].templates = vec!["{S} lives".into()];
        assert!(generate_synthetic(&spec, 1).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = SyntheticSpec::default();
        assert_eq!(SyntheticSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let partial = SyntheticSpec::from_toml("train_size = 10\n").unwrap();
        assert_eq!(partial.train_size, 10);
        assert_eq!(partial.relations, spec.relations);
    }
}
