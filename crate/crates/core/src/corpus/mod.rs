//! Sentence corpora: loading, type-substitution, feature derivation,
//! vocabularies, knowledge-graph answer sets and synthetic generation.

mod answers;
mod artifacts;
mod prune;
mod sentence;
mod split;
mod synth;
mod tacred;
mod vocab;

pub use answers::{build_answer_sets, AnswerSets, Triple};
pub use artifacts::{parse_answer_sets, parse_vocab, preprocess, Artifacts};
pub use prune::{prune_dependency_tree, PrunedTree};
pub use sentence::{
    positional_offsets, type_substitute, validate_heads, Dataset, Sentence, Span, Split,
    NO_RELATION,
};
pub use split::carve_dev_split;
pub use synth::{generate_synthetic, RelationSpec, SyntheticSpec};
pub use tacred::{dataset_to_json, load_dataset, parse_dataset, save_dataset, DatasetFormat};
pub use vocab::{build_vocab, EncodedSentence, Index, Vocab, PAD, UNK};
