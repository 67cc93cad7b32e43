//! Caption parsing into textual scene graphs and image-level label sets.

mod labels;
mod lemma;
mod parse;
mod vocab;

pub use labels::{
    extract_labels, extract_labels_with_stats, read_label_records, write_label_records, ExtractStats,
    LabelRecord, LabelSet,
};
pub use lemma::{lemmatize, lemmatize_phrase};
pub use parse::{parse_scene_graph, tokenize, ObjectAttribute, Relation, SceneObject, TextualSceneGraph};
pub use vocab::{AttrPair, AttributeRegistry, CategoryId, ValueId, Vocabulary};
