use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::parse::parse_scene_graph;
use super::vocab::{AttrPair, AttributeRegistry, CategoryId, ValueId, Vocabulary};
use crate::error::{Error, Result};

/// Image-level supervision: the object classes `O` and, per class, the
/// attribute pairs `A_o` with at most one value per category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    objects: BTreeSet<usize>,
    attributes: BTreeMap<usize, BTreeMap<CategoryId, ValueId>>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_objects(objects: impl IntoIterator<Item = usize>) -> Self {
        LabelSet {
            objects: objects.into_iter().collect(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn insert_object(&mut self, class: usize) {
        self.objects.insert(class);
    }

    /// Adds `pair` for `class` unless the class already has a value in that
    /// category. Returns whether the pair was stored.
    pub fn insert_attribute(&mut self, class: usize, pair: AttrPair) -> bool {
        self.objects.insert(class);
        let per_class = self.attributes.entry(class).or_default();
        match per_class.get(&pair.category) {
            Some(_) => false,
            None => {
                per_class.insert(pair.category, pair.value);
                true
            }
        }
    }

    pub fn objects(&self) -> &BTreeSet<usize> {
        &self.objects
    }

    pub fn contains(&self, class: usize) -> bool {
        self.objects.contains(&class)
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// The pairs `A_class`, ordered by category.
    pub fn pairs(&self, class: usize) -> impl Iterator<Item = AttrPair> + '_ {
        self.attributes
            .get(&class)
            .into_iter()
            .flat_map(|m| m.iter().map(|(&a, &v)| AttrPair::new(a, v)))
    }

    /// Every `(class, pair)` in class then category order.
    pub fn all_pairs(&self) -> impl Iterator<Item = (usize, AttrPair)> + '_ {
        self.attributes
            .iter()
            .flat_map(|(&c, m)| m.iter().map(move |(&a, &v)| (c, AttrPair::new(a, v))))
    }

    pub fn num_pairs(&self) -> usize {
        self.attributes.values().map(BTreeMap::len).sum()
    }

    pub fn validate(&self, num_classes: usize, attribute_sizes: &[usize]) -> Result<()> {
        if let Some(&c) = self.objects.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Label(format!("class {c} out of range 0..{num_classes}")));
        }
        for (c, pair) in self.all_pairs() {
            let ok = attribute_sizes
                .get(pair.category)
                .is_some_and(|&n| pair.value < n);
            if !ok || !self.objects.contains(&c) {
                return Err(Error::Label(format!(
                    "attribute ({}, {}) invalid for class {c}",
                    pair.category, pair.value
                )));
            }
        }
        Ok(())
    }
}

/// Parse statistics gathered alongside [`extract_labels_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub objects_matched: usize,
    pub objects_unmatched: usize,
    pub attributes_kept: usize,
    pub attributes_dropped: usize,
}

impl std::ops::AddAssign for ExtractStats {
    fn add_assign(&mut self, o: Self) {
        self.objects_matched += o.objects_matched;
        self.objects_unmatched += o.objects_unmatched;
        self.attributes_kept += o.attributes_kept;
        self.attributes_dropped += o.attributes_dropped;
    }
}

pub fn extract_labels(
    captions: &[impl AsRef<str>],
    vocab: &Vocabulary,
    registry: &AttributeRegistry,
) -> LabelSet {
    extract_labels_with_stats(captions, vocab, registry).0
}

/// Union of the per-caption scene graphs projected onto class indices.
/// Conflicting values for one (class, category) resolve to the first seen.
pub fn extract_labels_with_stats(
    captions: &[impl AsRef<str>],
    vocab: &Vocabulary,
    registry: &AttributeRegistry,
) -> (LabelSet, ExtractStats) {
    let mut labels = LabelSet::new();
    let mut stats = ExtractStats::default();
    for caption in captions {
        let caption = caption.as_ref();
        if caption.trim().is_empty() {
            continue;
        }
        let graph = parse_scene_graph(caption, vocab, registry);
        stats.attributes_dropped += graph.dropped.len();
        for object in &graph.objects {
            match object.class {
                Some(c) => {
                    stats.objects_matched += 1;
                    labels.insert_object(c);
                }
                None => stats.objects_unmatched += 1,
            }
        }
        for attr in &graph.attributes {
            if let Some(c) = graph.objects[attr.object].class {
                stats.attributes_kept += 1;
                labels.insert_attribute(c, attr.pair());
            }
        }
    }
    (labels, stats)
}

/// One line of a label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub image_id: u64,
    pub objects: Vec<usize>,
    /// `[class, category, value]` triples.
    pub attributes: Vec<[usize; 3]>,
}

impl LabelRecord {
    pub fn new(image_id: u64, labels: &LabelSet) -> Self {
        LabelRecord {
            image_id,
            objects: labels.objects().iter().copied().collect(),
            attributes: labels
                .all_pairs()
                .map(|(c, p)| [c, p.category, p.value])
                .collect(),
        }
    }

    pub fn to_labels(&self) -> LabelSet {
        let mut labels = LabelSet::from_objects(self.objects.iter().copied());
        for &[c, a, v] in &self.attributes {
            labels.insert_attribute(c, AttrPair::new(a, v));
        }
        labels
    }
}

pub fn write_label_records<W: Write>(mut out: W, records: &[LabelRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_label_records<R: BufRead>(input: R, path: &std::path::Path) -> Result<Vec<LabelRecord>> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
