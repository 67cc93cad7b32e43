use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::lemma::lemmatize_phrase;
use crate::error::{Error, Result};

const DEFAULT_VOCAB: &str = include_str!("../../data/vocab.toml");
const DEFAULT_REGISTRY: &str = include_str!("../../data/registry.toml");

/// Index of an attribute category inside an [`AttributeRegistry`].
pub type CategoryId = usize;
/// Index of a value inside its category.
pub type ValueId = usize;

/// One attribute assignment `(category, value)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttrPair {
    pub category: CategoryId,
    pub value: ValueId,
}

impl AttrPair {
    pub fn new(category: CategoryId, value: ValueId) -> Self {
        AttrPair { category, value }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    #[serde(rename = "class")]
    classes: Vec<ClassEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    name: String,
    #[serde(default)]
    synonyms: Vec<String>,
}

/// Ordered object classes. The background class sits at index `len()`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    class_names: Vec<String>,
    // lemmatized surface form -> class
    forms: HashMap<String, usize>,
    max_form_tokens: usize,
}

impl Vocabulary {
    pub fn new(class_names: Vec<String>, synonyms: &[(String, usize)]) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Vocabulary("no classes".into()));
        }
        let mut forms = HashMap::new();
        let mut max_form_tokens = 1;
        let mut insert = |surface: &str, class: usize, forms: &mut HashMap<String, usize>| {
            let lemma = lemmatize_phrase(surface);
            if lemma.is_empty() {
                return Err(Error::Vocabulary(format!("empty surface form for class {class}")));
            }
            let tokens = lemma.split(' ').count();
            if tokens > 2 {
                return Err(Error::Vocabulary(format!(
                    "\"{surface}\": at most two words are supported"
                )));
            }
            max_form_tokens = max_form_tokens.max(tokens);
            match forms.insert(lemma, class) {
                Some(prev) if prev != class => Err(Error::Vocabulary(format!(
                    "\"{surface}\" maps to both class {prev} and class {class}"
                ))),
                _ => Ok(()),
            }
        };
        for (i, name) in class_names.iter().enumerate() {
            if name.is_empty() || name.trim() != name || name.to_lowercase() != *name {
                return Err(Error::Vocabulary(format!(
                    "class name \"{name}\" must be non-empty, trimmed and lowercase"
                )));
            }
            if class_names[..i].contains(name) {
                return Err(Error::Vocabulary(format!("duplicate class \"{name}\"")));
            }
            insert(name, i, &mut forms)?;
        }
        for (surface, class) in synonyms {
            if *class >= class_names.len() {
                return Err(Error::Vocabulary(format!(
                    "synonym \"{surface}\" targets unknown class {class}"
                )));
            }
            insert(&surface.to_lowercase(), *class, &mut forms)?;
        }
        Ok(Vocabulary {
            class_names,
            forms,
            max_form_tokens,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: VocabFile = toml::from_str(text).map_err(|e| Error::Vocabulary(e.to_string()))?;
        let names: Vec<String> = file.classes.iter().map(|c| c.name.clone()).collect();
        let synonyms: Vec<(String, usize)> = file
            .classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.synonyms.iter().map(move |s| (s.clone(), i)))
            .collect();
        Vocabulary::new(names, &synonyms)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_VOCAB).expect("bundled vocabulary is valid")
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn background_index(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.class_names.get(class).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Looks up an already lemmatized surface form.
    pub(crate) fn lookup_lemma(&self, lemma: &str) -> Option<usize> {
        self.forms.get(lemma).copied()
    }

    pub(crate) fn max_form_tokens(&self) -> usize {
        self.max_form_tokens
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(rename = "category")]
    categories: Vec<CategoryEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryEntry {
    name: String,
    values: Vec<String>,
    #[serde(default)]
    words: BTreeMap<String, String>,
}

/// Attribute taxonomy: mutually exclusive value lists grouped by category.
#[derive(Debug, Clone)]
pub struct AttributeRegistry {
    categories: Vec<String>,
    values: Vec<Vec<String>>,
    word_map: HashMap<String, AttrPair>,
}

impl AttributeRegistry {
    /// `extra_words` are `(surface form, category, value)` aliases added on
    /// top of the identity mapping of every value string.
    pub fn new(
        categories: Vec<(String, Vec<String>)>,
        extra_words: &[(String, CategoryId, ValueId)],
    ) -> Result<Self> {
        let mut names = Vec::with_capacity(categories.len());
        let mut values = Vec::with_capacity(categories.len());
        let mut word_map: HashMap<String, AttrPair> = HashMap::new();
        let bind = |word: &str, pair: AttrPair, map: &mut HashMap<String, AttrPair>| match map
            .insert(word.to_string(), pair)
        {
            Some(prev) if prev != pair => Err(Error::Registry(format!(
                "word \"{word}\" maps to two attribute values"
            ))),
            _ => Ok(()),
        };
        for (a, (name, vals)) in categories.into_iter().enumerate() {
            if name.is_empty() || names.contains(&name) {
                return Err(Error::Registry(format!("bad or duplicate category \"{name}\"")));
            }
            if vals.is_empty() {
                return Err(Error::Registry(format!("category \"{name}\" has no values")));
            }
            for (v, val) in vals.iter().enumerate() {
                if val.is_empty() || val.contains(' ') || val.to_lowercase() != *val {
                    return Err(Error::Registry(format!(
                        "value \"{val}\" must be a single lowercase word"
                    )));
                }
                if vals[..v].contains(val) {
                    return Err(Error::Registry(format!(
                        "duplicate value \"{val}\" in category \"{name}\""
                    )));
                }
                bind(val, AttrPair::new(a, v), &mut word_map)?;
            }
            names.push(name);
            values.push(vals);
        }
        for (word, a, v) in extra_words {
            if values.get(*a).is_none_or(|vals| *v >= vals.len()) {
                return Err(Error::Registry(format!(
                    "word \"{word}\" targets unknown value ({a}, {v})"
                )));
            }
            bind(&word.to_lowercase(), AttrPair::new(*a, *v), &mut word_map)?;
        }
        Ok(AttributeRegistry {
            categories: names,
            values,
            word_map,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| Error::Registry(e.to_string()))?;
        let mut extra = Vec::new();
        for (a, cat) in file.categories.iter().enumerate() {
            for (word, target) in &cat.words {
                let v = cat.values.iter().position(|x| x == target).ok_or_else(|| {
                    Error::Registry(format!(
                        "word \"{word}\" targets \"{target}\", not a value of \"{}\"",
                        cat.name
                    ))
                })?;
                extra.push((word.clone(), a, v));
            }
        }
        let cats = file.categories.into_iter().map(|c| (c.name, c.values)).collect();
        AttributeRegistry::new(cats, &extra)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_REGISTRY).expect("bundled registry is valid")
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_names(&self) -> &[String] {
        &self.categories
    }

    pub fn category_index(&self, name: &str) -> Option<CategoryId> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn values(&self, category: CategoryId) -> &[String] {
        &self.values[category]
    }

    /// Number of values per category, in category order.
    pub fn sizes(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    pub fn value_name(&self, pair: AttrPair) -> Option<&str> {
        self.values
            .get(pair.category)
            .and_then(|v| v.get(pair.value))
            .map(String::as_str)
    }

    pub fn pair(&self, category: &str, value: &str) -> Option<AttrPair> {
        let a = self.category_index(category)?;
        let v = self.values[a].iter().position(|x| x == value)?;
        Some(AttrPair::new(a, v))
    }

    pub fn contains(&self, pair: AttrPair) -> bool {
        self.value_name(pair).is_some()
    }

    pub fn lookup_word(&self, word: &str) -> Option<AttrPair> {
        self.word_map.get(word).copied()
    }
}
