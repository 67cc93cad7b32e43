//! Rule-based noun lemmatizer: an exception table, then suffix stripping.

const EXCEPTIONS: &[(&str, &str)] = &[
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("teeth", "tooth"),
    ("feet", "foot"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("shelves", "shelf"),
    ("buses", "bus"),
    ("tomatoes", "tomato"),
    ("potatoes", "potato"),
    ("sheep", "sheep"),
    ("glasses", "glass"),
    ("skis", "ski"),
    ("ties", "tie"),
    ("pies", "pie"),
];

/// Words ending in `s` that are already singular.
const SINGULAR_S: &[&str] = &["bus", "glass", "grass", "gas", "lens", "canvas", "jeans"];

pub fn lemmatize(word: &str) -> String {
    if let Some((_, lemma)) = EXCEPTIONS.iter().find(|(w, _)| *w == word) {
        return (*lemma).to_string();
    }
    if SINGULAR_S.contains(&word) || word.len() <= 3 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["ches", "shes", "xes", "sses", "zzes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

/// Lemmatizes each whitespace-separated token and rejoins with single spaces.
pub fn lemmatize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .map(lemmatize)
        .collect::<Vec<_>>()
        .join(" ")
}
