//! A small rule-based caption parser producing a textual scene graph.
//!
//! Objects are found by matching lemmatized unigrams and bigrams against the
//! vocabulary. Attributes come from two patterns: modifier words directly in
//! front of a noun ("a large brown cat") and copula complements ("the cat is
//! brown"). Relations are prepositions sitting between two matched nouns.

use serde::Serialize;

use super::lemma::lemmatize;
use super::vocab::{AttrPair, AttributeRegistry, Vocabulary};

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "its", "his", "her",
    "their", "my", "our", "your", "one", "two", "three", "four", "five", "six", "several", "many", "few",
    "another",
];

const COPULAS: &[&str] = &["is", "are", "was", "were"];

const CONJUNCTIONS: &[&str] = &["and", "or", "but", "while", "as", "where", "which", "who", "then"];

const FUNCTION_WORDS: &[&str] = &[
    "be", "been", "being", "has", "have", "had", "there", "here", "it", "they", "he", "she", "we", "i",
    "you", "s", "of", "to", "for", "from", "up", "down", "out", "off", "not",
];

/// Longest first, so "in front of" wins over "in".
const PREPOSITIONS: &[&str] = &[
    "in front of",
    "on top of",
    "next to",
    "close to",
    "on",
    "in",
    "under",
    "near",
    "beside",
    "behind",
    "above",
    "below",
    "against",
    "with",
    "by",
    "at",
    "inside",
    "over",
    "beneath",
    "across",
    "along",
    "around",
    "atop",
    "between",
    "underneath",
    "among",
    "outside",
    "toward",
    "towards",
    "onto",
    "into",
];

/// Objects, attributes and relations read off one caption.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TextualSceneGraph {
    pub objects: Vec<SceneObject>,
    pub attributes: Vec<ObjectAttribute>,
    pub relations: Vec<Relation>,
    /// Modifier words attached to matched objects but absent from the registry.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneObject {
    pub surface: String,
    /// `None` for a noun phrase head that matched no vocabulary class.
    pub class: Option<usize>,
    #[serde(skip)]
    span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectAttribute {
    pub object: usize,
    pub category: usize,
    pub value: usize,
}

impl ObjectAttribute {
    pub fn pair(&self) -> AttrPair {
        AttrPair::new(self.category, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Relation {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
}

impl TextualSceneGraph {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Attribute pairs attached to object `index`, in parse order.
    pub fn attributes_of(&self, index: usize) -> impl Iterator<Item = AttrPair> + '_ {
        self.attributes
            .iter()
            .filter(move |a| a.object == index)
            .map(ObjectAttribute::pair)
    }

    fn add_attribute(&mut self, object: usize, pair: AttrPair) {
        let taken = self
            .attributes
            .iter()
            .any(|a| a.object == object && a.category == pair.category);
        if !taken {
            self.attributes.push(ObjectAttribute {
                object,
                category: pair.category,
                value: pair.value,
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Determiner,
    Copula,
    Conjunction,
    Function,
    /// Part of a preposition phrase; the payload indexes `PREPOSITIONS`.
    Preposition(usize),
    Word,
    /// First token of a matched class noun of `len` tokens.
    Noun {
        class: usize,
        len: usize,
    },
    /// Second token of a two-word class noun.
    NounTail,
}

impl Kind {
    fn is_boundary(self) -> bool {
        !matches!(self, Kind::Word | Kind::Noun { .. } | Kind::NounTail)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn classify(tokens: &[String], vocab: &Vocabulary) -> Vec<Kind> {
    let n = tokens.len();
    let mut kinds = vec![Kind::Word; n];
    let mut i = 0;
    'outer: while i < n {
        for (p, prep) in PREPOSITIONS.iter().enumerate() {
            let words: Vec<&str> = prep.split(' ').collect();
            if i + words.len() <= n && words.iter().zip(&tokens[i..]).all(|(w, t)| w == t) {
                for k in kinds.iter_mut().skip(i).take(words.len()) {
                    *k = Kind::Preposition(p);
                }
                i += words.len();
                continue 'outer;
            }
        }
        let t = tokens[i].as_str();
        kinds[i] = if DETERMINERS.contains(&t) {
            Kind::Determiner
        } else if COPULAS.contains(&t) {
            Kind::Copula
        } else if CONJUNCTIONS.contains(&t) {
            Kind::Conjunction
        } else if FUNCTION_WORDS.contains(&t) {
            Kind::Function
        } else {
            Kind::Word
        };
        i += 1;
    }

    let lemmas: Vec<String> = tokens.iter().map(|t| lemmatize(t)).collect();
    let mut i = 0;
    while i < n {
        if kinds[i] != Kind::Word {
            i += 1;
            continue;
        }
        if vocab.max_form_tokens() >= 2 && i + 1 < n && kinds[i + 1] == Kind::Word {
            let bigram = format!("{} {}", lemmas[i], lemmas[i + 1]);
            if let Some(class) = vocab.lookup_lemma(&bigram) {
                kinds[i] = Kind::Noun { class, len: 2 };
                kinds[i + 1] = Kind::NounTail;
                i += 2;
                continue;
            }
        }
        if let Some(class) = vocab.lookup_lemma(&lemmas[i]) {
            kinds[i] = Kind::Noun { class, len: 1 };
        }
        i += 1;
    }
    kinds
}

/// Token range `[start, end)` of the copula complement following `copula`.
fn complement_range(kinds: &[Kind], copula: usize) -> (usize, usize) {
    let start = copula + 1;
    let mut end = start;
    while end < kinds.len() {
        match kinds[end] {
            Kind::Word => end += 1,
            // "red and blue": continue only when a bare word follows.
            Kind::Conjunction if end > start && kinds.get(end + 1) == Some(&Kind::Word) => end += 1,
            _ => break,
        }
    }
    (start, end)
}

pub fn parse_scene_graph(
    caption: &str,
    vocab: &Vocabulary,
    registry: &AttributeRegistry,
) -> TextualSceneGraph {
    let tokens = tokenize(caption);
    let kinds = classify(&tokens, vocab);
    let n = tokens.len();
    let mut graph = TextualSceneGraph::default();

    let mut consumed = vec![false; n];
    let copulas: Vec<(usize, (usize, usize))> = (0..n)
        .filter(|&i| kinds[i] == Kind::Copula)
        .map(|i| (i, complement_range(&kinds, i)))
        .collect();
    for &(_, (s, e)) in &copulas {
        consumed[s..e].iter_mut().for_each(|c| *c = true);
    }

    // Noun-phrase chunking over runs of non-boundary tokens.
    let mut modifiers: Vec<usize> = Vec::new();
    let mut run_has_noun = false;
    let mut run_after_determiner = false;
    let flush = |graph: &mut TextualSceneGraph,
                 modifiers: &mut Vec<usize>,
                 run_has_noun: bool,
                 run_after_determiner: bool| {
        if !run_has_noun && run_after_determiner {
            if let Some((&head, rest)) = modifiers.split_last() {
                let index = graph.objects.len();
                graph.objects.push(SceneObject {
                    surface: tokens[head].clone(),
                    class: None,
                    span: (head, head + 1),
                });
                for &m in rest {
                    if let Some(pair) = registry.lookup_word(&tokens[m]) {
                        graph.add_attribute(index, pair);
                    }
                }
            }
        }
        modifiers.clear();
    };
    let mut i = 0;
    while i < n {
        match kinds[i] {
            Kind::Noun { class, len } => {
                let index = graph.objects.len();
                graph.objects.push(SceneObject {
                    surface: tokens[i..i + len].join(" "),
                    class: Some(class),
                    span: (i, i + len),
                });
                for &m in &modifiers {
                    match registry.lookup_word(&tokens[m]) {
                        Some(pair) => graph.add_attribute(index, pair),
                        None => graph.dropped.push(tokens[m].clone()),
                    }
                }
                modifiers.clear();
                run_has_noun = true;
                i += len;
                continue;
            }
            Kind::Word if !consumed[i] => modifiers.push(i),
            Kind::Word | Kind::NounTail => {}
            boundary => {
                debug_assert!(boundary.is_boundary());
                flush(&mut graph, &mut modifiers, run_has_noun, run_after_determiner);
                run_has_noun = false;
                run_after_determiner = boundary == Kind::Determiner;
            }
        }
        if consumed[i] {
            // A copula complement ends the current run.
            flush(&mut graph, &mut modifiers, run_has_noun, run_after_determiner);
            run_has_noun = false;
            run_after_determiner = false;
        }
        i += 1;
    }
    flush(&mut graph, &mut modifiers, run_has_noun, run_after_determiner);

    // Copula attributes: "X is ADJ (and ADJ)*".
    for (copula, (s, e)) in copulas {
        let Some(subject) = graph.objects.iter().position(|o| o.span.1 == copula) else {
            continue;
        };
        let matched = graph.objects[subject].class.is_some();
        for t in s..e {
            if kinds[t] != Kind::Word {
                continue;
            }
            match registry.lookup_word(&tokens[t]) {
                Some(pair) => graph.add_attribute(subject, pair),
                None if matched => graph.dropped.push(tokens[t].clone()),
                None => {}
            }
        }
    }

    // Relations between consecutive matched nouns separated by a preposition.
    let mut order: Vec<usize> = (0..graph.objects.len()).collect();
    order.sort_by_key(|&o| graph.objects[o].span.0);
    for pair in order.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if graph.objects[a].class.is_none() || graph.objects[b].class.is_none() {
            continue;
        }
        let gap = graph.objects[a].span.1..graph.objects[b].span.0;
        if let Some(p) = gap.clone().find_map(|t| match kinds[t] {
            Kind::Preposition(p) => Some(p),
            _ => None,
        }) {
            graph.relations.push(Relation {
                subject: a,
                predicate: PREPOSITIONS[p].to_string(),
                object: b,
            });
        }
    }

    graph
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(caption: &str) -> (TextualSceneGraph, Vocabulary, AttributeRegistry) {
        let vocab = Vocabulary::builtin();
        let reg = AttributeRegistry::builtin();
        (parse_scene_graph(caption, &vocab, &reg), vocab, reg)
    }

    fn matched(graph: &TextualSceneGraph, vocab: &Vocabulary) -> Vec<String> {
        graph
            .objects
            .iter()
            .filter_map(|o| o.class)
            .map(|c| vocab.name(c).unwrap().to_string())
            .collect()
    }

    #[test]
    fn apple_next_to_pear() {
        let (g, vocab, reg) = parse("a red apple next to a pear");
        assert_eq!(matched(&g, &vocab), vec!["apple", "pear"]);
        assert_eq!(
            g.attributes_of(0).collect::<Vec<_>>(),
            vec![reg.pair("color", "red").unwrap()]
        );
        assert_eq!(g.attributes_of(1).count(), 0);
        assert_eq!(
            g.relations,
            vec![Relation {
                subject: 0,
                predicate: "next to".into(),
                object: 1
            }]
        );
    }

    #[test]
    fn stop_sign_glowing() {
        let (g, vocab, reg) = parse("a red stop sign is glowing against the dark sky");
        assert_eq!(matched(&g, &vocab), vec!["stop sign"]);
        let stop = g.objects.iter().position(|o| o.class.is_some()).unwrap();
        assert_eq!(
            g.attributes_of(stop).collect::<Vec<_>>(),
            vec![reg.pair("color", "red").unwrap()]
        );
        // "sky" is an unmatched head noun; no relation to an unmatched noun.
        assert!(g.objects.iter().any(|o| o.class.is_none() && o.surface == "sky"));
        assert!(g.relations.is_empty());
        assert_eq!(g.dropped, vec!["glowing"]);
    }

    #[test]
    fn no_content_words() {
        let (g, _, _) = parse("the the the");
        assert!(g.is_empty());
        assert!(g.attributes.is_empty());
    }

    #[test]
    fn copula_conjoined_adjectives() {
        let (g, vocab, reg) = parse("The cars are red and big.");
        assert_eq!(matched(&g, &vocab), vec!["car"]);
        assert_eq!(
            g.attributes_of(0).collect::<Vec<_>>(),
            vec![
                reg.pair("color", "red").unwrap(),
                reg.pair("size", "large").unwrap()
            ]
        );
    }

    #[test]
    fn mutual_exclusivity_within_caption() {
        let (g, _, reg) = parse("a red green apple");
        assert_eq!(
            g.attributes_of(0).collect::<Vec<_>>(),
            vec![reg.pair("color", "red").unwrap()]
        );
    }

    #[test]
    fn plural_bigram_and_synonym() {
        let (g, vocab, _) = parse("two stop signs near a puppy");
        assert_eq!(matched(&g, &vocab), vec!["stop sign", "dog"]);
        assert_eq!(g.relations[0].predicate, "near");
    }

    #[test]
    fn unknown_modifiers_dropped() {
        let (g, _, reg) = parse("a fluffy large brown cat on a wooden chair");
        assert_eq!(g.dropped, vec!["fluffy"]);
        assert_eq!(
            g.attributes_of(0).collect::<Vec<_>>(),
            vec![
                reg.pair("size", "large").unwrap(),
                reg.pair("color", "brown").unwrap()
            ]
        );
        assert_eq!(
            g.attributes_of(1).collect::<Vec<_>>(),
            vec![reg.pair("material", "wooden").unwrap()]
        );
        assert_eq!(g.relations[0].predicate, "on");
    }

    #[test]
    fn conjunction_is_not_a_relation() {
        let (g, vocab, _) = parse("a cat and a dog in front of a bus");
        assert_eq!(matched(&g, &vocab), vec!["cat", "dog", "bus"]);
        assert_eq!(g.relations.len(), 1);
        assert_eq!(g.relations[0].predicate, "in front of");
        assert_eq!((g.relations[0].subject, g.relations[0].object), (1, 2));
    }

    #[test]
    fn copula_after_clause_boundary() {
        let (g, _, reg) = parse("a dog next to a cup and the cup is blue");
        let cups: Vec<usize> = (0..g.objects.len())
            .filter(|&o| g.objects[o].surface == "cup")
            .collect();
        assert_eq!(cups.len(), 2);
        assert_eq!(g.attributes_of(cups[0]).count(), 0);
        assert_eq!(
            g.attributes_of(cups[1]).collect::<Vec<_>>(),
            vec![reg.pair("color", "blue").unwrap()]
        );
    }
}
