//! Prompt normalization and the descriptor vocabulary shared by the toy
//! backbone, the toy critic and the mock agents.
//!
//! Each descriptor owns one basis pattern of the toy backbone (same index).
//! Mock agents expand entity descriptors through per-agent implication
//! tables; agent `i` (1-based) uses table `(i - 1) % LEXICON_COUNT`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Entity,
    Attribute,
    Relation,
}

/// Index into [`VOCABULARY`].
pub type DescriptorId = usize;

pub struct Descriptor {
    pub phrase: &'static str,
    pub kind: DescriptorKind,
}

const fn d(phrase: &'static str, kind: DescriptorKind) -> Descriptor {
    Descriptor { phrase, kind }
}

use DescriptorKind::{Attribute as A, Entity as E, Relation as R};

pub const VOCABULARY: &[Descriptor] = &[
    d("fox", E),
    d("rabbit", E),
    d("knight", E),
    d("dog", E),
    d("queen", E),
    d("fairy", E),
    d("castle", E),
    d("forest", E),
    d("lake", E),
    d("mountain", E),
    d("apple", E),
    d("lantern", E),
    d("orange", A),
    d("fluffy", A),
    d("white", A),
    d("red", A),
    d("armored", A),
    d("steel", A),
    d("golden", A),
    d("glowing", A),
    d("steampunk", A),
    d("brass", A),
    d("icy", A),
    d("crystal", A),
    d("snowy", A),
    d("misty", A),
    d("ancient", A),
    d("tall", A),
    d("tiny", A),
    d("wooden", A),
    d("silver", A),
    d("blue", A),
    d("green", A),
    d("shiny", A),
    d("velvet", A),
    d("dark", A),
    d("wearing cape", R),
    d("holding sword", R),
    d("beside river", R),
    d("under moonlight", R),
    d("among trees", R),
    d("riding horse", R),
];

/// Number of distinct mock-agent implication tables.
pub const LEXICON_COUNT: usize = 6;

type Table = &'static [(&'static str, &'static [&'static str])];

const LEXICONS: [Table; LEXICON_COUNT] = [
    &[
        ("fox", &["orange"]),
        ("rabbit", &["white"]),
        ("knight", &["armored"]),
        ("dog", &["steampunk"]),
        ("queen", &["icy"]),
        ("fairy", &["glowing"]),
        ("castle", &["ancient"]),
        ("forest", &["misty"]),
    ],
    &[
        ("fox", &["fluffy"]),
        ("rabbit", &["fluffy"]),
        ("knight", &["steel", "holding sword"]),
        ("dog", &["brass"]),
        ("queen", &["crystal"]),
        ("fairy", &["tiny"]),
        ("castle", &["tall"]),
        ("forest", &["green"]),
    ],
    &[
        ("fox", &["among trees"]),
        ("knight", &["wearing cape"]),
        ("dog", &["shiny"]),
        ("queen", &["silver", "wearing cape"]),
        ("fairy", &["under moonlight"]),
        ("castle", &["dark"]),
        ("forest", &["dark"]),
        ("lake", &["blue"]),
    ],
    &[
        ("fox", &["under moonlight"]),
        ("knight", &["riding horse"]),
        ("dog", &["red"]),
        ("queen", &["velvet"]),
        ("fairy", &["crystal"]),
        ("castle", &["beside river"]),
        ("mountain", &["snowy"]),
    ],
    &[
        ("fox", &["snowy"]),
        ("rabbit", &["tiny"]),
        ("knight", &["golden"]),
        ("dog", &["wooden"]),
        ("queen", &["golden"]),
        ("forest", &["ancient"]),
        ("mountain", &["tall"]),
    ],
    &[
        ("fox", &["dark"]),
        ("rabbit", &["among trees"]),
        ("knight", &["shiny"]),
        ("fairy", &["silver"]),
        ("lake", &["misty"]),
        ("mountain", &["dark"]),
    ],
];

/// Tokens ignored when matching descriptor phrases.
const STOPWORDS: &[&str] = &["a", "an", "the", "of", "and", "with", "in", "on", "at", "to"];

/// Lowercases, turns punctuation into separators and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text
        .chars()
        .map(|ch| {
            if ch.is_alphanumeric() {
                ch.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    normalized.split_whitespace().map(str::to_owned).collect()
}

pub fn descriptor(id: DescriptorId) -> &'static Descriptor {
    &VOCABULARY[id]
}

pub fn lookup(phrase: &str) -> Option<DescriptorId> {
    let tokens = tokenize(phrase).join(" ");
    VOCABULARY.iter().position(|d| d.phrase == tokens)
}

/// Descriptors mentioned in `tokens`, greedy longest match, in order of
/// first appearance, without repeats.
pub fn extract<S: AsRef<str>>(tokens: &[S]) -> Vec<DescriptorId> {
    let content: Vec<&str> = tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !STOPWORDS.contains(t))
        .collect();
    let mut found = Vec::new();
    let mut i = 0;
    while i < content.len() {
        let mut best: Option<(DescriptorId, usize)> = None;
        for (id, d) in VOCABULARY.iter().enumerate() {
            let n = d.phrase.split(' ').count();
            if i + n <= content.len()
                && d.phrase.split(' ').zip(&content[i..i + n]).all(|(a, b)| a == *b)
                && best.is_none_or(|(_, len)| n > len)
            {
                best = Some((id, n));
            }
        }
        match best {
            Some((id, n)) => {
                if !found.contains(&id) {
                    found.push(id);
                }
                i += n;
            }
            None => i += 1,
        }
    }
    found
}

pub fn extract_text(text: &str) -> Vec<DescriptorId> {
    extract(&tokenize(text))
}

/// Implications of `entity` under the table of 1-based `agent_id`.
pub fn implications(agent_id: u32, entity: DescriptorId) -> Vec<DescriptorId> {
    let table = LEXICONS[(agent_id.max(1) as usize - 1) % LEXICON_COUNT];
    let phrase = VOCABULARY[entity].phrase;
    table
        .iter()
        .filter(|(head, _)| *head == phrase)
        .flat_map(|(_, implied)| implied.iter())
        .map(|p| lookup(p).expect("lexicon phrases are in the vocabulary"))
        .collect()
}

/// Comma-separated canonical phrase list.
pub fn render(ids: &[DescriptorId]) -> String {
    ids.iter()
        .map(|&i| VOCABULARY[i].phrase)
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_normalizes() {
        assert_eq!(
            tokenize("A Red-Fox, in the SNOW!"),
            vec!["a", "red", "fox", "in", "the", "snow"]
        );
    }

    #[test]
    fn extraction_prefers_longest_phrase_and_dedups() {
        let ids = extract_text("a knight holding a sword, holding sword, knight");
        let phrases: Vec<_> = ids.iter().map(|&i| VOCABULARY[i].phrase).collect();
        assert_eq!(phrases, vec!["knight", "holding sword"]);
    }

    #[test]
    fn every_lexicon_phrase_resolves() {
        for agent in 1..=LEXICON_COUNT as u32 {
            for id in 0..VOCABULARY.len() {
                let _ = implications(agent, id);
            }
        }
    }

    #[test]
    fn vocabulary_phrases_are_unique() {
        for (i, a) in VOCABULARY.iter().enumerate() {
            for b in &VOCABULARY[i + 1..] {
                assert_ne!(a.phrase, b.phrase);
            }
        }
    }
}
