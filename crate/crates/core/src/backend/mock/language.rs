//! Rule-based reading of templated scene descriptions, used by the mock
//! language model to answer decomposition prompts.
//!
//! Grammar (case-insensitive, clauses separated by `,`, `;`, `.` or `and`):
//!
//! ```text
//! clause := phrase [relation phrase]
//! phrase := det attribute* noun
//! det    := a | an | the | one | two | ... | ten | <digits>
//! ```
//!
//! `the noun` refers back to the first instance of that noun when one exists.

use crate::decompose::{LlmAttribute, LlmSceneOutput, LlmSpatial};
use crate::scene::{Relation, RelationSynonyms};

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

pub fn count_word(n: usize) -> String {
    if n == 1 {
        "a".into()
    } else if n < NUMBER_WORDS.len() {
        NUMBER_WORDS[n].into()
    } else {
        n.to_string()
    }
}

fn parse_count(tok: &str) -> Option<usize> {
    match tok {
        "a" | "an" | "the" => Some(1),
        _ => NUMBER_WORDS
            .iter()
            .position(|w| *w == tok)
            .or_else(|| tok.parse().ok()),
    }
}

pub fn singular(noun: &str) -> String {
    for suffix in ["xes", "ches", "shes", "sses"] {
        if noun.ends_with(suffix) {
            return noun[..noun.len() - 2].to_string();
        }
    }
    noun.strip_suffix('s').unwrap_or(noun).to_string()
}

pub fn plural(noun: &str) -> String {
    if noun == "deer" || noun.ends_with('s') {
        return noun.to_string();
    }
    if ["x", "ch", "sh"].iter().any(|s| noun.ends_with(s)) {
        format!("{noun}es")
    } else {
        format!("{noun}s")
    }
}

struct Builder {
    objects: Vec<(String, u32)>,
    attributes: Vec<LlmAttribute>,
    spatials: Vec<LlmSpatial>,
}

impl Builder {
    fn display(&self, i: usize) -> String {
        format!("{}_{}", self.objects[i].0, self.objects[i].1)
    }

    /// Returns indices of the objects introduced or referenced by the phrase.
    fn phrase(&mut self, tokens: &[&str]) -> Vec<usize> {
        let tokens: Vec<&str> = tokens
            .iter()
            .copied()
            .filter(|t| !matches!(*t, "is" | "are" | "there"))
            .collect();
        let Some((&noun_tok, rest)) = tokens.split_last() else {
            return vec![];
        };
        let (det, attrs) = match rest.first().and_then(|t| parse_count(t).map(|n| (*t, n))) {
            Some((t, n)) => ((t, n), &rest[1..]),
            None => (("a", 1), rest),
        };
        let (det_word, count) = det;
        let noun = if count > 1 {
            singular(noun_tok)
        } else {
            noun_tok.to_string()
        };
        let indices: Vec<usize> = if det_word == "the" {
            match self.objects.iter().position(|(n, _)| *n == noun) {
                Some(i) => vec![i],
                None => self.create(&noun, 1),
            }
        } else {
            self.create(&noun, count)
        };
        for &i in &indices {
            for a in attrs {
                let object = self.display(i);
                if !self
                    .attributes
                    .iter()
                    .any(|x| x.object == object && x.attribute == *a)
                {
                    self.attributes.push(LlmAttribute {
                        object,
                        attribute: a.to_string(),
                        category: None,
                    });
                }
            }
        }
        indices
    }

    fn create(&mut self, noun: &str, count: usize) -> Vec<usize> {
        (0..count)
            .map(|_| {
                let id = self.objects.len() as u32 + 1;
                self.objects.push((noun.to_string(), id));
                self.objects.len() - 1
            })
            .collect()
    }
}

fn find_relation<'a>(
    tokens: &[&str],
    phrases: &'a [(Vec<String>, Relation)],
) -> Option<(usize, usize, &'a Relation)> {
    // A relation needs at least one token on each side.
    for i in 1..tokens.len() {
        for (words, rel) in phrases {
            let k = words.len();
            if i + k < tokens.len() && tokens[i..i + k].iter().zip(words).all(|(a, b)| *a == b) {
                return Some((i, k, rel));
            }
        }
    }
    None
}

pub fn parse_description(text: &str) -> LlmSceneOutput {
    let phrases: Vec<(Vec<String>, Relation)> = RelationSynonyms::builtin()
        .phrases()
        .into_iter()
        .filter(|(p, _)| !p.is_empty())
        .map(|(p, r)| (p.split(' ').map(String::from).collect(), r.clone()))
        .collect();
    let lowered = text.to_lowercase().replace([';', '.', '\n'], ",");
    let mut b = Builder {
        objects: vec![],
        attributes: vec![],
        spatials: vec![],
    };
    for piece in lowered.split(',') {
        for clause in piece.split(" and ") {
            let tokens: Vec<&str> = clause.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            match find_relation(&tokens, &phrases) {
                Some((i, k, rel)) => {
                    let subj = b.phrase(&tokens[..i]);
                    let obj = b.phrase(&tokens[i + k..]);
                    if let (Some(&s), Some(&o)) = (subj.first(), obj.first()) {
                        b.spatials.push(LlmSpatial {
                            subject: b.display(s),
                            relation: rel.phrase().to_string(),
                            object: b.display(o),
                        });
                    }
                }
                None => {
                    b.phrase(&tokens);
                }
            }
        }
    }
    LlmSceneOutput {
        objects: (0..b.objects.len()).map(|i| b.display(i)).collect(),
        attributes: b.attributes,
        spatials: b.spatials,
    }
}

const JUDGE_SYNONYMS: [(&str, &str); 14] = [
    ("grey", "gray"),
    ("stripes", "striped"),
    ("stripy", "striped"),
    ("stripe", "striped"),
    ("solid", "plain"),
    ("oval", "round"),
    ("circular", "round"),
    ("elliptical", "round"),
    ("rectangle", "rectangular"),
    ("square", "rectangular"),
    ("beside", "next"),
    ("near", "next"),
    ("beneath", "under"),
    ("underneath", "under"),
];

fn judge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            JUDGE_SYNONYMS
                .iter()
                .find(|(from, _)| *from == t)
                .map_or(t, |(_, to)| *to)
                .to_string()
        })
        .collect()
}

/// Whether the normalized target appears as a contiguous token run in the answer.
pub fn judge_agrees(target: &str, answer: &str) -> bool {
    let t = judge_tokens(&target.replace('_', " "));
    let a = judge_tokens(answer);
    !t.is_empty() && a.windows(t.len()).any(|w| w == t.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn judge_containment() {
        assert!(judge_agrees("yellow", "The deer is yellow."));
        assert!(!judge_agrees("yellow", "The deer is brown."));
        assert!(judge_agrees("grey", "It is gray"));
        assert!(judge_agrees("left_of", "The cat is left of and above the dog."));
        assert!(!judge_agrees("right of", "The cat is left of the dog."));
        assert!(!judge_agrees("", "anything"));
    }

    #[test]
    fn deer_bear_birds_description() {
        let out = parse_description("a yellow deer and a red bear and three blue birds");
        assert_eq!(
            out.objects,
            vec!["deer_1", "bear_2", "bird_3", "bird_4", "bird_5"]
        );
        let attrs: Vec<String> = out
            .attributes
            .iter()
            .map(|a| format!("{} {}", a.attribute, a.object))
            .collect();
        assert_eq!(
            attrs,
            vec!["yellow deer_1", "red bear_2", "blue bird_3", "blue bird_4", "blue bird_5"]
        );
    }

    #[test]
    fn relation_clause() {
        let out = parse_description("a red cat to the left of a blue dog; the dog is above the cat");
        assert_eq!(out.objects, vec!["cat_1", "dog_2"]);
        assert_eq!(out.spatials.len(), 2);
        assert_eq!(out.spatials[0].relation, "left of");
        assert_eq!(out.spatials[1].subject, "dog_2");
        assert_eq!(out.spatials[1].relation, "above");
    }

    #[test]
    fn plurals() {
        assert_eq!(singular("birds"), "bird");
        assert_eq!(singular("boxes"), "box");
        assert_eq!(plural("deer"), "deer");
        assert_eq!(plural("box"), "boxes");
    }
}
