//! Free-text description → validated [`SceneSpec`] and ordered subtasks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::BackendSuite;
use crate::error::{Error, Result};
use crate::prompts::{count_slots, render, PromptSet};
use crate::runlog::{Role, TranscriptEntry};
use crate::scene::{
    AttributeCategory, AttributeConstraint, ObjectRef, Relation, SceneSpec, SpatialConstraint,
    Subtask, Violation,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposerPromptConfig {
    pub template: String,
    pub repair: String,
    pub max_retries: usize,
    pub temperature: f32,
}

impl Default for DecomposerPromptConfig {
    fn default() -> Self {
        Self::from_prompts(&PromptSet::default())
    }
}

impl DecomposerPromptConfig {
    pub fn from_prompts(p: &PromptSet) -> Self {
        Self {
            template: p.decompose.clone(),
            repair: p.repair.clone(),
            max_retries: 2,
            temperature: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if count_slots(&self.template, "description") != 1 {
            return Err(Error::InvalidConfig(
                "decompose template must contain exactly one {description} slot".into(),
            ));
        }
        Ok(())
    }
}

/// The JSON shape requested from the language model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmSceneOutput {
    pub objects: Vec<String>,
    #[serde(default)]
    pub attributes: Vec<LlmAttribute>,
    #[serde(default)]
    pub spatials: Vec<LlmSpatial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmAttribute {
    pub object: String,
    pub attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<AttributeCategory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmSpatial {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

fn parse_json(text: &str) -> Option<LlmSceneOutput> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn looks_like_ref(s: &str) -> bool {
    ObjectRef::parse(s).is_ok()
}

/// Accepts bracketed tuples such as `(["yellow deer_1"])` and
/// `(["deer_1", "left of", "bear_2"])`.
pub fn parse_tuples(text: &str) -> Option<LlmSceneOutput> {
    let mut out = LlmSceneOutput::default();
    let push_obj = |out: &mut LlmSceneOutput, r: &str| {
        if !out.objects.iter().any(|o| o == r) {
            out.objects.push(r.to_string());
        }
    };
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']') else {
            break;
        };
        let inner = &rest[open + 1..open + close];
        rest = &rest[open + close + 1..];
        let parts: Vec<String> = inner
            .split(',')
            .map(|p| p.trim().trim_matches(['"', '\'', '(', ')', ' ']).to_string())
            .filter(|p| !p.is_empty())
            .collect();
        match parts.as_slice() {
            [s, rel, o] if looks_like_ref(s) && looks_like_ref(o) => {
                push_obj(&mut out, s);
                push_obj(&mut out, o);
                out.spatials.push(LlmSpatial {
                    subject: s.clone(),
                    relation: rel.clone(),
                    object: o.clone(),
                });
            }
            [single] => {
                let single = single.clone();
                match single.rsplit_once(' ') {
                    Some((attr, obj)) if looks_like_ref(obj) => {
                        push_obj(&mut out, obj);
                        out.attributes.push(LlmAttribute {
                            object: obj.to_string(),
                            attribute: attr.trim().to_string(),
                            category: None,
                        });
                    }
                    None if looks_like_ref(&single) => push_obj(&mut out, &single),
                    _ => {}
                }
            }
            many => {
                for p in many.iter().filter(|p| looks_like_ref(p)) {
                    push_obj(&mut out, p);
                }
            }
        }
    }
    (!out.objects.is_empty()).then_some(out)
}

fn parse_output(text: &str) -> Option<LlmSceneOutput> {
    parse_json(text).or_else(|| parse_tuples(text))
}

/// Converts model output into a spec, collecting reference errors.
fn to_spec(description: &str, out: &LlmSceneOutput) -> (SceneSpec, Vec<Violation>) {
    let mut violations = Vec::new();
    let mut parse = |field: &str, s: &str| match ObjectRef::parse(s.trim()) {
        Ok(r) => Some(r),
        Err(_) => {
            violations.push(Violation::UnknownRef {
                field: field.into(),
                reference: s.to_string(),
            });
            None
        }
    };
    let objects: Vec<ObjectRef> = out.objects.iter().filter_map(|o| parse("objects", o)).collect();
    let attributes = out
        .attributes
        .iter()
        .filter_map(|a| {
            let r = parse("attributes", &a.object)?;
            let mut c = AttributeConstraint::new(r, a.attribute.trim().to_lowercase());
            if let Some(cat) = a.category {
                c.category = cat;
            }
            Some(c)
        })
        .collect();
    let spatials = out
        .spatials
        .iter()
        .filter_map(|s| {
            Some(SpatialConstraint {
                subject: parse("spatials", &s.subject)?,
                relation: Relation::parse(&s.relation),
                object: parse("spatials", &s.object)?,
            })
        })
        .collect();
    (
        SceneSpec {
            description: description.to_string(),
            objects,
            attributes,
            spatials,
        },
        violations,
    )
}

/// Renumbers ids 1..n in the order objects are listed.
pub fn renumber(spec: &SceneSpec) -> SceneSpec {
    let map: HashMap<&ObjectRef, ObjectRef> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o, ObjectRef::new(o.base_name.clone(), i as u32 + 1)))
        .collect();
    let m = |r: &ObjectRef| map.get(r).cloned().unwrap_or_else(|| r.clone());
    let mut out = SceneSpec {
        description: spec.description.clone(),
        objects: spec.objects.iter().map(m).collect(),
        attributes: spec
            .attributes
            .iter()
            .map(|a| AttributeConstraint {
                object: m(&a.object),
                ..a.clone()
            })
            .collect(),
        spatials: spec
            .spatials
            .iter()
            .map(|s| SpatialConstraint {
                subject: m(&s.subject),
                relation: s.relation.clone(),
                object: m(&s.object),
            })
            .collect(),
    };
    out.canonicalize();
    out
}

/// Reads the model reply into a validated spec, or the reasons it is not one.
pub fn interpret(description: &str, reply: &str) -> std::result::Result<SceneSpec, String> {
    let Some(out) = parse_output(reply) else {
        return Err("reply is neither the requested JSON nor bracketed tuples".into());
    };
    let (spec, mut violations) = to_spec(description, &out);
    violations.extend(spec.validate());
    if violations.is_empty() {
        Ok(renumber(&spec))
    } else {
        Err(violations
            .iter()
            .map(|v| format!("- {v}"))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

/// Calls the language model at most `max_retries + 1` times.
pub fn decompose(
    description: &str,
    backends: &BackendSuite,
    cfg: &DecomposerPromptConfig,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<SceneSpec> {
    cfg.check()?;
    let description = description.split_whitespace().collect::<Vec<_>>().join(" ");
    if description.is_empty() {
        return Err(Error::EmptyDescription);
    }
    let base = render(&cfg.template, &[("description", &description)]);
    let mut prompt = base.clone();
    let mut reason = String::new();
    for _ in 0..=cfg.max_retries {
        let reply = backends.complete(&prompt, cfg.temperature)?;
        match interpret(&description, &reply) {
            Ok(spec) => {
                transcript.push(TranscriptEntry::new(Role::Decomposer, &prompt, &reply).with_verdict("valid"));
                return Ok(spec);
            }
            Err(why) => {
                transcript.push(TranscriptEntry::new(Role::Decomposer, &prompt, &reply).with_verdict("invalid"));
                prompt = format!("{base}{}", render(&cfg.repair, &[("violations", &why)]));
                reason = why;
            }
        }
    }
    Err(Error::MalformedLlmOutput {
        attempts: cfg.max_retries + 1,
        reason,
    })
}

/// Counting subtasks per base name, then attribute, then spatial subtasks.
pub fn to_subtasks(spec: &SceneSpec) -> Vec<Subtask> {
    let mut out: Vec<Subtask> = spec
        .target_counts()
        .iter()
        .map(|(b, n)| Subtask::counting(b, *n))
        .collect();
    out.extend(spec.attributes.iter().cloned().map(Subtask::attribute));
    out.extend(
        spec.spatials
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| Subtask::spatial(i, s)),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuples_fallback() {
        let out = parse_tuples(r#"(["yellow deer_1"]), (["red bear_2"]), (["deer_1", "left of", "bear_2"])"#)
            .unwrap();
        assert_eq!(out.objects, vec!["deer_1", "bear_2"]);
        assert_eq!(out.attributes.len(), 2);
        assert_eq!(out.spatials[0].relation, "left of");
    }

    #[test]
    fn renumbering_follows_listing_order() {
        let spec = interpret(
            "x",
            r#"{"objects": ["bird_7", "bear_3"], "attributes": [{"object": "bear_3", "attribute": "Red"}]}"#,
        )
        .unwrap();
        assert_eq!(spec.objects[0].to_string(), "bird_1");
        assert_eq!(spec.objects[1].to_string(), "bear_2");
        assert_eq!(spec.attributes[0].object.to_string(), "bear_2");
        assert_eq!(spec.attributes[0].attribute, "red");
    }

    #[test]
    fn invalid_replies_explain_themselves() {
        let why = interpret("x", r#"{"objects": ["cat_1", "cat_1"]}"#).unwrap_err();
        assert!(why.contains("more than once"), "{why}");
        assert!(interpret("x", "no idea").is_err());
    }
}
