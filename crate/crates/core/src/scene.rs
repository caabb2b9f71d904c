//! Typed scene descriptions: suffixed object references, attribute and
//! spatial constraints, and the subtask vocabulary built from them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A single object instance, e.g. `bird_3`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectRef {
    pub base_name: String,
    pub id: u32,
}

impl ObjectRef {
    pub fn new(base_name: impl Into<String>, id: u32) -> Self {
        Self {
            base_name: base_name.into(),
            id,
        }
    }

    /// Canonical `name_id` form.
    pub fn display(&self) -> String {
        format!("{}_{}", self.base_name, self.id)
    }

    pub fn parse(s: &str) -> Result<Self, ParseRefError> {
        let (base, id) = s
            .rsplit_once('_')
            .ok_or_else(|| ParseRefError(s.to_string()))?;
        if base.is_empty() || id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseRefError(s.to_string()));
        }
        let id: u32 = id.parse().map_err(|_| ParseRefError(s.to_string()))?;
        Ok(Self::new(base, id))
    }
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.base_name, self.id)
    }
}

impl FromStr for ObjectRef {
    type Err = ParseRefError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not an object reference of the form name_id: {0:?}")]
pub struct ParseRefError(pub String);

impl Serialize for ObjectRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.display())
    }
}

impl<'de> Deserialize<'de> for ObjectRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ObjectRef::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeCategory {
    Color,
    Shape,
    Texture,
    Other,
}

const COLOR_WORDS: &[&str] = &[
    "red", "orange", "yellow", "green", "cyan", "blue", "purple", "pink", "brown", "black",
    "gray", "grey", "white", "gold", "silver", "violet", "beige", "teal", "navy", "maroon",
];
const TEXTURE_WORDS: &[&str] = &[
    "striped", "plain", "solid", "spotted", "dotted", "checkered", "wooden", "metallic",
    "plastic", "fluffy", "furry", "glass", "leather", "fabric", "rubber",
];
const SHAPE_WORDS: &[&str] = &[
    "round", "square", "rectangular", "triangular", "oval", "circular", "spherical", "cubic",
    "elliptical", "tall", "flat",
];

impl AttributeCategory {
    /// Best-effort category for a free-text attribute value.
    pub fn classify(attribute: &str) -> Self {
        let word = attribute.trim().to_lowercase();
        let last = word.split_whitespace().last().unwrap_or("");
        if COLOR_WORDS.contains(&last) {
            Self::Color
        } else if TEXTURE_WORDS.contains(&last) {
            Self::Texture
        } else if SHAPE_WORDS.contains(&last) {
            Self::Shape
        } else {
            Self::Other
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Color => "color",
            Self::Shape => "shape",
            Self::Texture => "texture",
            Self::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeConstraint {
    pub object: ObjectRef,
    pub category: AttributeCategory,
    pub attribute: String,
}

impl AttributeConstraint {
    pub fn new(object: ObjectRef, attribute: impl Into<String>) -> Self {
        let attribute = attribute.into();
        Self {
            object,
            category: AttributeCategory::classify(&attribute),
            attribute,
        }
    }

    /// The `Attribute Object_ID` tuple form, e.g. `yellow deer_1`.
    pub fn tuple_form(&self) -> String {
        format!("{} {}", self.attribute, self.object)
    }
}

/// Spatial relation vocabulary. Synonyms canonicalize via [`RelationSynonyms`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    NextTo,
    On,
    Under,
    Other(String),
}

impl Relation {
    pub const CORE: [Relation; 7] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::Above,
        Relation::Below,
        Relation::NextTo,
        Relation::On,
        Relation::Under,
    ];

    pub fn canonical_name(&self) -> &str {
        match self {
            Self::LeftOf => "left_of",
            Self::RightOf => "right_of",
            Self::Above => "above",
            Self::Below => "below",
            Self::NextTo => "next_to",
            Self::On => "on",
            Self::Under => "under",
            Self::Other(text) => text,
        }
    }

    /// Natural-language phrase used in prompts and verdicts.
    pub fn phrase(&self) -> &str {
        match self {
            Self::LeftOf => "left of",
            Self::RightOf => "right of",
            Self::Above => "above",
            Self::Below => "below",
            Self::NextTo => "next to",
            Self::On => "on",
            Self::Under => "under",
            Self::Other(text) => text,
        }
    }

    pub fn parse(text: &str) -> Self {
        RelationSynonyms::builtin().canonicalize(text)
    }

    /// The relation that holds for (object, subject) when `self` holds for (subject, object).
    pub fn converse(&self) -> Self {
        match self {
            Self::LeftOf => Self::RightOf,
            Self::RightOf => Self::LeftOf,
            Self::Above => Self::Below,
            Self::Below => Self::Above,
            Self::NextTo => Self::NextTo,
            Self::On => Self::Under,
            Self::Under => Self::On,
            Self::Other(t) => Self::Other(t.clone()),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.canonical_name())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Relation::parse(&String::deserialize(d)?))
    }
}

/// Phrase → relation table. The builtin table can be extended from a text
/// file of `phrase = canonical_name` lines.
#[derive(Clone, Debug)]
pub struct RelationSynonyms {
    entries: BTreeMap<String, Relation>,
}

pub const BUILTIN_SYNONYMS: &str = include_str!("../prompts/relation_synonyms.txt");

impl RelationSynonyms {
    pub fn builtin() -> &'static RelationSynonyms {
        static TABLE: std::sync::OnceLock<RelationSynonyms> = std::sync::OnceLock::new();
        TABLE.get_or_init(|| {
            RelationSynonyms::from_text(BUILTIN_SYNONYMS).expect("builtin synonym table parses")
        })
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, name) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `phrase = relation`", n + 1))?;
            let rel = match normalize_phrase(name).as_str() {
                "left of" => Relation::LeftOf,
                "right of" => Relation::RightOf,
                "above" => Relation::Above,
                "below" => Relation::Below,
                "next to" => Relation::NextTo,
                "on" => Relation::On,
                "under" => Relation::Under,
                other => return Err(format!("line {}: unknown relation {other:?}", n + 1)),
            };
            entries.insert(normalize_phrase(phrase), rel);
        }
        for rel in Relation::CORE {
            entries.insert(normalize_phrase(rel.canonical_name()), rel);
        }
        Ok(Self { entries })
    }

    pub fn canonicalize(&self, text: &str) -> Relation {
        let norm = normalize_phrase(text);
        let stripped = norm
            .strip_prefix("is ")
            .or_else(|| norm.strip_prefix("are "))
            .unwrap_or(&norm);
        match self.entries.get(stripped) {
            Some(rel) => rel.clone(),
            None => Relation::Other(text.trim().to_string()),
        }
    }

    /// Known phrases, longest first, for greedy matching in free text.
    pub fn phrases(&self) -> Vec<(&str, &Relation)> {
        let mut v: Vec<_> = self.entries.iter().map(|(k, v)| (k.as_str(), v)).collect();
        v.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
        v
    }
}

fn normalize_phrase(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialConstraint {
    pub subject: ObjectRef,
    pub relation: Relation,
    pub object: ObjectRef,
}

impl SpatialConstraint {
    /// The `["Object_ID", "Spatial", "Object_ID"]` triple.
    pub fn triple(&self) -> [String; 3] {
        [
            self.subject.display(),
            self.relation.phrase().to_string(),
            self.object.display(),
        ]
    }
}

/// The target description as typed constraints.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub description: String,
    pub objects: Vec<ObjectRef>,
    #[serde(default)]
    pub attributes: Vec<AttributeConstraint>,
    #[serde(default)]
    pub spatials: Vec<SpatialConstraint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { id: u32 },
    ZeroId { object: String },
    EmptyBaseName { index: usize },
    UnknownRef { field: String, reference: String },
    EmptyAttribute { object: String },
    DuplicateAttributeCategory { object: String, category: AttributeCategory },
    SelfRelation { object: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId { id } => write!(f, "objects: id {id} is used more than once"),
            Self::ZeroId { object } => write!(f, "objects: {object} must have a positive id"),
            Self::EmptyBaseName { index } => write!(f, "objects[{index}]: base name is empty"),
            Self::UnknownRef { field, reference } => {
                write!(f, "{field}: {reference} is not listed in objects")
            }
            Self::EmptyAttribute { object } => {
                write!(f, "attributes: empty attribute value for {object}")
            }
            Self::DuplicateAttributeCategory { object, category } => write!(
                f,
                "attributes: more than one {} constraint for {object}",
                category.as_str()
            ),
            Self::SelfRelation { object } => {
                write!(f, "spatials: {object} is related to itself")
            }
        }
    }
}

impl SceneSpec {
    /// Violations of the SceneSpec invariants, in field order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen_ids = HashSet::new();
        let mut reported = BTreeSet::new();
        for (index, obj) in self.objects.iter().enumerate() {
            if obj.base_name.trim().is_empty() {
                out.push(Violation::EmptyBaseName { index });
            }
            if obj.id == 0 {
                out.push(Violation::ZeroId {
                    object: obj.display(),
                });
            }
            if !seen_ids.insert(obj.id) && reported.insert(obj.id) {
                out.push(Violation::DuplicateId { id: obj.id });
            }
        }
        let known: HashSet<&ObjectRef> = self.objects.iter().collect();
        let mut categories = HashSet::new();
        for a in &self.attributes {
            if !known.contains(&a.object) {
                out.push(Violation::UnknownRef {
                    field: "attributes".into(),
                    reference: a.object.display(),
                });
            }
            if a.attribute.trim().is_empty() {
                out.push(Violation::EmptyAttribute {
                    object: a.object.display(),
                });
            }
            if !categories.insert((&a.object, a.category)) {
                out.push(Violation::DuplicateAttributeCategory {
                    object: a.object.display(),
                    category: a.category,
                });
            }
        }
        for s in &self.spatials {
            for r in [&s.subject, &s.object] {
                if !known.contains(r) {
                    out.push(Violation::UnknownRef {
                        field: "spatials".into(),
                        reference: r.display(),
                    });
                }
            }
            if s.subject == s.object {
                out.push(Violation::SelfRelation {
                    object: s.subject.display(),
                });
            }
        }
        out
    }

    /// Base names in order of first appearance.
    pub fn base_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.objects
            .iter()
            .filter(|o| seen.insert(o.base_name.as_str()))
            .map(|o| o.base_name.as_str())
            .collect()
    }

    /// Target count per base name, in first-appearance order.
    pub fn target_counts(&self) -> Vec<(String, usize)> {
        self.base_names()
            .into_iter()
            .map(|b| {
                let n = self.objects.iter().filter(|o| o.base_name == b).count();
                (b.to_string(), n)
            })
            .collect()
    }

    /// Instances of `base_name`, ascending by id.
    pub fn instances(&self, base_name: &str) -> Vec<ObjectRef> {
        let mut v: Vec<_> = self
            .objects
            .iter()
            .filter(|o| o.base_name == base_name)
            .cloned()
            .collect();
        v.sort_by_key(|o| o.id);
        v
    }

    pub fn attributes_of<'a>(
        &'a self,
        object: &'a ObjectRef,
    ) -> impl Iterator<Item = &'a AttributeConstraint> + 'a {
        self.attributes.iter().filter(move |a| &a.object == object)
    }

    /// Orders attribute constraints by object position, then category.
    pub fn canonicalize(&mut self) {
        let pos: BTreeMap<&ObjectRef, usize> =
            self.objects.iter().enumerate().map(|(i, o)| (o, i)).collect();
        let mut attrs = std::mem::take(&mut self.attributes);
        attrs.sort_by_key(|a| (pos.get(&a.object).copied().unwrap_or(usize::MAX), a.category));
        self.attributes = attrs;
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene spec serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// A unit of correction work.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: String,
    pub kind: SubtaskKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SubtaskKind {
    Counting { base_name: String, target_count: usize },
    Attribute(AttributeConstraint),
    Spatial(SpatialConstraint),
}

impl Subtask {
    pub fn counting(base_name: &str, target_count: usize) -> Self {
        Self {
            id: format!("count:{base_name}"),
            kind: SubtaskKind::Counting {
                base_name: base_name.to_string(),
                target_count,
            },
        }
    }

    pub fn attribute(c: AttributeConstraint) -> Self {
        Self {
            id: format!("attr:{}:{}", c.object, c.category.as_str()),
            kind: SubtaskKind::Attribute(c),
        }
    }

    pub fn spatial(index: usize, c: SpatialConstraint) -> Self {
        Self {
            id: format!(
                "spatial:{index}:{}:{}:{}",
                c.subject,
                c.relation.canonical_name(),
                c.object
            ),
            kind: SubtaskKind::Spatial(c),
        }
    }

    pub fn is_counting(&self) -> bool {
        matches!(self.kind, SubtaskKind::Counting { .. })
    }
}
