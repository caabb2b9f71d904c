//! Deterministic synthetic scenes with recorded corruptions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::mock::language::{count_word, plural};
use crate::backend::mock::world::{color_name, render, AspectClass, NounTable, Shape, BACKGROUND, PALETTE};
use crate::decompose::renumber;
use crate::geometry::{relation_holds, Rect, RelationTolerance, Size};
use crate::image::{Image, Rgb};
use crate::scene::{AttributeConstraint, ObjectRef, Relation, SceneSpec, SpatialConstraint};

use super::score::{score, ScoreConfig};

pub const CANVAS: Size = Size::new(160, 160);
/// Minimum Chebyshev gap between any two shapes.
pub const MIN_GAP: u32 = 6;
const MARGIN: u32 = 3;
/// Area scale of the k-th instance of a noun; detector rank follows area.
pub const INSTANCE_SCALES: [f64; 4] = [1.0, 0.85, 0.72, 0.61];
/// Area of a scale-1 shape in pixels.
const BASE_AREA: f64 = 700.0;
/// Total shape area above this fraction of the canvas marks a scene crowded.
const CROWDED_FRACTION: f64 = 0.22;
const GENERATOR_RELATIONS: [Relation; 5] = [
    Relation::LeftOf,
    Relation::RightOf,
    Relation::Above,
    Relation::Below,
    Relation::NextTo,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    WrongColor,
    WrongTexture,
    ExtraObject,
    MissingObject,
    SwappedPositions,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        Self::WrongColor,
        Self::WrongTexture,
        Self::ExtraObject,
        Self::MissingObject,
        Self::SwappedPositions,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WrongColor => "wrong_color",
            Self::WrongTexture => "wrong_texture",
            Self::ExtraObject => "extra_object",
            Self::MissingObject => "missing_object",
            Self::SwappedPositions => "swapped_positions",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub kind: CorruptionKind,
    pub base_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other: Option<ObjectRef>,
}

/// A drawn shape and the SceneSpec object it depicts (`None` for an extra object).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneShape {
    pub object: Option<ObjectRef>,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub index: usize,
    pub canvas: Size,
    pub background: Rgb,
    /// Shapes as rendered, corruptions included.
    pub shapes: Vec<SceneShape>,
    /// Shapes of the uncorrupted scene.
    pub clean: Vec<SceneShape>,
    pub spec: SceneSpec,
    pub corruptions: Vec<Corruption>,
    pub crowded: bool,
}

impl SyntheticScene {
    pub fn image(&self) -> Image {
        render(self.canvas, &self.shapes.iter().map(|s| s.shape).collect::<Vec<_>>())
    }

    pub fn clean_image(&self) -> Image {
        render(self.canvas, &self.clean.iter().map(|s| s.shape).collect::<Vec<_>>())
    }

    pub fn description(&self) -> &str {
        &self.spec.description
    }
}

/// `n` scenes; identical for identical `(n, seed)`. Corruption kinds are
/// dealt round-robin across the suite so categories stay balanced.
pub fn generate_suite(n: usize, seed: u64) -> Vec<SyntheticScene> {
    let nouns = NounTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cursor = 0usize;
    (0..n)
        .map(|index| {
            let count = rng.random_range(1..=3usize);
            let kinds: Vec<CorruptionKind> = (0..count)
                .map(|j| CorruptionKind::ALL[(cursor + j) % CorruptionKind::ALL.len()])
                .collect();
            cursor += count;
            loop {
                if let Some(s) = build_scene(&mut rng, &nouns, index, &kinds) {
                    return s;
                }
            }
        })
        .collect()
}

struct Draft {
    noun: String,
    object: ObjectRef,
    shape: Shape,
    color: Option<usize>,
    texture: Option<bool>,
}

fn dims(aspect: AspectClass, area: f64) -> (u32, u32) {
    let r = aspect.ratio();
    ((area * r).sqrt().round() as u32, (area / r).sqrt().round() as u32)
}

fn fits(canvas: Size, r: &Rect) -> bool {
    r.x >= MARGIN && r.y >= MARGIN && r.right() + MARGIN <= canvas.width && r.bottom() + MARGIN <= canvas.height
}

fn clear_of(r: &Rect, others: &[Rect]) -> bool {
    others.iter().all(|o| r.gap(o) >= MIN_GAP as f64)
}

/// Holds with twice the scoring offset, so small moves keep it true.
fn holds_firmly(rel: &Relation, a: &Rect, b: &Rect) -> bool {
    let firm = RelationTolerance {
        offset: 0.1,
        ..RelationTolerance::default()
    };
    relation_holds(rel, a, b, CANVAS, firm).unwrap_or(false)
}

fn random_spot(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Option<Rect> {
    if w + 2 * MARGIN > CANVAS.width || h + 2 * MARGIN > CANVAS.height {
        return None;
    }
    let x = rng.random_range(MARGIN..=CANVAS.width - MARGIN - w);
    let y = rng.random_range(MARGIN..=CANVAS.height - MARGIN - h);
    Some(Rect::new(x, y, w, h))
}

fn place(rng: &mut ChaCha8Rng, w: u32, h: u32, placed: &[Rect], ok: impl Fn(&Rect) -> bool) -> Option<Rect> {
    for _ in 0..400 {
        let r = random_spot(rng, w, h)?;
        if clear_of(&r, placed) && ok(&r) {
            return Some(r);
        }
    }
    None
}

/// A spot touching-distance (exactly `MIN_GAP`) beside or above/below `anchor`.
fn place_next_to(rng: &mut ChaCha8Rng, w: u32, h: u32, anchor: &Rect, placed: &[Rect]) -> Option<Rect> {
    for _ in 0..200 {
        let side = rng.random_range(0..4);
        let (x, y) = match side {
            0 | 1 => {
                let x = if side == 0 {
                    anchor.right() as i64 + MIN_GAP as i64
                } else {
                    anchor.x as i64 - MIN_GAP as i64 - w as i64
                };
                let lo = anchor.y as i64 - h as i64 + 1;
                let y = rng.random_range(lo..anchor.bottom() as i64);
                (x, y)
            }
            _ => {
                let y = if side == 2 {
                    anchor.bottom() as i64 + MIN_GAP as i64
                } else {
                    anchor.y as i64 - MIN_GAP as i64 - h as i64
                };
                let lo = anchor.x as i64 - w as i64 + 1;
                let x = rng.random_range(lo..anchor.right() as i64);
                (x, y)
            }
        };
        if x < 0 || y < 0 {
            continue;
        }
        let r = Rect::new(x as u32, y as u32, w, h);
        if fits(CANVAS, &r) && clear_of(&r, placed) {
            return Some(r);
        }
    }
    None
}

fn other_color(rng: &mut ChaCha8Rng, not: usize) -> usize {
    let c = rng.random_range(0..PALETTE.len() - 1);
    if c >= not {
        c + 1
    } else {
        c
    }
}

/// Text the mock decomposer reads back into exactly `spec`.
pub fn render_description(spec: &SceneSpec) -> String {
    let mut clauses = Vec::new();
    let mut i = 0;
    while i < spec.objects.len() {
        let o = &spec.objects[i];
        let attrs = phrase_attrs(spec, o);
        let mut j = i + 1;
        while j < spec.objects.len() && spec.objects[j].base_name == o.base_name && phrase_attrs(spec, &spec.objects[j]) == attrs {
            j += 1;
        }
        let n = j - i;
        let noun = if n == 1 { o.base_name.clone() } else { plural(&o.base_name) };
        let mut words = vec![count_word(n)];
        words.extend(attrs);
        words.push(noun);
        clauses.push(words.join(" "));
        i = j;
    }
    for s in &spec.spatials {
        clauses.push(format!(
            "the {} is {} the {}",
            s.subject.base_name,
            s.relation.phrase(),
            s.object.base_name
        ));
    }
    clauses.join(", ")
}

fn shape_of(shapes: &[SceneShape], o: &ObjectRef) -> Option<usize> {
    shapes.iter().position(|s| s.object.as_ref() == Some(o))
}

fn phrase_attrs(spec: &SceneSpec, o: &ObjectRef) -> Vec<String> {
    spec.attributes_of(o).map(|a| a.attribute.clone()).collect()
}

fn build_scene(rng: &mut ChaCha8Rng, table: &NounTable, index: usize, kinds: &[CorruptionKind]) -> Option<SyntheticScene> {
    let need_swap = kinds.contains(&CorruptionKind::SwappedPositions);
    let count_kinds = kinds
        .iter()
        .filter(|k| matches!(k, CorruptionKind::ExtraObject | CorruptionKind::MissingObject))
        .count();
    let n_nouns = match (need_swap, count_kinds) {
        (true, 0) => rng.random_range(2..=3),
        (true, n) => 2 + n,
        (false, 2) => rng.random_range(2..=3),
        _ => rng.random_range(1..=3),
    };
    let mut nouns: Vec<&str> = table.nouns().collect();
    nouns.shuffle(rng);
    nouns.truncate(n_nouns);
    let mut counts: Vec<usize> = (0..n_nouns)
        .map(|j| if need_swap && j < 2 { 1 } else { rng.random_range(1..=3) })
        .collect();
    if counts.iter().sum::<usize>() < 2 {
        counts[0] = 2;
    }
    while counts.iter().sum::<usize>() > 7 {
        let k = counts.iter().enumerate().max_by_key(|(_, c)| **c).map(|(k, _)| k)?;
        counts[k] -= 1;
    }

    let singles: Vec<usize> = (0..n_nouns).filter(|&j| counts[j] == 1).collect();
    let mut spatial_nouns: Vec<usize> = Vec::new();
    let mut relations: Vec<Relation> = Vec::new();
    let multi = n_nouns - singles.len();
    let reserve = count_kinds.saturating_sub(multi);
    let available = singles.len().saturating_sub(1 + reserve);
    if need_swap && available == 0 {
        return None;
    }
    if available > 0 && (need_swap || rng.random_bool(0.5)) {
        let k = rng.random_range(1..=available.min(2));
        spatial_nouns = singles[..=k].to_vec();
        for s in 0..k {
            let rel = if s == 0 && need_swap {
                GENERATOR_RELATIONS[rng.random_range(0..4)].clone()
            } else {
                GENERATOR_RELATIONS[rng.random_range(0..GENERATOR_RELATIONS.len())].clone()
            };
            relations.push(rel);
        }
    }

    let scale_jitter: Vec<f64> = (0..n_nouns).map(|_| rng.random_range(0.85..1.15)).collect();
    let mut drafts: Vec<Draft> = Vec::new();
    let mut next_id = 1u32;
    for (j, noun) in nouns.iter().enumerate() {
        let (_, class) = table.lookup(noun)?;
        for k in 0..counts[j] {
            let area = BASE_AREA * scale_jitter[j] * INSTANCE_SCALES[k];
            let (w, h) = dims(class.aspect, area);
            let color = rng.random_range(0..PALETTE.len());
            let texture = rng.random_bool(0.3).then(|| rng.random_bool(0.5));
            drafts.push(Draft {
                noun: noun.to_string(),
                object: ObjectRef::new(*noun, next_id),
                shape: Shape {
                    kind: class.kind,
                    color,
                    striped: texture.unwrap_or(false),
                    rect: Rect::new(0, 0, w, h),
                },
                color: rng.random_bool(0.8).then_some(color),
                texture,
            });
            next_id += 1;
        }
    }
    if kinds.contains(&CorruptionKind::WrongColor) && drafts.iter().all(|d| d.color.is_none()) {
        let k = rng.random_range(0..drafts.len());
        drafts[k].color = Some(drafts[k].shape.color);
    }
    if kinds.contains(&CorruptionKind::WrongTexture) && drafts.iter().all(|d| d.texture.is_none()) {
        let k = rng.random_range(0..drafts.len());
        drafts[k].texture = Some(true);
        drafts[k].shape.striped = true;
    }

    let index_of = |noun_idx: usize, drafts: &[Draft]| drafts.iter().position(|d| d.noun == nouns[noun_idx]);
    let mut placed: Vec<Rect> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut spatials: Vec<SpatialConstraint> = Vec::new();
    if let Some(&anchor_noun) = spatial_nouns.first() {
        let a = index_of(anchor_noun, &drafts)?;
        let (w, h) = (drafts[a].shape.rect.w, drafts[a].shape.rect.h);
        let r = place(rng, w, h, &placed, |r| {
            let (cx, cy) = r.center();
            (40.0..=120.0).contains(&cx) && (40.0..=120.0).contains(&cy)
        })?;
        drafts[a].shape.rect = r;
        placed.push(r);
        order.push(a);
        for (s_noun, rel) in spatial_nouns[1..].iter().zip(&relations) {
            let s = index_of(*s_noun, &drafts)?;
            let (w, h) = (drafts[s].shape.rect.w, drafts[s].shape.rect.h);
            let r = if *rel == Relation::NextTo {
                place_next_to(rng, w, h, &r, &placed)?
            } else {
                place(rng, w, h, &placed, |c| fits(CANVAS, c) && holds_firmly(rel, c, &r))?
            };
            drafts[s].shape.rect = r;
            placed.push(r);
            order.push(s);
            spatials.push(SpatialConstraint {
                subject: drafts[s].object.clone(),
                relation: rel.clone(),
                object: drafts[a].object.clone(),
            });
        }
    }
    for k in 0..drafts.len() {
        if order.contains(&k) {
            continue;
        }
        let (w, h) = (drafts[k].shape.rect.w, drafts[k].shape.rect.h);
        let r = place(rng, w, h, &placed, |c| fits(CANVAS, c))?;
        drafts[k].shape.rect = r;
        placed.push(r);
    }

    let mut spec = SceneSpec {
        description: String::new(),
        objects: drafts.iter().map(|d| d.object.clone()).collect(),
        attributes: vec![],
        spatials,
    };
    for d in &drafts {
        if let Some(c) = d.color {
            spec.attributes.push(AttributeConstraint::new(d.object.clone(), color_name(c)));
        }
        if let Some(t) = d.texture {
            spec.attributes.push(AttributeConstraint::new(d.object.clone(), if t { "striped" } else { "plain" }));
        }
    }
    let mut spec = renumber(&spec);
    spec.description = render_description(&spec);

    let clean: Vec<SceneShape> = drafts
        .iter()
        .map(|d| SceneShape {
            object: Some(d.object.clone()),
            shape: d.shape,
        })
        .collect();
    let mut shapes = clean.clone();
    let mut corruptions = Vec::new();
    let in_spatial = |o: &ObjectRef| spec.spatials.iter().any(|s| &s.subject == o || &s.object == o);
    let mut touched: Vec<ObjectRef> = Vec::new();
    let mut count_nouns: Vec<String> = Vec::new();
    for kind in kinds {
        match kind {
            CorruptionKind::WrongColor => {
                let candidates: Vec<usize> = (0..drafts.len())
                    .filter(|&k| drafts[k].color.is_some() && !touched.contains(&drafts[k].object))
                    .collect();
                let &k = candidates.choose(rng)?;
                let c = other_color(rng, drafts[k].shape.color);
                let i = shape_of(&shapes, &drafts[k].object)?;
                shapes[i].shape.color = c;
                touched.push(drafts[k].object.clone());
                corruptions.push(Corruption {
                    kind: *kind,
                    base_name: drafts[k].noun.clone(),
                    object: Some(drafts[k].object.clone()),
                    other: None,
                });
            }
            CorruptionKind::WrongTexture => {
                let candidates: Vec<usize> = (0..drafts.len())
                    .filter(|&k| drafts[k].texture.is_some() && !touched.contains(&drafts[k].object))
                    .collect();
                let &k = candidates.choose(rng)?;
                let i = shape_of(&shapes, &drafts[k].object)?;
                shapes[i].shape.striped = !shapes[i].shape.striped;
                touched.push(drafts[k].object.clone());
                corruptions.push(Corruption {
                    kind: *kind,
                    base_name: drafts[k].noun.clone(),
                    object: Some(drafts[k].object.clone()),
                    other: None,
                });
            }
            CorruptionKind::ExtraObject => {
                let candidates: Vec<usize> = (0..n_nouns)
                    .filter(|&j| !spatial_nouns.contains(&j) && !count_nouns.iter().any(|n| n == nouns[j]))
                    .collect();
                let &j = candidates.choose(rng)?;
                let noun = nouns[j];
                let (_, class) = table.lookup(noun)?;
                let area = BASE_AREA * scale_jitter[j] * INSTANCE_SCALES[counts[j] - 1] * 0.8;
                let (w, h) = dims(class.aspect, area);
                let occupied: Vec<Rect> = shapes.iter().map(|s| s.shape.rect).collect();
                let r = place(rng, w, h, &occupied, |c| fits(CANVAS, c))?;
                shapes.push(SceneShape {
                    object: None,
                    shape: Shape {
                        kind: class.kind,
                        color: rng.random_range(0..PALETTE.len()),
                        striped: false,
                        rect: r,
                    },
                });
                count_nouns.push(noun.to_string());
                corruptions.push(Corruption {
                    kind: *kind,
                    base_name: noun.to_string(),
                    object: None,
                    other: None,
                });
            }
            CorruptionKind::MissingObject => {
                let candidates: Vec<usize> = (0..drafts.len())
                    .filter(|&k| {
                        !in_spatial(&drafts[k].object)
                            && !touched.contains(&drafts[k].object)
                            && !count_nouns.contains(&drafts[k].noun)
                    })
                    .collect();
                let &k = candidates.choose(rng)?;
                let object = drafts[k].object.clone();
                shapes.retain(|s| s.object.as_ref() != Some(&object));
                touched.push(object.clone());
                count_nouns.push(drafts[k].noun.clone());
                corruptions.push(Corruption {
                    kind: *kind,
                    base_name: drafts[k].noun.clone(),
                    object: Some(object),
                    other: None,
                });
            }
            CorruptionKind::SwappedPositions => {
                let c = spec.spatials.iter().find(|s| s.relation != Relation::NextTo)?.clone();
                let a = shapes.iter().position(|s| s.object.as_ref() == Some(&c.subject))?;
                let b = shapes.iter().position(|s| s.object.as_ref() == Some(&c.object))?;
                let (ra, rb) = (shapes[a].shape.rect, shapes[b].shape.rect);
                let centered = |r: Rect, at: (f64, f64)| -> Option<Rect> {
                    let x = at.0 - r.w as f64 / 2.0;
                    let y = at.1 - r.h as f64 / 2.0;
                    if x < 0.0 || y < 0.0 {
                        return None;
                    }
                    Some(Rect::new(x.round() as u32, y.round() as u32, r.w, r.h))
                };
                let na = centered(ra, rb.center())?;
                let nb = centered(rb, ra.center())?;
                let others: Vec<Rect> = shapes
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != a && *k != b)
                    .map(|(_, s)| s.shape.rect)
                    .collect();
                if !fits(CANVAS, &na) || !fits(CANVAS, &nb) || !clear_of(&na, &others) || !clear_of(&nb, &others) || na.gap(&nb) < MIN_GAP as f64 {
                    return None;
                }
                shapes[a].shape.rect = na;
                shapes[b].shape.rect = nb;
                corruptions.push(Corruption {
                    kind: *kind,
                    base_name: c.subject.base_name.clone(),
                    object: Some(c.subject),
                    other: Some(c.object),
                });
            }
        }
    }

    let area: u64 = shapes.iter().map(|s| s.shape.rect.area()).sum();
    let scene = SyntheticScene {
        index,
        canvas: CANVAS,
        background: BACKGROUND,
        shapes,
        clean,
        spec,
        corruptions,
        crowded: area as f64 > CROWDED_FRACTION * CANVAS.area() as f64,
    };
    let cfg = ScoreConfig::default();
    let clean_ok = score(&scene.clean_image(), &scene.spec, &cfg).all_satisfied();
    let corrupted_ok = score(&scene.image(), &scene.spec, &cfg).all_satisfied();
    (clean_ok && !corrupted_ok).then_some(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::language::parse_description;
    use crate::decompose::interpret;

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(generate_suite(20, 7), generate_suite(20, 7));
        assert_ne!(generate_suite(5, 7), generate_suite(5, 8));
    }

    #[test]
    fn descriptions_round_trip_through_the_mock_decomposer() {
        for s in generate_suite(40, 3) {
            let reply = serde_json::to_string(&parse_description(s.description())).unwrap();
            let spec = interpret(s.description(), &reply).unwrap();
            assert_eq!(spec, s.spec, "{}", s.description());
        }
    }

    #[test]
    fn object_counts_in_range() {
        for s in generate_suite(60, 11) {
            let n = s.spec.objects.len();
            assert!((2..=7).contains(&n), "{n} objects");
            assert!((1..=3).contains(&s.corruptions.len()));
        }
    }
}
