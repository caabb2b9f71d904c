//! Pixel and geometry oracles over flat-shape images.

use serde::{Deserialize, Serialize};

use crate::backend::mock::world::{color_index, components, sort_by_area, Component, NounTable};
use crate::geometry::{relation_holds, RelationTolerance};
use crate::image::Image;
use crate::scene::{AttributeCategory, AttributeConstraint, SceneSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub tolerance: RelationTolerance,
    pub nouns: NounTable,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            tolerance: RelationTolerance::default(),
            nouns: NounTable::default(),
        }
    }
}

/// Satisfied out of checked predicates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub satisfied: usize,
    pub total: usize,
}

impl Tally {
    pub fn new(satisfied: usize, total: usize) -> Self {
        Self { satisfied, total }
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.satisfied as f64 / self.total as f64)
    }

    pub fn add(&mut self, other: Tally) {
        self.satisfied += other.satisfied;
        self.total += other.total;
    }

    pub fn is_perfect(&self) -> bool {
        self.satisfied == self.total
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneScore {
    pub counting: Tally,
    pub color: Tally,
    pub texture: Tally,
    pub spatial: Tally,
}

impl SceneScore {
    pub fn attribute(&self) -> Tally {
        let mut t = self.color;
        t.add(self.texture);
        t
    }

    pub fn all_satisfied(&self) -> bool {
        [self.counting, self.color, self.texture, self.spatial]
            .iter()
            .all(Tally::is_perfect)
    }

    pub fn add(&mut self, other: &SceneScore) {
        self.counting.add(other.counting);
        self.color.add(other.color);
        self.texture.add(other.texture);
        self.spatial.add(other.spatial);
    }
}

fn attribute_holds(a: &AttributeConstraint, c: &Component) -> bool {
    match a.category {
        AttributeCategory::Color => color_index(&a.attribute).is_some_and(|i| c.color == Some(i)),
        AttributeCategory::Texture => match a.attribute.trim().to_lowercase().as_str() {
            "striped" => c.striped(),
            "plain" | "solid" => !c.striped(),
            _ => false,
        },
        _ => false,
    }
}

/// Largest number of satisfied constraints over one-to-one assignments of
/// instances to components. `sets[i]` holds instance i's constraints.
fn best_assignment(sets: &[Vec<&AttributeConstraint>], comps: &[Component]) -> usize {
    fn go(i: usize, sets: &[Vec<&AttributeConstraint>], comps: &[Component], used: &mut Vec<bool>) -> usize {
        if i == sets.len() {
            return 0;
        }
        let mut best = go(i + 1, sets, comps, used);
        for j in 0..comps.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            let here = sets[i].iter().filter(|a| attribute_holds(a, &comps[j])).count();
            best = best.max(here + go(i + 1, sets, comps, used));
            used[j] = false;
        }
        best
    }
    go(0, sets, comps, &mut vec![false; comps.len()])
}

/// Counting per base name, color and texture per constraint under the best
/// instance-to-component assignment, spatial per constraint on the largest
/// component of each noun.
pub fn score(image: &Image, spec: &SceneSpec, cfg: &ScoreConfig) -> SceneScore {
    let mut all = components(image);
    sort_by_area(&mut all);
    let of_noun = |noun: &str| -> Vec<Component> {
        match cfg.nouns.lookup(noun) {
            Some((_, class)) => all.iter().filter(|c| c.class() == class).cloned().collect(),
            None => vec![],
        }
    };
    let mut out = SceneScore::default();
    for (base, target) in spec.target_counts() {
        let comps = of_noun(&base);
        out.counting.add(Tally::new(usize::from(comps.len() == target), 1));
        let instances = spec.instances(&base);
        for cat in [AttributeCategory::Color, AttributeCategory::Texture] {
            let sets: Vec<Vec<&AttributeConstraint>> = instances
                .iter()
                .map(|o| spec.attributes_of(o).filter(|a| a.category == cat).collect())
                .collect();
            let total: usize = sets.iter().map(Vec::len).sum();
            if total == 0 {
                continue;
            }
            let t = Tally::new(best_assignment(&sets, &comps), total);
            match cat {
                AttributeCategory::Color => out.color.add(t),
                _ => out.texture.add(t),
            }
        }
    }
    for s in &spec.spatials {
        let a = of_noun(&s.subject.base_name);
        let b = of_noun(&s.object.base_name);
        let ok = match (a.first(), b.first()) {
            (Some(a), Some(b)) => {
                relation_holds(&s.relation, &a.bbox, &b.bbox, image.size(), cfg.tolerance).unwrap_or(false)
            }
            _ => false,
        };
        out.spatial.add(Tally::new(usize::from(ok), 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::world::{color_index, render, Shape, ShapeKind};
    use crate::eval::generate::{generate_suite, CorruptionKind, CANVAS};
    use crate::geometry::Rect;
    use crate::scene::{ObjectRef, Relation, SpatialConstraint};

    fn shape(kind: ShapeKind, color: &str, rect: Rect) -> Shape {
        Shape {
            kind,
            color: color_index(color).unwrap(),
            striped: false,
            rect,
        }
    }

    #[test]
    fn clean_scenes_score_perfectly() {
        let cfg = ScoreConfig::default();
        for s in generate_suite(30, 5) {
            let sc = score(&s.clean_image(), &s.spec, &cfg);
            assert!(sc.all_satisfied(), "{}: {sc:?}", s.description());
        }
    }

    #[test]
    fn one_wrong_color_of_four() {
        let r = |n: &str, i| ObjectRef::new(n, i);
        let spec = SceneSpec {
            description: String::new(),
            objects: vec![r("bear", 1), r("bear", 2), r("dog", 3), r("bird", 4)],
            attributes: vec![
                AttributeConstraint::new(r("bear", 1), "red"),
                AttributeConstraint::new(r("bear", 2), "blue"),
                AttributeConstraint::new(r("dog", 3), "green"),
                AttributeConstraint::new(r("bird", 4), "yellow"),
            ],
            spatials: vec![],
        };
        let img = render(
            CANVAS,
            &[
                shape(ShapeKind::Rect, "red", Rect::new(10, 10, 26, 26)),
                shape(ShapeKind::Rect, "blue", Rect::new(60, 10, 24, 24)),
                shape(ShapeKind::Rect, "green", Rect::new(10, 80, 36, 18)),
                shape(ShapeKind::Ellipse, "purple", Rect::new(90, 90, 26, 26)),
            ],
        );
        let sc = score(&img, &spec, &ScoreConfig::default());
        assert_eq!(sc.color, Tally::new(3, 4));
        assert_eq!(sc.color.accuracy(), Some(0.75));
        assert_eq!(sc.counting, Tally::new(3, 3));
    }

    #[test]
    fn assignment_ignores_instance_order() {
        let r = |n: &str, i| ObjectRef::new(n, i);
        let spec = SceneSpec {
            description: String::new(),
            objects: vec![r("bear", 1), r("bear", 2)],
            attributes: vec![
                AttributeConstraint::new(r("bear", 1), "red"),
                AttributeConstraint::new(r("bear", 2), "blue"),
            ],
            spatials: vec![SpatialConstraint {
                subject: r("bear", 1),
                relation: Relation::LeftOf,
                object: r("bear", 2),
            }],
        };
        let img = render(
            CANVAS,
            &[
                shape(ShapeKind::Rect, "blue", Rect::new(10, 10, 30, 30)),
                shape(ShapeKind::Rect, "red", Rect::new(80, 10, 24, 24)),
            ],
        );
        assert_eq!(score(&img, &spec, &ScoreConfig::default()).color, Tally::new(2, 2));
    }

    #[test]
    fn swapped_positions_fail_spatial_before_correction() {
        let cfg = ScoreConfig::default();
        let mut seen = 0;
        for s in generate_suite(60, 9) {
            let swapped: Vec<_> = s
                .corruptions
                .iter()
                .filter(|c| c.kind == CorruptionKind::SwappedPositions)
                .collect();
            if swapped.is_empty() {
                continue;
            }
            seen += 1;
            for c in swapped {
                let subject = c.object.as_ref().unwrap();
                let idx = s
                    .spec
                    .spatials
                    .iter()
                    .position(|x| &x.subject == subject && Some(&x.object) == c.other.as_ref())
                    .unwrap();
                let only = SceneSpec {
                    spatials: vec![s.spec.spatials[idx].clone()],
                    ..s.spec.clone()
                };
                assert_eq!(score(&s.image(), &only, &cfg).spatial, Tally::new(0, 1));
            }
        }
        assert!(seen > 0);
    }
}
