//! Count reconciliation: removes surplus detections, inserts missing objects,
//! and binds object references to geometry.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendSuite};
use crate::error::Result;
use crate::geometry::{DetectionBox, Rect};
use crate::image::{Image, ObjectMask};
use crate::scene::ObjectRef;

/// Where an object is: tight box and full-canvas mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectGeometry {
    pub bbox: Rect,
    pub mask: ObjectMask,
}

pub type Registry = BTreeMap<ObjectRef, ObjectGeometry>;

#[derive(Clone, Debug, PartialEq)]
pub struct Removal {
    pub bbox: DetectionBox,
    pub mask: ObjectMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub description: String,
    pub bbox: DetectionBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountingPlan {
    pub base_name: String,
    pub detected: Vec<DetectionBox>,
    pub target_count: usize,
    pub removals: Vec<Removal>,
    pub insertions: Vec<Insertion>,
    /// Set when placement ran out of room; `insertions` holds what fit.
    pub infeasible: bool,
}

impl CountingPlan {
    pub fn is_noop(&self) -> bool {
        self.removals.is_empty() && self.insertions.is_empty() && !self.infeasible
    }

    pub fn report(&self) -> serde_json::Value {
        serde_json::json!({
            "base_name": self.base_name,
            "detected": self.detected.len(),
            "target": self.target_count,
            "removed": self.removals.iter().map(|r| r.bbox).collect::<Vec<_>>(),
            "inserted": self.insertions,
            "infeasible": self.infeasible,
        })
    }
}

/// Surplus-removal priority: lowest score, then smaller area, then larger x.
fn removal_order(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.rect().area().cmp(&b.rect().area()))
        .then(b.x.cmp(&a.x))
}

fn segment_or_box(image: &Image, bbox: &DetectionBox, backends: &BackendSuite) -> Result<ObjectMask> {
    match backends.segment(image, bbox) {
        Ok(m) => Ok(m),
        Err(BackendError::EmptyMask) => Ok(ObjectMask::from_rect(image.size(), bbox.rect())),
        Err(e) => Err(e.into()),
    }
}

/// `others` are boxes of objects of other base names, which insertions
/// must avoid. `describe(k)` gives the generation prompt for the k-th
/// instance (0-based) of this base name.
pub fn plan_counting(
    image: &Image,
    base_name: &str,
    target_count: usize,
    backends: &BackendSuite,
    others: &[DetectionBox],
    describe: &dyn Fn(usize) -> String,
) -> Result<CountingPlan> {
    let detected = backends.detect(image, base_name)?;
    let mut plan = CountingPlan {
        base_name: base_name.to_string(),
        detected: detected.clone(),
        target_count,
        removals: vec![],
        insertions: vec![],
        infeasible: false,
    };
    match detected.len().cmp(&target_count) {
        Ordering::Greater => {
            let mut order = detected.clone();
            order.sort_by(removal_order);
            for b in order.into_iter().take(detected.len() - target_count) {
                let mask = segment_or_box(image, &b, backends)?;
                plan.removals.push(Removal { bbox: b, mask });
            }
        }
        Ordering::Less => {
            let mut existing: Vec<DetectionBox> = others.to_vec();
            existing.extend(detected.iter().copied());
            for k in detected.len()..target_count {
                let description = describe(k);
                match backends.propose_box(&description, &existing, image.size()) {
                    Ok(b) => {
                        existing.push(b);
                        plan.insertions.push(Insertion { description, bbox: b });
                    }
                    Err(BackendError::NoFeasiblePlacement) => {
                        plan.infeasible = true;
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ordering::Equal => {}
    }
    Ok(plan)
}

#[derive(Clone, Debug)]
pub struct CountingOutcome {
    pub image: Image,
    /// Geometry per instance, bound in score-rank order.
    pub bound: Vec<(ObjectRef, ObjectGeometry)>,
    pub removal_mask: ObjectMask,
    pub insertion_mask: ObjectMask,
    /// Detections of this base name after applying the plan.
    pub redetected: usize,
}

/// Applies `plan` and binds `instances` (ascending ids) to geometry:
/// surviving detections by descending score, then insertions in order.
pub fn apply_counting(
    image: &Image,
    plan: &CountingPlan,
    instances: &[ObjectRef],
    backends: &BackendSuite,
) -> Result<CountingOutcome> {
    let size = image.size();
    let mut out = image.clone();
    let mut removal_mask = ObjectMask::empty(size);
    for r in &plan.removals {
        removal_mask.union_with(&r.mask);
    }
    if !removal_mask.is_empty() {
        out = backends.inpaint_remove(&out, &removal_mask)?;
    }
    let mut insertion_mask = ObjectMask::empty(size);
    for ins in &plan.insertions {
        let patch = backends.generate_object(&ins.description, &ins.bbox)?;
        out.paste(&patch, ins.bbox.x, ins.bbox.y);
        insertion_mask.fill_rect(ins.bbox.rect());
    }
    let removed: Vec<&DetectionBox> = plan.removals.iter().map(|r| &r.bbox).collect();
    let mut survivors: Vec<DetectionBox> = plan
        .detected
        .iter()
        .filter(|d| !removed.contains(d))
        .copied()
        .collect();
    crate::geometry::sort_detections(&mut survivors);
    let mut boxes: Vec<DetectionBox> = survivors;
    boxes.extend(plan.insertions.iter().map(|i| i.bbox));
    let mut bound = Vec::new();
    for (r, b) in instances.iter().zip(&boxes) {
        let mask = segment_or_box(&out, b, backends)?;
        let bbox = mask.bbox().unwrap_or(b.rect());
        bound.push((r.clone(), ObjectGeometry { bbox, mask }));
    }
    let redetected = if plan.is_noop() {
        plan.detected.len()
    } else {
        backends.detect(&out, &plan.base_name)?.len()
    };
    Ok(CountingOutcome {
        image: out,
        bound,
        removal_mask,
        insertion_mask,
        redetected,
    })
}
