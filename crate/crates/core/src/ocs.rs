//! Per-subtask decide → execute → verify loop for attribute and spatial corrections.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, BackendSuite};
use crate::counting::{ObjectGeometry, Registry};
use crate::error::{Error, Result};
use crate::geometry::{DetectionBox, Rect, Size};
use crate::image::{Image, ObjectMask, Rgb};
use crate::prompts::{render, PromptSet};
use crate::runlog::{ArtifactStore, Role, TranscriptEntry};
use crate::scene::{AttributeCategory, AttributeConstraint, ObjectRef, SpatialConstraint, Subtask, SubtaskKind};
use crate::sprite::Sprite;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Upper bound on executor calls per subtask.
    pub max_iterations: usize,
    /// Crop padding per side, as a fraction of the box size.
    pub crop_padding: f64,
    /// When false, the first candidate is accepted without a verification pass.
    pub verify: bool,
    /// Replace pixels outside the object mask before asking the VLM.
    pub blank_background: bool,
    pub blank_fill: Rgb,
    pub judge_temperature: f32,
    pub plan_temperature: f32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            crop_padding: 0.10,
            verify: true,
            blank_background: false,
            blank_fill: crate::backend::mock::world::BACKGROUND,
            judge_temperature: 0.0,
            plan_temperature: 0.0,
        }
    }
}

/// Shared inputs of every loop.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub backends: &'a BackendSuite,
    pub prompts: &'a PromptSet,
    pub cfg: &'a LoopConfig,
    /// Candidate crops are stored here when present.
    pub store: Option<&'a ArtifactStore>,
    /// Relations established earlier in the lane; spatial plans must keep them.
    pub keep: &'a [SpatialConstraint],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubtaskStatus {
    AlreadyCorrect,
    Corrected,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Aligned,
    Misaligned { instruction: Option<String> },
}

/// An edited crop: `crop` covers `origin` on the canvas, `mask` is crop-sized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentPatch {
    pub object: ObjectRef,
    pub origin: Rect,
    pub crop: Image,
    pub mask: ObjectMask,
}

impl ContentPatch {
    pub fn canvas_mask(&self, canvas: Size) -> ObjectMask {
        self.mask.placed(canvas, self.origin.x, self.origin.y)
    }

    pub fn sprite(&self) -> Option<(Sprite, Rect)> {
        let (s, r) = Sprite::lift(&self.crop, &self.mask)?;
        Some((s, Rect::new(self.origin.x + r.x, self.origin.y + r.y, r.w, r.h)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object: ObjectRef,
    #[serde(rename = "box")]
    pub bbox: DetectionBox,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Candidate {
    Attribute(ContentPatch),
    Spatial(Placement),
}

#[derive(Clone, Debug)]
pub struct SubtaskResult {
    pub subtask_id: String,
    pub status: SubtaskStatus,
    pub content_patch: Option<ContentPatch>,
    pub placement: Option<Placement>,
    pub iterations_used: usize,
    pub executor_calls: usize,
    /// Whether the accepted candidate passed a verification pass.
    pub verified: bool,
    pub transcript: Vec<TranscriptEntry>,
    pub failure: Option<String>,
}

impl SubtaskResult {
    fn new(id: &str, status: SubtaskStatus, p: LoopProgress) -> Self {
        Self {
            subtask_id: id.to_string(),
            status,
            content_patch: None,
            placement: None,
            iterations_used: p.next_iteration,
            executor_calls: p.executor_calls,
            verified: false,
            transcript: p.transcript,
            failure: None,
        }
    }

    pub fn failed(id: &str, p: LoopProgress, cause: impl Into<String>) -> Self {
        let mut r = Self::new(id, SubtaskStatus::Failed, p);
        r.failure = Some(cause.into());
        r
    }

    pub fn accepted(id: &str, p: LoopProgress, candidate: Candidate, verified: bool) -> Self {
        let mut r = Self::new(id, SubtaskStatus::Corrected, p);
        r.verified = verified;
        match candidate {
            Candidate::Attribute(c) => r.content_patch = Some(c),
            Candidate::Spatial(pl) => r.placement = Some(pl),
        }
        r
    }
}

/// Where a loop stands; lets a parked loop resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopProgress {
    pub decided: bool,
    pub next_iteration: usize,
    pub executor_calls: usize,
    pub transcript: Vec<TranscriptEntry>,
}

/// A verified candidate awaiting an operator verdict.
#[derive(Clone, Debug)]
pub struct Parked {
    pub subtask_id: String,
    pub iteration: usize,
    pub candidate: Candidate,
    pub verified: bool,
    pub progress: LoopProgress,
}

#[derive(Clone, Debug)]
pub enum LoopOutcome {
    Finished(SubtaskResult),
    Parked(Box<Parked>),
}

pub fn instruction_for(c: &AttributeConstraint) -> String {
    format!("Make the {} {}.", c.object.base_name, c.attribute)
}

fn category_word(c: AttributeCategory) -> &'static str {
    match c {
        AttributeCategory::Other => "appearance",
        other => other.as_str(),
    }
}

fn geometry<'a>(registry: &'a Registry, r: &ObjectRef) -> Result<&'a ObjectGeometry> {
    registry.get(r).ok_or_else(|| Error::MissingGeometry(r.display()))
}

/// Padded crop region and pixels for an attribute query.
pub fn attribute_crop(image: &Image, geom: &ObjectGeometry, cfg: &LoopConfig) -> (Rect, Image) {
    let region = geom.bbox.padded(cfg.crop_padding, image.size());
    let mut crop = image.crop(region);
    if cfg.blank_background {
        let m = geom.mask.crop(region);
        for y in 0..region.h {
            for x in 0..region.w {
                if !m.get(x, y) {
                    crop.put(x, y, cfg.blank_fill);
                }
            }
        }
    }
    (region, crop)
}

/// Stage two: does the observation agree with the target? One re-prompt on an unparseable reply.
pub fn llm_judge(
    a: Agents<'_>,
    target: &str,
    answer: &str,
    role: Role,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<bool> {
    let base = render(&a.prompts.judge, &[("target", target), ("answer", answer)]);
    let mut prompt = base.clone();
    for attempt in 0..2 {
        let reply = a.backends.complete(&prompt, a.cfg.judge_temperature)?;
        let verdict = parse_verdict(&reply);
        let label = match verdict {
            Some(true) => "yes",
            Some(false) => "no",
            None => "unparseable",
        };
        transcript.push(TranscriptEntry::new(role, &prompt, &reply).with_verdict(label));
        if let Some(v) = verdict {
            return Ok(v);
        }
        if attempt == 0 {
            prompt = format!("{base}{}", a.prompts.judge_retry);
        } else {
            return Err(Error::UnparseableVerdict(reply));
        }
    }
    unreachable!("judge loop returns within two attempts")
}

/// Accepts only a leading Yes or No token, case-insensitively.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    let first = reply
        .trim_start()
        .split(|c: char| !c.is_alphanumeric())
        .next()
        .unwrap_or("");
    if first.eq_ignore_ascii_case("yes") {
        Some(true)
    } else if first.eq_ignore_ascii_case("no") {
        Some(false)
    } else {
        None
    }
}

pub fn decide_attribute(
    a: Agents<'_>,
    image: &Image,
    constraint: &AttributeConstraint,
    geom: &ObjectGeometry,
    role: Role,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Decision> {
    let (_, crop) = attribute_crop(image, geom, a.cfg);
    let question = render(
        &a.prompts.vlm_attribute,
        &[
            ("category", category_word(constraint.category)),
            ("object", &constraint.object.base_name),
        ],
    );
    let answer = a.backends.vlm_query(&crop, &question)?;
    transcript.push(TranscriptEntry::new(role, &question, &answer));
    if llm_judge(a, &constraint.attribute, &answer, role, transcript)? {
        Ok(Decision::Aligned)
    } else {
        Ok(Decision::Misaligned {
            instruction: Some(instruction_for(constraint)),
        })
    }
}

pub fn decide_spatial(
    a: Agents<'_>,
    image: &Image,
    constraint: &SpatialConstraint,
    subject: &ObjectGeometry,
    object: &ObjectGeometry,
    role: Role,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Decision> {
    let region = subject
        .bbox
        .union(&object.bbox)
        .padded(a.cfg.crop_padding, image.size());
    let crop = image.crop(region);
    let question = render(
        &a.prompts.vlm_spatial,
        &[
            ("subject", &constraint.subject.base_name),
            ("object", &constraint.object.base_name),
        ],
    );
    let answer = a.backends.vlm_query(&crop, &question)?;
    transcript.push(TranscriptEntry::new(role, &question, &answer));
    if llm_judge(a, constraint.relation.phrase(), &answer, role, transcript)? {
        Ok(Decision::Aligned)
    } else {
        Ok(Decision::Misaligned { instruction: None })
    }
}

/// Edits the crop, then re-derives the object mask from the edited pixels.
pub fn execute_attribute(
    a: Agents<'_>,
    object: &ObjectRef,
    region: Rect,
    crop: &Image,
    geom: &ObjectGeometry,
    instruction: &str,
    seed: u64,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<ContentPatch> {
    let edited = a.backends.edit(crop, instruction, seed)?;
    let local = Rect::new(geom.bbox.x - region.x, geom.bbox.y - region.y, geom.bbox.w, geom.bbox.h);
    let mask = match a.backends.segment(&edited, &DetectionBox::new(local, 1.0)) {
        Ok(m) => m,
        Err(BackendError::EmptyMask) => geom.mask.crop(region),
        Err(e) => return Err(e.into()),
    };
    let mut entry = TranscriptEntry::new(Role::Executor, instruction, "edited crop").with_seed(seed);
    if let Some(store) = a.store {
        entry = entry.with_artifact(store.put_image(&edited)?);
    }
    transcript.push(entry);
    Ok(ContentPatch {
        object: object.clone(),
        origin: region,
        crop: edited,
        mask,
    })
}

fn fmt_box(b: [f64; 4]) -> String {
    let v: Vec<String> = b.iter().map(|x| format!("{:.3}", x)).collect();
    format!("[{}]", v.join(", "))
}

fn round_box(b: [f64; 4]) -> [f64; 4] {
    b.map(|v| (v * 1000.0).round() / 1000.0)
}

#[derive(Deserialize)]
struct PlanReply {
    #[serde(rename = "move", default)]
    mover: Option<String>,
    new_box: [f64; 4],
}

fn parse_plan(reply: &str, c: &SpatialConstraint, canvas: Size) -> Option<Placement> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    let p: PlanReply = serde_json::from_str(reply.get(start..=end)?).ok()?;
    let object = match p.mover.as_deref().map(str::trim) {
        None | Some("subject") | Some("") => c.subject.clone(),
        Some("object") => c.object.clone(),
        Some(name) if name == c.subject.display() => c.subject.clone(),
        Some(name) if name == c.object.display() => c.object.clone(),
        Some(_) => return None,
    };
    let rect = Rect::from_normalized(p.new_box, canvas)?;
    Some(Placement {
        object,
        bbox: DetectionBox::new(rect, 1.0),
    })
}

/// Asks the planner for a move; an unusable reply is retried once.
pub fn execute_spatial(
    a: Agents<'_>,
    constraint: &SpatialConstraint,
    registry: &Registry,
    canvas: Size,
    attempt: usize,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Placement> {
    let s = geometry(registry, &constraint.subject)?;
    let o = geometry(registry, &constraint.object)?;
    let obstacles: Vec<String> = registry
        .iter()
        .filter(|(r, _)| **r != constraint.subject && **r != constraint.object)
        .map(|(_, g)| fmt_box(g.bbox.normalized(canvas)))
        .collect();
    let keep: Vec<serde_json::Value> = a
        .keep
        .iter()
        .filter_map(|k| {
            let ks = registry.get(&k.subject)?;
            let ko = registry.get(&k.object)?;
            Some(serde_json::json!({
                "subject": k.subject.display(),
                "relation": k.relation.phrase(),
                "object": k.object.display(),
                "subject_box": round_box(ks.bbox.normalized(canvas)),
                "object_box": round_box(ko.bbox.normalized(canvas)),
            }))
        })
        .collect();
    let keep = serde_json::Value::Array(keep).to_string();
    let attempt_s = attempt.to_string();
    let prompt = render(
        &a.prompts.spatial_plan,
        &[
            ("relation", constraint.relation.phrase()),
            ("subject", &constraint.subject.display()),
            ("subject_box", &fmt_box(s.bbox.normalized(canvas))),
            ("object", &constraint.object.display()),
            ("object_box", &fmt_box(o.bbox.normalized(canvas))),
            ("obstacles", &format!("[{}]", obstacles.join(", "))),
            ("keep", &keep),
            ("attempt", &attempt_s),
        ],
    );
    let mut last = String::new();
    for _ in 0..2 {
        let reply = a.backends.complete(&prompt, a.cfg.plan_temperature)?;
        let parsed = parse_plan(&reply, constraint, canvas);
        transcript.push(
            TranscriptEntry::new(Role::Planner, &prompt, &reply)
                .with_seed(attempt as u64)
                .with_verdict(if parsed.is_some() { "valid" } else { "invalid" }),
        );
        if let Some(p) = parsed {
            return Ok(p);
        }
        last = reply;
    }
    Err(Error::UnparseableLlmOutput(last))
}

/// Lifts the object, inpaints where it was, and pastes it fitted into `target`.
pub fn move_object(
    backends: &BackendSuite,
    image: &Image,
    geom: &ObjectGeometry,
    target: Rect,
) -> Result<(Image, ObjectGeometry)> {
    let Some((sprite, _)) = Sprite::lift(image, &geom.mask) else {
        return Err(Error::MissingGeometry("object mask is empty".into()));
    };
    let mut out = backends.inpaint_remove(image, &geom.mask)?;
    let fit = sprite.fit(target);
    let scaled = sprite.scaled(fit.w, fit.h);
    scaled.paste(&mut out, fit.x, fit.y);
    let mask = scaled.placed_mask(image.size(), fit.x, fit.y);
    let bbox = mask.bbox().unwrap_or(fit);
    Ok((out, ObjectGeometry { bbox, mask }))
}

/// Applies an accepted candidate to a working image and registry.
pub fn apply_candidate(
    backends: &BackendSuite,
    image: &mut Image,
    registry: &mut Registry,
    candidate: &Candidate,
) -> Result<()> {
    match candidate {
        Candidate::Attribute(p) => {
            image.paste(&p.crop, p.origin.x, p.origin.y);
            let mask = p.canvas_mask(image.size());
            if let Some(bbox) = mask.bbox() {
                registry.insert(p.object.clone(), ObjectGeometry { bbox, mask });
            }
        }
        Candidate::Spatial(pl) => {
            let geom = geometry(registry, &pl.object)?.clone();
            let (moved, g) = move_object(backends, image, &geom, pl.bbox.rect())?;
            *image = moved;
            registry.insert(pl.object.clone(), g);
        }
    }
    Ok(())
}

/// Verification on a candidate: the decision pass rerun on the candidate image.
pub fn verify_candidate(
    a: Agents<'_>,
    subtask: &Subtask,
    image: &Image,
    registry: &Registry,
    candidate: &Candidate,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<bool> {
    let mut img = image.clone();
    let mut reg = registry.clone();
    apply_candidate(a.backends, &mut img, &mut reg, candidate)?;
    let d = decide(a, subtask, &img, &reg, Role::Verifier, transcript)?;
    Ok(d == Decision::Aligned)
}

fn decide(
    a: Agents<'_>,
    subtask: &Subtask,
    image: &Image,
    registry: &Registry,
    role: Role,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Decision> {
    match &subtask.kind {
        SubtaskKind::Attribute(c) => {
            let g = geometry(registry, &c.object)?;
            decide_attribute(a, image, c, g, role, transcript)
        }
        SubtaskKind::Spatial(c) => {
            let s = geometry(registry, &c.subject)?;
            let o = geometry(registry, &c.object)?;
            decide_spatial(a, image, c, s, o, role, transcript)
        }
        SubtaskKind::Counting { .. } => Err(Error::InvalidConfig(
            "counting subtasks do not run in the correction loop".into(),
        )),
    }
}

fn execute(
    a: Agents<'_>,
    subtask: &Subtask,
    image: &Image,
    registry: &Registry,
    iteration: usize,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Candidate> {
    match &subtask.kind {
        SubtaskKind::Attribute(c) => {
            let g = geometry(registry, &c.object)?;
            let region = g.bbox.padded(a.cfg.crop_padding, image.size());
            let crop = image.crop(region);
            let instruction = instruction_for(c);
            execute_attribute(a, &c.object, region, &crop, g, &instruction, iteration as u64, transcript)
                .map(Candidate::Attribute)
        }
        SubtaskKind::Spatial(c) => {
            execute_spatial(a, c, registry, image.size(), iteration, transcript).map(Candidate::Spatial)
        }
        SubtaskKind::Counting { .. } => Err(Error::InvalidConfig(
            "counting subtasks do not run in the correction loop".into(),
        )),
    }
}

/// Runs (or resumes) the loop. Backend failures end the subtask as Failed with a cause.
pub fn run_loop(
    a: Agents<'_>,
    subtask: &Subtask,
    image: &Image,
    registry: &Registry,
    review: bool,
    progress: LoopProgress,
) -> LoopOutcome {
    let mut p = progress;
    let id = subtask.id.as_str();
    if !p.decided {
        match decide(a, subtask, image, registry, Role::DecisionMaker, &mut p.transcript) {
            Ok(Decision::Aligned) => {
                p.decided = true;
                return LoopOutcome::Finished(SubtaskResult::new(id, SubtaskStatus::AlreadyCorrect, p));
            }
            Ok(Decision::Misaligned { .. }) => p.decided = true,
            Err(e) => return LoopOutcome::Finished(SubtaskResult::failed(id, p, e.to_string())),
        }
    }
    while p.next_iteration < a.cfg.max_iterations {
        let iteration = p.next_iteration;
        p.next_iteration += 1;
        p.executor_calls += 1;
        let candidate = match execute(a, subtask, image, registry, iteration, &mut p.transcript) {
            Ok(c) => c,
            Err(e) => return LoopOutcome::Finished(SubtaskResult::failed(id, p, e.to_string())),
        };
        let verified = if a.cfg.verify {
            match verify_candidate(a, subtask, image, registry, &candidate, &mut p.transcript) {
                Ok(true) => true,
                Ok(false) => continue,
                Err(e) => return LoopOutcome::Finished(SubtaskResult::failed(id, p, e.to_string())),
            }
        } else {
            false
        };
        if review {
            return LoopOutcome::Parked(Box::new(Parked {
                subtask_id: id.to_string(),
                iteration,
                candidate,
                verified,
                progress: p,
            }));
        }
        return LoopOutcome::Finished(SubtaskResult::accepted(id, p, candidate, verified));
    }
    LoopOutcome::Finished(SubtaskResult::failed(
        id,
        p,
        format!("no verified candidate within {} iterations", a.cfg.max_iterations),
    ))
}
