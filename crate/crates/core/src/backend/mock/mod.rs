//! Deterministic in-process backends over the flat-shape world.
//!
//! Every answer is computed from pixels, so the mocks agree with the
//! geometric and color oracles used by tests and the eval harness. Noise
//! knobs inject VLM answer corruption, editor failures and call latency.

pub mod language;
pub mod world;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    BackendError, BackendHandles, BackendResult, Detector, Editor, Inpainter, Latent,
    LatentTrajectory, LayoutGenerator, Llm, ObjectGenerator, Refiner, Segmenter, Vlm,
};
use crate::geometry::{relation_holds, DetectionBox, Rect, RelationTolerance, Size};
use crate::image::{Image, ObjectMask};
use crate::prompts::field;
use crate::scene::{AttributeCategory, Relation};

use world::{
    classify, color_index, color_name, components_in, dominant, matching, sort_by_area,
    AspectClass, NounTable, PixelClass, Shape, ShapeKind, BACKGROUND, PALETTE, STRIPE_INK,
    STRIPE_PERIOD,
};

/// Pixel size of one latent cell edge.
pub const LATENT_CELL: u32 = 8;
/// Mean color channels per cell; the remaining channels carry per-pixel residuals.
pub const MEAN_CHANNELS: usize = 3;
pub const LATENT_CHANNELS: usize = MEAN_CHANNELS + 3 * (LATENT_CELL * LATENT_CELL) as usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Probability that a VLM answer is corrupted.
    pub vlm_noise: f64,
    /// Probability that an edit fails.
    pub edit_failure: f64,
    /// Sleep injected into every backend call.
    pub latency_ms: u64,
    /// Smoothing weight of one refiner step.
    pub refine_strength: f32,
    /// Segmentation may extend this far beyond the query box.
    pub segment_dilation: u32,
    /// Maximum IoU between a proposed box and any existing box.
    pub iou_threshold: f64,
    /// Minimum pixel clearance between a proposed box and existing boxes.
    pub placement_gap: u32,
    /// Spatial answers use these pixel thresholds, independent of crop size.
    pub spatial_offset_px: f64,
    pub spatial_gap_px: f64,
    /// Mixed into every noise draw.
    pub salt: u64,
    pub nouns: NounTable,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            vlm_noise: 0.0,
            edit_failure: 0.0,
            latency_ms: 0,
            refine_strength: 0.01,
            segment_dilation: 2,
            iou_threshold: 0.3,
            placement_gap: 4,
            spatial_offset_px: 8.0,
            spatial_gap_px: 8.0,
            salt: 0,
            nouns: NounTable::default(),
        }
    }
}

/// The full mock suite. One value serves every backend kind.
#[derive(Clone, Debug, Default)]
pub struct MockWorld {
    pub cfg: MockConfig,
}

impl BackendHandles {
    pub fn mock(cfg: MockConfig) -> Self {
        let w = Arc::new(MockWorld::new(cfg));
        Self {
            llm: w.clone(),
            vlm: w.clone(),
            detector: w.clone(),
            segmenter: w.clone(),
            inpainter: w.clone(),
            editor: w.clone(),
            layout_generator: w.clone(),
            object_generator: w.clone(),
            refiner: w,
        }
    }
}

/// Uniform draws in `[0, 1)` keyed by a salt and byte strings.
fn draws(salt: u64, parts: &[&[u8]]) -> (f64, u64) {
    let mut h = Sha256::new();
    h.update(salt.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let a = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    let b = u64::from_le_bytes(d[8..16].try_into().expect("8 bytes"));
    (a as f64 / 2f64.powi(64), b)
}

/// A palette color different from `avoid`, chosen by `r`.
fn other_color(avoid: usize, r: u64) -> usize {
    (avoid + 1 + (r % (PALETTE.len() as u64 - 1)) as usize) % PALETTE.len()
}

fn parse_between<'a>(text: &'a str, prefix: &str, sep: &str) -> Option<(&'a str, &'a str)> {
    let lower = text.trim();
    let head = lower.get(..prefix.len())?;
    if !head.eq_ignore_ascii_case(prefix) {
        return None;
    }
    let rest = lower[prefix.len()..].trim_end_matches(['?', '.', ' ']);
    let (a, b) = rest.split_once(sep)?;
    Some((a.trim(), b.trim()))
}

fn shape_word(kind: ShapeKind) -> &'static str {
    match kind {
        ShapeKind::Rect => "rectangular",
        ShapeKind::Ellipse => "round",
    }
}

fn shape_from_word(word: &str) -> Option<ShapeKind> {
    match word {
        "rectangular" | "square" | "rectangle" | "cubic" => Some(ShapeKind::Rect),
        "round" | "oval" | "circular" | "elliptical" | "spherical" => Some(ShapeKind::Ellipse),
        _ => None,
    }
}

/// Relations that hold between `a` and `b` with thresholds in pixels.
pub fn describe_relations(a: &Rect, b: &Rect, offset_px: f64, gap_px: f64) -> Vec<&'static str> {
    // A unit canvas turns the fractional tolerances into pixel counts.
    let tol = RelationTolerance {
        offset: offset_px,
        gap: gap_px,
    };
    Relation::CORE
        .iter()
        .filter(|r| relation_holds(r, a, b, Size::new(1, 1), tol) == Some(true))
        .map(|r| match r {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::NextTo => "next to",
            Relation::On => "on",
            Relation::Under => "under",
            Relation::Other(_) => unreachable!(),
        })
        .collect()
}

/// Which of the two boxes a spatial plan moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mover {
    Subject,
    Object,
}

/// Placement search tolerances, in normalized canvas units.
const PLAN_OFFSET: f64 = 0.08;
const PLAN_GAP: f64 = 0.04;
const PLAN_CLEARANCE: f64 = 0.02;
const PLAN_STEP: f64 = 0.01;

type NBox = [f64; 4];

fn nbox_intersects(a: &NBox, b: &NBox, inflate: f64) -> bool {
    a[0] < b[2] + inflate && b[0] - inflate < a[2] && a[1] < b[3] + inflate && b[1] - inflate < a[3]
}

fn nbox_center(b: &NBox) -> (f64, f64) {
    ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)
}

fn nbox_gap(a: &NBox, b: &NBox) -> f64 {
    let dx = (b[0] - a[2]).max(a[0] - b[2]).max(0.0);
    let dy = (b[1] - a[3]).max(a[1] - b[3]).max(0.0);
    dx.max(dy)
}

fn plan_satisfied(rel: &Relation, a: &NBox, b: &NBox) -> bool {
    let (ax, ay) = nbox_center(a);
    let (bx, by) = nbox_center(b);
    let h_overlap = a[0] < b[2] && b[0] < a[2];
    match rel {
        Relation::LeftOf => ax + PLAN_OFFSET < bx,
        Relation::RightOf => ax > bx + PLAN_OFFSET,
        Relation::Above => ay + PLAN_OFFSET < by,
        Relation::Below => ay > by + PLAN_OFFSET,
        Relation::NextTo => nbox_gap(a, b) <= PLAN_GAP,
        Relation::On => h_overlap && ay < by && (b[1] - a[3]).abs() <= PLAN_GAP,
        Relation::Under => h_overlap && ay > by && (a[1] - b[3]).abs() <= PLAN_GAP,
        Relation::Other(_) => false,
    }
}

/// A relation the move must not break.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct KeepRelation {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub subject_box: NBox,
    pub object_box: NBox,
}

impl KeepRelation {
    /// Whether the relation still holds once `mover` sits at `at`.
    fn holds_with(&self, mover: &str, at: &NBox) -> bool {
        let rel = Relation::parse(&self.relation);
        match (self.subject == mover, self.object == mover) {
            (true, _) => plan_satisfied(&rel, at, &self.object_box),
            (_, true) => plan_satisfied(&rel, &self.subject_box, at),
            _ => true,
        }
    }
}

/// Feasible positions for `mover` so that `rel(mover, fixed)` holds,
/// nearest to the current position first.
fn candidates(
    rel: &Relation,
    mover: (&str, &NBox),
    fixed: &NBox,
    obstacles: &[NBox],
    keep: &[KeepRelation],
) -> Vec<NBox> {
    let (name, mover) = mover;
    let (w, h) = (mover[2] - mover[0], mover[3] - mover[1]);
    let nx = ((1.0 - w) / PLAN_STEP + 1e-9).floor().max(-1.0) as i64;
    let ny = ((1.0 - h) / PLAN_STEP + 1e-9).floor().max(-1.0) as i64;
    let mut out: Vec<(f64, NBox)> = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let (x0, y0) = (i as f64 * PLAN_STEP, j as f64 * PLAN_STEP);
            let c = [x0, y0, x0 + w, y0 + h];
            if !plan_satisfied(rel, &c, fixed)
                || nbox_intersects(&c, fixed, PLAN_STEP)
                || obstacles.iter().any(|o| nbox_intersects(&c, o, PLAN_CLEARANCE))
                || !keep.iter().all(|k| k.holds_with(name, &c))
            {
                continue;
            }
            let d = (x0 - mover[0]).powi(2) + (y0 - mover[1]).powi(2);
            out.push((d, c));
        }
    }
    out.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1[1].total_cmp(&b.1[1]))
            .then(a.1[0].total_cmp(&b.1[0]))
    });
    out.into_iter().map(|(_, c)| c).collect()
}

/// Chooses a move. The subject is tried first; if it has no feasible
/// position the object moves under the converse relation. When no move
/// keeps every relation in `keep`, they are dropped.
pub fn plan_move(
    rel: &Relation,
    subject: (&str, &NBox),
    object: (&str, &NBox),
    obstacles: &[NBox],
    keep: &[KeepRelation],
    attempt: usize,
) -> Option<(Mover, NBox)> {
    for keep in [keep, &[]] {
        let subj = candidates(rel, subject, object.1, obstacles, keep);
        if !subj.is_empty() {
            return Some((Mover::Subject, subj[attempt % subj.len()]));
        }
        let obj = candidates(&rel.converse(), object, subject.1, obstacles, keep);
        if !obj.is_empty() {
            return Some((Mover::Object, obj[attempt % obj.len()]));
        }
    }
    None
}

/// Splits "name [x0, y0, x1, y1]".
fn parse_tagged_box(line: &str) -> Option<(&str, NBox)> {
    let start = line.find('[')?;
    Some((line[..start].trim(), serde_json::from_str(line[start..].trim()).ok()?))
}

impl MockWorld {
    pub fn new(cfg: MockConfig) -> Self {
        Self { cfg }
    }

    fn pause(&self) {
        if self.cfg.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.cfg.latency_ms));
        }
    }

    fn answer_decompose(&self, prompt: &str) -> String {
        let description = field(prompt, "DESCRIPTION").unwrap_or("");
        serde_json::to_string(&language::parse_description(description))
            .expect("scene output serializes")
    }

    fn answer_judge(&self, prompt: &str) -> String {
        let target = field(prompt, "TARGET").unwrap_or("");
        let answer = field(prompt, "ANSWER").unwrap_or("");
        if language::judge_agrees(target, answer) {
            "Yes.".into()
        } else {
            "No.".into()
        }
    }

    fn answer_spatial_plan(&self, prompt: &str) -> String {
        let parsed = (|| {
            let rel = Relation::parse(field(prompt, "RELATION")?);
            let subject = parse_tagged_box(field(prompt, "SUBJECT")?)?;
            let object = parse_tagged_box(field(prompt, "OBJECT")?)?;
            let obstacles: Vec<NBox> =
                serde_json::from_str(field(prompt, "OBSTACLES").unwrap_or("[]")).ok()?;
            let keep: Vec<KeepRelation> =
                serde_json::from_str(field(prompt, "KEEP").unwrap_or("[]")).ok()?;
            let attempt: usize = field(prompt, "ATTEMPT")
                .and_then(|a| a.parse().ok())
                .unwrap_or(0);
            Some((rel, subject, object, obstacles, keep, attempt))
        })();
        let Some((rel, (sn, sb), (on, ob), obstacles, keep, attempt)) = parsed else {
            return "I could not read the boxes.".into();
        };
        match plan_move(&rel, (sn, &sb), (on, &ob), &obstacles, &keep, attempt) {
            Some((mover, b)) => serde_json::json!({
                "move": mover,
                "new_box": b.map(|v| (v * 1000.0).round() / 1000.0),
            })
            .to_string(),
            None => "No placement satisfies the relation.".into(),
        }
    }

    fn answer_attribute(&self, image: &Image, category: &str, noun: &str) -> (String, bool) {
        let Some(c) = dominant(image, &self.cfg.nouns, noun) else {
            return (format!("I cannot see a {noun}."), false);
        };
        let category = category.to_lowercase();
        let text = match category.as_str() {
            "color" | "colour" => match c.color {
                Some(i) => color_name(i).to_string(),
                None => return (format!("The {noun} has no clear color."), false),
            },
            "texture" => if c.striped() { "striped" } else { "plain" }.to_string(),
            "shape" => shape_word(c.kind()).to_string(),
            _ => return ("I am not sure.".into(), false),
        };
        (format!("The {noun} is {text}."), true)
    }

    fn corrupt_attribute(&self, image: &Image, category: &str, noun: &str, r: u64) -> String {
        let Some(c) = dominant(image, &self.cfg.nouns, noun) else {
            return format!("I cannot see a {noun}.");
        };
        let text = match category.to_lowercase().as_str() {
            "color" | "colour" => color_name(other_color(c.color.unwrap_or(0), r)).to_string(),
            "texture" => if c.striped() { "plain" } else { "striped" }.to_string(),
            "shape" => shape_word(match c.kind() {
                ShapeKind::Rect => ShapeKind::Ellipse,
                ShapeKind::Ellipse => ShapeKind::Rect,
            })
            .to_string(),
            _ => "unknown".into(),
        };
        format!("The {noun} is {text}.")
    }

    fn answer_spatial(&self, image: &Image, a: &str, b: &str, swap: bool) -> String {
        let find = |label: &str| {
            self.cfg
                .nouns
                .lookup(label)
                .and_then(|(_, class)| matching(image, class).into_iter().next())
        };
        let (Some(ca), Some(cb)) = (find(a), find(b)) else {
            return format!("I cannot see both the {a} and the {b}.");
        };
        let (ra, rb) = if swap {
            (cb.bbox, ca.bbox)
        } else {
            (ca.bbox, cb.bbox)
        };
        let rels = describe_relations(&ra, &rb, self.cfg.spatial_offset_px, self.cfg.spatial_gap_px);
        if rels.is_empty() {
            format!("The {a} is far from the {b}.")
        } else {
            format!("The {a} is {} the {b}.", rels.join(" and "))
        }
    }

    fn parse_instruction<'a>(&self, instruction: &'a str) -> Option<(&'a str, &'a str)> {
        let rest = instruction.trim();
        let head = rest.get(..9)?;
        if !head.eq_ignore_ascii_case("make the ") {
            return None;
        }
        rest[9..].trim_end_matches(['.', ' ']).rsplit_once(' ')
    }
}

fn recolor(image: &mut Image, pixels: &[(u32, u32)], color: usize) {
    for &(x, y) in pixels {
        if classify(image.get(x, y)) != PixelClass::Ink {
            image.put(x, y, PALETTE[color].1);
        }
    }
}

fn set_texture(image: &mut Image, pixels: &[(u32, u32)], top: u32, color: usize, striped: bool) {
    for &(x, y) in pixels {
        let ink = striped && (y - top) % STRIPE_PERIOD == 0;
        image.put(x, y, if ink { STRIPE_INK } else { PALETTE[color].1 });
    }
}

impl Llm for MockWorld {
    fn complete(&self, prompt: &str, _temperature: f32) -> BackendResult<String> {
        self.pause();
        Ok(match field(prompt, "TASK") {
            Some("decompose") => self.answer_decompose(prompt),
            Some("judge") => self.answer_judge(prompt),
            Some("spatial_plan") => self.answer_spatial_plan(prompt),
            _ => "I do not understand the task.".into(),
        })
    }
}

impl Vlm for MockWorld {
    fn query(&self, image: &Image, question: &str) -> BackendResult<String> {
        self.pause();
        let (u, r) = draws(
            self.cfg.salt,
            &[b"vlm", question.as_bytes(), image.digest().as_bytes()],
        );
        let noisy = u < self.cfg.vlm_noise;
        if let Some((category, noun)) = parse_between(question, "What is the ", " of the ") {
            let (answer, answerable) = self.answer_attribute(image, category, noun);
            if noisy && answerable {
                return Ok(self.corrupt_attribute(image, category, noun, r));
            }
            return Ok(answer);
        }
        if let Some((a, b)) = parse_between(question, "Where is the ", " relative to the ") {
            return Ok(self.answer_spatial(image, a, b, noisy));
        }
        Ok("I cannot answer that question.".into())
    }
}

impl Detector for MockWorld {
    fn detect(&self, image: &Image, label: &str) -> BackendResult<Vec<DetectionBox>> {
        self.pause();
        let Some((_, class)) = self.cfg.nouns.lookup(label) else {
            return Ok(vec![]);
        };
        Ok(matching(image, class)
            .iter()
            .enumerate()
            .map(|(rank, c)| DetectionBox::new(c.bbox, (1.0 - 0.01 * rank as f32).max(0.0)))
            .collect())
    }
}

impl Segmenter for MockWorld {
    fn segment(&self, image: &Image, bbox: &DetectionBox) -> BackendResult<ObjectMask> {
        self.pause();
        let inner = bbox.rect();
        let window = inner.expanded(self.cfg.segment_dilation, image.size());
        let mut comps = components_in(image, window);
        sort_by_area(&mut comps);
        let best = comps.into_iter().max_by_key(|c| {
            (
                c.pixels.iter().filter(|(x, y)| inner.contains(*x, *y)).count(),
                c.area(),
            )
        });
        if let Some(c) = best.filter(|c| c.pixels.iter().any(|(x, y)| inner.contains(*x, *y))) {
            return Ok(c.mask(image.size()));
        }
        // Objects below the component size floor: any foreground inside the box.
        let mut m = ObjectMask::empty(image.size());
        for y in inner.y..inner.bottom() {
            for x in inner.x..inner.right() {
                if classify(image.get(x, y)) != PixelClass::Background {
                    m.set(x, y, true);
                }
            }
        }
        if m.is_empty() {
            Err(BackendError::EmptyMask)
        } else {
            Ok(m)
        }
    }
}

impl Inpainter for MockWorld {
    fn inpaint_remove(&self, image: &Image, mask: &ObjectMask) -> BackendResult<Image> {
        self.pause();
        if mask.size() != image.size() {
            return Err(BackendError::InvalidInput("mask size mismatch".into()));
        }
        let mut out = image.clone();
        for (x, y) in mask.iter_set() {
            out.put(x, y, BACKGROUND);
        }
        Ok(out)
    }
}

impl Editor for MockWorld {
    fn edit(&self, crop: &Image, instruction: &str, seed: u64) -> BackendResult<Image> {
        self.pause();
        let mut out = crop.clone();
        let Some((noun, attribute)) = self.parse_instruction(instruction) else {
            return Ok(out);
        };
        let Some(c) = dominant(crop, &self.cfg.nouns, noun) else {
            return Ok(out);
        };
        let (u, r) = draws(
            self.cfg.salt,
            &[
                b"edit",
                instruction.as_bytes(),
                &seed.to_le_bytes(),
                crop.digest().as_bytes(),
            ],
        );
        let failed = u < self.cfg.edit_failure;
        let attribute = attribute.to_lowercase();
        let current = c.color.unwrap_or(0);
        match AttributeCategory::classify(&attribute) {
            AttributeCategory::Color => {
                let Some(target) = color_index(&attribute) else {
                    return Ok(out);
                };
                let color = if failed { other_color(target, r) } else { target };
                recolor(&mut out, &c.pixels, color);
            }
            AttributeCategory::Texture if !failed => match attribute.as_str() {
                "striped" => set_texture(&mut out, &c.pixels, c.bbox.y, current, true),
                "plain" | "solid" => set_texture(&mut out, &c.pixels, c.bbox.y, current, false),
                _ => {}
            },
            AttributeCategory::Shape if !failed => {
                if let Some(kind) = shape_from_word(&attribute) {
                    for &(x, y) in &c.pixels {
                        out.put(x, y, BACKGROUND);
                    }
                    Shape {
                        kind,
                        color: current,
                        striped: c.striped(),
                        rect: c.bbox,
                    }
                    .draw(&mut out);
                }
            }
            _ => {}
        }
        Ok(out)
    }
}

impl LayoutGenerator for MockWorld {
    fn propose_box(
        &self,
        description: &str,
        existing: &[DetectionBox],
        canvas: Size,
    ) -> BackendResult<DetectionBox> {
        self.pause();
        let aspect = self
            .cfg
            .nouns
            .lookup(description)
            .map_or(1.0, |(_, c)| c.aspect.ratio());
        let mut areas: Vec<u64> = existing.iter().map(|b| b.rect().area()).collect();
        areas.sort_unstable();
        let side = match areas.len() {
            0 => canvas.width.min(canvas.height) as f64 / 5.0,
            n => (areas[n / 2] as f64).sqrt(),
        };
        let obstacles: Vec<Rect> = existing
            .iter()
            .map(|b| b.rect().expanded(self.cfg.placement_gap, canvas))
            .collect();
        for scale in [1.0, 0.85, 0.7, 0.55, 0.4] {
            let s = side * scale / 0.8;
            let w = (s * aspect.sqrt()).round().max(1.0) as u32;
            let h = (s / aspect.sqrt()).round().max(1.0) as u32;
            if w > canvas.width || h > canvas.height {
                continue;
            }
            let step = (w.min(h) / 4).max(1) as usize;
            for y in (0..=canvas.height - h).step_by(step) {
                for x in (0..=canvas.width - w).step_by(step) {
                    let c = Rect::new(x, y, w, h);
                    let clear = existing
                        .iter()
                        .all(|e| e.rect().iou(&c) < self.cfg.iou_threshold)
                        && obstacles.iter().all(|o| o.intersect(&c).is_none());
                    if clear {
                        return Ok(DetectionBox::new(c, 1.0));
                    }
                }
            }
        }
        Err(BackendError::NoFeasiblePlacement)
    }
}

/// The shape a generator draws for `description` inside a `w × h` patch.
pub fn generated_shape(nouns: &NounTable, description: &str, w: u32, h: u32) -> Shape {
    let lower = description.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let color = words
        .iter()
        .find_map(|w| color_index(w))
        .unwrap_or_else(|| color_index("gray").expect("gray in palette"));
    let striped = words.contains(&"striped");
    let (kind, aspect) = nouns
        .lookup(&lower)
        .map_or((ShapeKind::Ellipse, AspectClass::Square), |(_, c)| {
            (c.kind, c.aspect)
        });
    let iw = ((w as f64 * 0.8).round() as u32).max(1);
    let ih = ((h as f64 * 0.8).round() as u32).max(1);
    let inner = Rect::new((w - iw) / 2, (h - ih) / 2, iw, ih);
    Shape {
        kind,
        color,
        striped,
        rect: inner.fit_aspect(aspect.ratio()),
    }
}

impl ObjectGenerator for MockWorld {
    fn generate(&self, description: &str, bbox: &DetectionBox) -> BackendResult<Image> {
        self.pause();
        if bbox.w == 0 || bbox.h == 0 {
            return Err(BackendError::InvalidInput("empty box".into()));
        }
        let mut patch = Image::filled(bbox.w, bbox.h, BACKGROUND);
        generated_shape(&self.cfg.nouns, description, bbox.w, bbox.h).draw(&mut patch);
        Ok(patch)
    }
}

/// Pixels of latent cell `(cx, cy)` clipped to the image, row-major.
fn cell_pixels(width: u32, height: u32, cx: usize, cy: usize) -> impl Iterator<Item = (usize, u32, u32)> {
    let x0 = cx as u32 * LATENT_CELL;
    let y0 = cy as u32 * LATENT_CELL;
    (0..LATENT_CELL).flat_map(move |dy| {
        (0..LATENT_CELL).filter_map(move |dx| {
            let (x, y) = (x0 + dx, y0 + dy);
            (x < width && y < height).then_some(((dy * LATENT_CELL + dx) as usize, x, y))
        })
    })
}

pub fn encode(image: &Image) -> Latent {
    let (w, h) = (image.width(), image.height());
    let cols = w.div_ceil(LATENT_CELL) as usize;
    let rows = h.div_ceil(LATENT_CELL) as usize;
    let mut z = Latent::zeros(w, h, cols, rows, LATENT_CHANNELS);
    for cy in 0..rows {
        for cx in 0..cols {
            let mut sum = [0f64; 3];
            let mut n = 0usize;
            for (_, x, y) in cell_pixels(w, h, cx, cy) {
                let p = image.get(x, y);
                for c in 0..3 {
                    sum[c] += p[c] as f64;
                }
                n += 1;
            }
            let mean = sum.map(|s| (s / n as f64) as f32);
            let cell = z.cell_mut(cy * cols + cx);
            cell[..MEAN_CHANNELS].copy_from_slice(&mean);
            for (k, x, y) in cell_pixels(w, h, cx, cy) {
                let p = image.get(x, y);
                for c in 0..3 {
                    cell[MEAN_CHANNELS + 3 * k + c] = p[c] as f32 - mean[c];
                }
            }
        }
    }
    z
}

pub fn decode(z: &Latent) -> BackendResult<Image> {
    if z.channels != LATENT_CHANNELS
        || z.cols != z.width.div_ceil(LATENT_CELL) as usize
        || z.rows != z.height.div_ceil(LATENT_CELL) as usize
        || z.data.len() != z.cells() * z.channels
        || z.width == 0
        || z.height == 0
    {
        return Err(BackendError::InvalidInput("latent shape does not match the mock codec".into()));
    }
    let mut img = Image::filled(z.width, z.height, [0, 0, 0]);
    for cy in 0..z.rows {
        for cx in 0..z.cols {
            let cell = z.cell(cy * z.cols + cx);
            for (k, x, y) in cell_pixels(z.width, z.height, cx, cy) {
                let mut p = [0u8; 3];
                for c in 0..3 {
                    let v = cell[c] + cell[MEAN_CHANNELS + 3 * k + c];
                    p[c] = v.round().clamp(0.0, 255.0) as u8;
                }
                img.put(x, y, p);
            }
        }
    }
    Ok(img)
}

/// One smoothing step on the mean channels: each cell moves toward the
/// average of its in-grid 3×3 neighbourhood.
pub fn smooth_step(z: &Latent, strength: f32) -> Latent {
    let mut out = z.clone();
    for cy in 0..z.rows {
        for cx in 0..z.cols {
            let mut sum = [0f32; MEAN_CHANNELS];
            let mut n = 0f32;
            for ny in cy.saturating_sub(1)..=(cy + 1).min(z.rows - 1) {
                for nx in cx.saturating_sub(1)..=(cx + 1).min(z.cols - 1) {
                    let c = z.cell(ny * z.cols + nx);
                    for k in 0..MEAN_CHANNELS {
                        sum[k] += c[k];
                    }
                    n += 1.0;
                }
            }
            let src = z.cell(cy * z.cols + cx);
            let dst = out.cell_mut(cy * z.cols + cx);
            for k in 0..MEAN_CHANNELS {
                dst[k] = src[k] + strength * (sum[k] / n - src[k]);
            }
        }
    }
    out
}

impl Refiner for MockWorld {
    fn invert(&self, image: &Image, steps: usize) -> BackendResult<LatentTrajectory> {
        self.pause();
        if steps == 0 {
            return Err(BackendError::InvalidInput("trajectory needs at least one step".into()));
        }
        let z = Arc::new(encode(image));
        Ok(LatentTrajectory {
            steps,
            latents: vec![z; steps],
        })
    }

    fn step(&self, latent: &Latent, _t: usize) -> BackendResult<Latent> {
        self.pause();
        if latent.channels != LATENT_CHANNELS || latent.data.len() != latent.cells() * latent.channels {
            return Err(BackendError::InvalidInput("latent shape does not match the mock codec".into()));
        }
        Ok(smooth_step(latent, self.cfg.refine_strength))
    }

    fn decode(&self, latent: &Latent) -> BackendResult<Image> {
        self.pause();
        decode(latent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use world::render;

    fn bird(color: usize, rect: Rect) -> Shape {
        Shape {
            kind: ShapeKind::Ellipse,
            color,
            striped: false,
            rect,
        }
    }

    #[test]
    fn codec_round_trip_is_lossless() {
        let canvas = Size::new(37, 21);
        let img = render(
            canvas,
            &[
                bird(3, Rect::new(2, 2, 12, 12)),
                Shape {
                    kind: ShapeKind::Rect,
                    color: 7,
                    striped: true,
                    rect: Rect::new(20, 3, 9, 17),
                },
            ],
        );
        let z = encode(&img);
        assert_eq!((z.cols, z.rows), (5, 3));
        assert_eq!(decode(&z).unwrap(), img);
    }

    #[test]
    fn smoothing_leaves_flat_regions_alone() {
        let img = Image::filled(24, 24, BACKGROUND);
        let z = encode(&img);
        let s = smooth_step(&z, 0.5);
        assert_eq!(decode(&s).unwrap(), img);
    }

    #[test]
    fn detection_scores_follow_area_rank() {
        let w = MockWorld::default();
        let img = render(
            Size::new(100, 40),
            &[
                bird(5, Rect::new(2, 2, 10, 10)),
                bird(5, Rect::new(20, 2, 20, 20)),
                bird(5, Rect::new(50, 2, 15, 15)),
            ],
        );
        let boxes = w.detect(&img, "bird").unwrap();
        let scores: Vec<f32> = boxes.iter().map(|b| b.score).collect();
        assert_eq!(scores, vec![1.0, 0.99, 0.98]);
        assert_eq!(boxes[0].rect(), Rect::new(20, 2, 20, 20));
        assert!(w.detect(&Image::filled(10, 10, BACKGROUND), "bird").unwrap().is_empty());
    }

    #[test]
    fn vlm_reads_color_and_relation() {
        let w = MockWorld::default();
        let img = render(
            Size::new(100, 40),
            &[
                bird(5, Rect::new(2, 2, 12, 12)),
                Shape {
                    kind: ShapeKind::Rect,
                    color: 8,
                    striped: false,
                    rect: Rect::new(60, 5, 8, 16),
                },
            ],
        );
        assert_eq!(
            w.query(&img, "What is the color of the deer?").unwrap(),
            "The deer is brown."
        );
        let a = w.query(&img, "Where is the bird relative to the deer?").unwrap();
        assert!(language::judge_agrees("left of", &a), "{a}");
        assert!(!language::judge_agrees("right of", &a), "{a}");
    }

    #[test]
    fn editor_recolors_and_fails_on_demand() {
        let img = render(Size::new(30, 30), &[bird(8, Rect::new(5, 5, 20, 20))]);
        let ok = MockWorld::default()
            .edit(&img, "Make the bird yellow.", 0)
            .unwrap();
        let c = dominant(&ok, &NounTable::default(), "bird").unwrap();
        assert_eq!(c.color, color_index("yellow"));
        let broken = MockWorld::new(MockConfig {
            edit_failure: 1.0,
            ..Default::default()
        });
        for seed in 0..5 {
            let out = broken.edit(&img, "Make the bird yellow.", seed).unwrap();
            let c = dominant(&out, &NounTable::default(), "bird").unwrap();
            assert_ne!(c.color, color_index("yellow"));
        }
    }

    #[test]
    fn planner_satisfies_relation() {
        let (mover, b) = plan_move(
            &Relation::LeftOf,
            ("cat_1", &[0.6, 0.4, 0.7, 0.5]),
            ("dog_2", &[0.2, 0.4, 0.3, 0.5]),
            &[],
            &[],
            0,
        )
        .unwrap();
        assert_eq!(mover, Mover::Subject);
        assert!(plan_satisfied(&Relation::LeftOf, &b, &[0.2, 0.4, 0.3, 0.5]));
    }

    #[test]
    fn planner_keeps_earlier_relations() {
        let cat = [0.6, 0.4, 0.7, 0.5];
        let dog = [0.2, 0.4, 0.3, 0.5];
        let bird = [0.3, 0.7, 0.4, 0.8];
        let keep = [KeepRelation {
            subject: "cat_1".into(),
            relation: "right of".into(),
            object: "bird_3".into(),
            subject_box: cat,
            object_box: bird,
        }];
        let go = |keep: &[KeepRelation]| {
            plan_move(&Relation::LeftOf, ("cat_1", &cat), ("dog_2", &dog), &[bird], keep, 0).unwrap()
        };
        let (mover, b) = go(&[]);
        assert_eq!(mover, Mover::Subject);
        assert!(!plan_satisfied(&Relation::RightOf, &b, &bird));
        let (mover, b) = go(&keep);
        assert_eq!(mover, Mover::Object);
        assert!(plan_satisfied(&Relation::LeftOf, &cat, &b));
    }

    #[test]
    fn layout_respects_iou_and_gap() {
        let w = MockWorld::default();
        let canvas = Size::new(120, 120);
        let existing = vec![
            DetectionBox::new(Rect::new(0, 0, 30, 30), 1.0),
            DetectionBox::new(Rect::new(40, 40, 30, 30), 1.0),
        ];
        let b = w.propose_box("a bird", &existing, canvas).unwrap();
        for e in &existing {
            assert!(e.rect().iou(&b.rect()) < 0.3);
            assert!(e.rect().gap(&b.rect()) >= 4.0);
        }
        assert!(b.rect().fits_in(canvas));
    }
}
