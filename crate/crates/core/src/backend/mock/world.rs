//! The flat-shape world: flat-colored rectangles and ellipses on a plain
//! background, optionally striped. Every property the engine corrects
//! (count, color, texture, relative position) is recoverable from pixels.

use serde::{Deserialize, Serialize};

use crate::geometry::{Rect, Size};
use crate::image::{Image, ObjectMask, Rgb};

pub const BACKGROUND: Rgb = [190, 210, 160];
pub const STRIPE_INK: Rgb = [255, 0, 255];
/// Stripe rows repeat with this period, counted from the shape's top edge.
pub const STRIPE_PERIOD: u32 = 4;

pub const PALETTE: [(&str, Rgb); 12] = [
    ("red", [220, 30, 30]),
    ("orange", [255, 140, 0]),
    ("yellow", [250, 230, 40]),
    ("green", [30, 170, 50]),
    ("cyan", [40, 220, 230]),
    ("blue", [30, 60, 220]),
    ("purple", [130, 40, 170]),
    ("pink", [250, 130, 190]),
    ("brown", [130, 80, 30]),
    ("black", [20, 20, 20]),
    ("gray", [128, 128, 128]),
    ("white", [250, 250, 250]),
];

pub fn color_index(name: &str) -> Option<usize> {
    let name = name.trim().to_lowercase();
    let name = if name == "grey" { "gray".to_string() } else { name };
    PALETTE.iter().position(|(n, _)| *n == name)
}

pub fn color_name(i: usize) -> &'static str {
    PALETTE[i].0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelClass {
    Background,
    Ink,
    Color(usize),
}

fn dist2(a: Rgb, b: Rgb) -> u32 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| {
            let d = *p as i32 - *q as i32;
            (d * d) as u32
        })
        .sum()
}

/// Nearest reference color among background, stripe ink and the palette.
pub fn classify(c: Rgb) -> PixelClass {
    let mut best = (dist2(c, BACKGROUND), PixelClass::Background);
    let ink = dist2(c, STRIPE_INK);
    if ink < best.0 {
        best = (ink, PixelClass::Ink);
    }
    for (i, (_, p)) in PALETTE.iter().enumerate() {
        let d = dist2(c, *p);
        if d < best.0 {
            best = (d, PixelClass::Color(i));
        }
    }
    best.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectClass {
    Square,
    Wide,
    Tall,
}

impl AspectClass {
    pub fn ratio(self) -> f64 {
        match self {
            Self::Square => 1.0,
            Self::Wide => 2.0,
            Self::Tall => 0.5,
        }
    }

    pub fn of(w: u32, h: u32) -> Self {
        let r = w as f64 / h as f64;
        if r >= 1.5 {
            Self::Wide
        } else if r <= 1.0 / 1.5 {
            Self::Tall
        } else {
            Self::Square
        }
    }
}

/// Visual signature the mock backends use to recognise a noun.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NounClass {
    pub kind: ShapeKind,
    pub aspect: AspectClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounEntry {
    pub noun: String,
    pub kind: ShapeKind,
    pub aspect: AspectClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounTable {
    pub entries: Vec<NounEntry>,
}

impl Default for NounTable {
    fn default() -> Self {
        use AspectClass::*;
        use ShapeKind::*;
        let e = |noun: &str, kind, aspect| NounEntry {
            noun: noun.into(),
            kind,
            aspect,
        };
        Self {
            entries: vec![
                e("bird", Ellipse, Square),
                e("bear", Rect, Square),
                e("deer", Rect, Tall),
                e("cat", Ellipse, Wide),
                e("dog", Rect, Wide),
                e("balloon", Ellipse, Tall),
            ],
        }
    }
}

impl NounTable {
    pub fn nouns(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.noun.as_str())
    }

    /// Resolves a label (possibly plural or prefixed by attributes).
    pub fn lookup(&self, label: &str) -> Option<(&str, NounClass)> {
        let label = label.trim().to_lowercase();
        let last = label.split_whitespace().last()?.to_string();
        let mut candidates = vec![label.clone(), last.clone()];
        for w in [&label, &last] {
            if let Some(s) = w.strip_suffix("es") {
                candidates.push(s.to_string());
            }
            if let Some(s) = w.strip_suffix('s') {
                candidates.push(s.to_string());
            }
        }
        candidates.iter().find_map(|c| {
            self.entries.iter().find(|e| &e.noun == c).map(|e| {
                (
                    e.noun.as_str(),
                    NounClass {
                        kind: e.kind,
                        aspect: e.aspect,
                    },
                )
            })
        })
    }

    pub fn noun_for(&self, class: NounClass) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.kind == class.kind && e.aspect == class.aspect)
            .map(|e| e.noun.as_str())
    }
}

/// A drawable shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: usize,
    pub striped: bool,
    pub rect: Rect,
}

impl Shape {
    pub fn covers(&self, x: u32, y: u32) -> bool {
        if !self.rect.contains(x, y) {
            return false;
        }
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => {
                let (cx, cy) = self.rect.center();
                let rx = self.rect.w as f64 / 2.0;
                let ry = self.rect.h as f64 / 2.0;
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    pub fn color_at(&self, y: u32) -> Rgb {
        if self.striped && (y - self.rect.y) % STRIPE_PERIOD == 0 {
            STRIPE_INK
        } else {
            PALETTE[self.color].1
        }
    }

    pub fn draw(&self, image: &mut Image) {
        let r = match self.rect.intersect(&image.size().full_rect()) {
            Some(r) => r,
            None => return,
        };
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                if self.covers(x, y) {
                    image.put(x, y, self.color_at(y));
                }
            }
        }
    }

    pub fn mask(&self, canvas: Size) -> ObjectMask {
        let mut m = ObjectMask::empty(canvas);
        if let Some(r) = self.rect.intersect(&canvas.full_rect()) {
            for y in r.y..r.bottom() {
                for x in r.x..r.right() {
                    if self.covers(x, y) {
                        m.set(x, y, true);
                    }
                }
            }
        }
        m
    }
}

pub fn render(canvas: Size, shapes: &[Shape]) -> Image {
    let mut img = Image::filled(canvas.width, canvas.height, BACKGROUND);
    for s in shapes {
        s.draw(&mut img);
    }
    img
}

/// A 4-connected region of non-background pixels.
#[derive(Clone, Debug)]
pub struct Component {
    pub bbox: Rect,
    pub pixels: Vec<(u32, u32)>,
    /// Majority palette color, ignoring stripe ink.
    pub color: Option<usize>,
    pub ink_fraction: f64,
}

pub const MIN_COMPONENT_AREA: usize = 6;
pub const STRIPED_INK_FRACTION: f64 = 0.12;

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn fill(&self) -> f64 {
        self.area() as f64 / self.bbox.area() as f64
    }

    pub fn kind(&self) -> ShapeKind {
        if self.fill() >= 0.9 {
            ShapeKind::Rect
        } else {
            ShapeKind::Ellipse
        }
    }

    pub fn class(&self) -> NounClass {
        NounClass {
            kind: self.kind(),
            aspect: AspectClass::of(self.bbox.w, self.bbox.h),
        }
    }

    pub fn striped(&self) -> bool {
        self.ink_fraction >= STRIPED_INK_FRACTION
    }

    pub fn mask(&self, canvas: Size) -> ObjectMask {
        let mut m = ObjectMask::empty(canvas);
        for &(x, y) in &self.pixels {
            m.set(x, y, true);
        }
        m
    }
}

/// Connected components of foreground pixels inside `window`.
pub fn components_in(image: &Image, window: Rect) -> Vec<Component> {
    let window = match window.intersect(&image.size().full_rect()) {
        Some(w) => w,
        None => return vec![],
    };
    let (ww, wh) = (window.w as usize, window.h as usize);
    let mut class = Vec::with_capacity(ww * wh);
    for y in window.y..window.bottom() {
        for x in window.x..window.right() {
            class.push(classify(image.get(x, y)));
        }
    }
    let mut seen = vec![false; ww * wh];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..ww * wh {
        if seen[start] || class[start] == PixelClass::Background {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut counts = [0usize; PALETTE.len()];
        let mut ink = 0usize;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (lx, ly) = (i % ww, i / ww);
            x0 = x0.min(lx);
            y0 = y0.min(ly);
            x1 = x1.max(lx);
            y1 = y1.max(ly);
            match class[i] {
                PixelClass::Color(c) => counts[c] += 1,
                PixelClass::Ink => ink += 1,
                PixelClass::Background => unreachable!(),
            }
            pixels.push((window.x + lx as u32, window.y + ly as u32));
            let mut visit = |j: usize| {
                if !seen[j] && class[j] != PixelClass::Background {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if lx > 0 {
                visit(i - 1);
            }
            if lx + 1 < ww {
                visit(i + 1);
            }
            if ly > 0 {
                visit(i - ww);
            }
            if ly + 1 < wh {
                visit(i + ww);
            }
        }
        if pixels.len() < MIN_COMPONENT_AREA {
            continue;
        }
        let color = counts
            .iter()
            .enumerate()
            .filter(|(_, n)| **n > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i);
        let ink_fraction = ink as f64 / pixels.len() as f64;
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(Component {
            bbox: Rect::new(
                window.x + x0 as u32,
                window.y + y0 as u32,
                (x1 - x0 + 1) as u32,
                (y1 - y0 + 1) as u32,
            ),
            pixels,
            color,
            ink_fraction,
        });
    }
    out
}

pub fn components(image: &Image) -> Vec<Component> {
    components_in(image, image.size().full_rect())
}

/// Components whose visual signature matches `class`, largest first.
pub fn matching(image: &Image, class: NounClass) -> Vec<Component> {
    let mut v: Vec<_> = components(image)
        .into_iter()
        .filter(|c| c.class() == class)
        .collect();
    sort_by_area(&mut v);
    v
}

pub fn sort_by_area(v: &mut [Component]) {
    v.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(a.bbox.x.cmp(&b.bbox.x))
            .then(a.bbox.y.cmp(&b.bbox.y))
    });
}

/// The component a question about `label` most plausibly refers to:
/// the largest one of the label's class, else the largest overall.
pub fn dominant(image: &Image, nouns: &NounTable, label: &str) -> Option<Component> {
    let mut all = components(image);
    sort_by_area(&mut all);
    if let Some((_, class)) = nouns.lookup(label) {
        if let Some(c) = all.iter().find(|c| c.class() == class) {
            return Some(c.clone());
        }
    }
    all.into_iter().next()
}
