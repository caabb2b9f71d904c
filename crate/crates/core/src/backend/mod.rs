//! Uniform interfaces over the model backends, plus the suite that
//! bundles one handle per kind with per-kind concurrency limits.

pub mod mock;
pub mod remote;
pub mod wire;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sort_detections, DetectionBox, Size};
use crate::image::{Image, ObjectMask};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "message", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("segmentation produced an empty mask")]
    EmptyMask,
    #[error("no feasible placement for new object")]
    NoFeasiblePlacement,
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

pub type BackendResult<T> = std::result::Result<T, BackendError>;

/// Latent grid of `cols × rows` cells, `channels` values per cell, cell-major.
/// `width` and `height` are the pixel dimensions the latent decodes to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub width: u32,
    pub height: u32,
    pub cols: usize,
    pub rows: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Latent {
    pub fn zeros(width: u32, height: u32, cols: usize, rows: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            cols,
            rows,
            channels,
            data: vec![0.0; cols * rows * channels],
        }
    }

    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }

    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn cell_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.cols == other.cols && self.rows == other.rows && self.channels == other.channels
    }
}

/// Source latents for each refinement step, noisiest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub steps: usize,
    pub latents: Vec<Arc<Latent>>,
}

impl LatentTrajectory {
    pub fn is_consistent(&self) -> bool {
        self.steps >= 1
            && self.latents.len() == self.steps
            && self.latents.windows(2).all(|w| w[0].same_shape(&w[1]))
    }
}

pub trait Llm: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f32) -> BackendResult<String>;
}

pub trait Vlm: Send + Sync {
    fn query(&self, image: &Image, question: &str) -> BackendResult<String>;
}

pub trait Detector: Send + Sync {
    fn detect(&self, image: &Image, label: &str) -> BackendResult<Vec<DetectionBox>>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Image, bbox: &DetectionBox) -> BackendResult<ObjectMask>;
}

pub trait Inpainter: Send + Sync {
    fn inpaint_remove(&self, image: &Image, mask: &ObjectMask) -> BackendResult<Image>;
}

pub trait Editor: Send + Sync {
    fn edit(&self, crop: &Image, instruction: &str, seed: u64) -> BackendResult<Image>;
}

pub trait LayoutGenerator: Send + Sync {
    fn propose_box(
        &self,
        description: &str,
        existing: &[DetectionBox],
        canvas: Size,
    ) -> BackendResult<DetectionBox>;
}

pub trait ObjectGenerator: Send + Sync {
    fn generate(&self, description: &str, bbox: &DetectionBox) -> BackendResult<Image>;
}

pub trait Refiner: Send + Sync {
    fn invert(&self, image: &Image, steps: usize) -> BackendResult<LatentTrajectory>;
    fn step(&self, latent: &Latent, t: usize) -> BackendResult<Latent>;
    fn decode(&self, latent: &Latent) -> BackendResult<Image>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Llm,
    Vlm,
    Detector,
    Segmenter,
    Inpainter,
    Editor,
    LayoutGenerator,
    ObjectGenerator,
    Refiner,
}

impl BackendKind {
    pub const ALL: [BackendKind; 9] = [
        Self::Llm,
        Self::Vlm,
        Self::Detector,
        Self::Segmenter,
        Self::Inpainter,
        Self::Editor,
        Self::LayoutGenerator,
        Self::ObjectGenerator,
        Self::Refiner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Vlm => "vlm",
            Self::Detector => "detector",
            Self::Segmenter => "segmenter",
            Self::Inpainter => "inpainter",
            Self::Editor => "editor",
            Self::LayoutGenerator => "layout_generator",
            Self::ObjectGenerator => "object_generator",
            Self::Refiner => "refiner",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Raw handles, one per backend kind.
#[derive(Clone)]
pub struct BackendHandles {
    pub llm: Arc<dyn Llm>,
    pub vlm: Arc<dyn Vlm>,
    pub detector: Arc<dyn Detector>,
    pub segmenter: Arc<dyn Segmenter>,
    pub inpainter: Arc<dyn Inpainter>,
    pub editor: Arc<dyn Editor>,
    pub layout_generator: Arc<dyn LayoutGenerator>,
    pub object_generator: Arc<dyn ObjectGenerator>,
    pub refiner: Arc<dyn Refiner>,
}

struct Gate {
    acquire: Receiver<()>,
    release: Sender<()>,
}

impl Gate {
    fn new(limit: usize) -> Self {
        let limit = limit.max(1);
        let (release, acquire) = bounded(limit);
        for _ in 0..limit {
            release.send(()).expect("fresh channel has capacity");
        }
        Self { acquire, release }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        self.acquire.recv().expect("gate sender lives with the gate");
        struct Permit<'a>(&'a Sender<()>);
        impl Drop for Permit<'_> {
            fn drop(&mut self) {
                let _ = self.0.send(());
            }
        }
        let _permit = Permit(&self.release);
        f()
    }
}

/// All backends a job needs. Every call goes through a per-kind gate that
/// bounds concurrency, and is counted. Detector output is re-sorted so the
/// ordering contract holds for any implementation.
pub struct BackendSuite {
    handles: BackendHandles,
    gates: Vec<Gate>,
    calls: Vec<AtomicU64>,
}

pub const DEFAULT_CONCURRENCY_LIMIT: usize = 4;

impl BackendSuite {
    pub fn new(handles: BackendHandles, concurrency_limit: usize) -> Self {
        Self {
            handles,
            gates: BackendKind::ALL
                .iter()
                .map(|_| Gate::new(concurrency_limit))
                .collect(),
            calls: BackendKind::ALL.iter().map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn handles(&self) -> &BackendHandles {
        &self.handles
    }

    pub fn calls(&self, kind: BackendKind) -> u64 {
        self.calls[kind.index()].load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        for c in &self.calls {
            c.store(0, Ordering::SeqCst);
        }
    }

    fn call<T>(&self, kind: BackendKind, f: impl FnOnce() -> T) -> T {
        self.calls[kind.index()].fetch_add(1, Ordering::SeqCst);
        self.gates[kind.index()].run(f)
    }

    pub fn complete(&self, prompt: &str, temperature: f32) -> BackendResult<String> {
        self.call(BackendKind::Llm, || self.handles.llm.complete(prompt, temperature))
    }

    pub fn vlm_query(&self, image: &Image, question: &str) -> BackendResult<String> {
        self.call(BackendKind::Vlm, || self.handles.vlm.query(image, question))
    }

    pub fn detect(&self, image: &Image, label: &str) -> BackendResult<Vec<DetectionBox>> {
        if label.trim().is_empty() {
            return Err(BackendError::InvalidInput("empty detection label".into()));
        }
        let mut boxes = self.call(BackendKind::Detector, || {
            self.handles.detector.detect(image, label)
        })?;
        sort_detections(&mut boxes);
        Ok(boxes)
    }

    pub fn segment(&self, image: &Image, bbox: &DetectionBox) -> BackendResult<ObjectMask> {
        if !bbox.rect().fits_in(image.size()) {
            return Err(BackendError::InvalidInput(format!(
                "box {:?} outside image",
                bbox.rect()
            )));
        }
        self.call(BackendKind::Segmenter, || {
            self.handles.segmenter.segment(image, bbox)
        })
    }

    pub fn inpaint_remove(&self, image: &Image, mask: &ObjectMask) -> BackendResult<Image> {
        if mask.size() != image.size() {
            return Err(BackendError::InvalidInput("mask size mismatch".into()));
        }
        if mask.is_empty() {
            return Ok(image.clone());
        }
        self.call(BackendKind::Inpainter, || {
            self.handles.inpainter.inpaint_remove(image, mask)
        })
    }

    pub fn edit(&self, crop: &Image, instruction: &str, seed: u64) -> BackendResult<Image> {
        let out = self.call(BackendKind::Editor, || {
            self.handles.editor.edit(crop, instruction, seed)
        })?;
        if out.size() != crop.size() {
            return Err(BackendError::Protocol(
                "editor changed the crop dimensions".into(),
            ));
        }
        Ok(out)
    }

    pub fn propose_box(
        &self,
        description: &str,
        existing: &[DetectionBox],
        canvas: Size,
    ) -> BackendResult<DetectionBox> {
        let b = self.call(BackendKind::LayoutGenerator, || {
            self.handles
                .layout_generator
                .propose_box(description, existing, canvas)
        })?;
        if !b.rect().fits_in(canvas) {
            return Err(BackendError::Protocol(format!(
                "proposed box {:?} outside canvas",
                b.rect()
            )));
        }
        Ok(b)
    }

    pub fn generate_object(&self, description: &str, bbox: &DetectionBox) -> BackendResult<Image> {
        let out = self.call(BackendKind::ObjectGenerator, || {
            self.handles.object_generator.generate(description, bbox)
        })?;
        if out.width() != bbox.w || out.height() != bbox.h {
            return Err(BackendError::Protocol(
                "generated patch does not match box dimensions".into(),
            ));
        }
        Ok(out)
    }

    pub fn refiner_invert(&self, image: &Image, steps: usize) -> BackendResult<LatentTrajectory> {
        let traj = self.call(BackendKind::Refiner, || {
            self.handles.refiner.invert(image, steps)
        })?;
        if !traj.is_consistent() || traj.steps != steps {
            return Err(BackendError::Protocol("inconsistent latent trajectory".into()));
        }
        Ok(traj)
    }

    pub fn refiner_step(&self, latent: &Latent, t: usize) -> BackendResult<Latent> {
        let out = self.call(BackendKind::Refiner, || self.handles.refiner.step(latent, t))?;
        if !out.same_shape(latent) {
            return Err(BackendError::Protocol("refiner step changed latent shape".into()));
        }
        Ok(out)
    }

    pub fn refiner_decode(&self, latent: &Latent) -> BackendResult<Image> {
        self.call(BackendKind::Refiner, || self.handles.refiner.decode(latent))
    }
}
