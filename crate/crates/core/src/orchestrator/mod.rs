//! Job lifecycle: decompose, count serially, correct in parallel lanes,
//! stitch and refine. Jobs persist as a directory of JSON, JSONL and PNGs.

mod engine;
mod lanes;

pub use engine::{Engine, StatusObserver};
pub use lanes::build_lanes;

use serde::{Deserialize, Serialize};

use crate::decompose::DecomposerPromptConfig;
use crate::geometry::Rect;
use crate::ocs::{LoopConfig, LoopProgress, Placement};
use crate::pdss::RefineConfig;
use crate::runlog::TranscriptEntry;
use crate::scene::{ObjectRef, SceneSpec, Subtask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobMode {
    #[default]
    Auto,
    Review,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Serial,
    #[default]
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobOptions {
    pub mode: JobMode,
    pub schedule: Schedule,
    /// Upper bound on concurrent correction loops.
    pub max_parallel: usize,
    pub decomposer_max_retries: usize,
    pub decomposer_temperature: f32,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub refine: RefineConfig,
}

impl Default for JobOptions {
    fn default() -> Self {
        Self {
            mode: JobMode::Auto,
            schedule: Schedule::Parallel,
            max_parallel: 8,
            decomposer_max_retries: 2,
            decomposer_temperature: 0.0,
            loop_cfg: LoopConfig::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl JobOptions {
    pub fn decomposer(&self, prompts: &crate::prompts::PromptSet) -> DecomposerPromptConfig {
        DecomposerPromptConfig {
            max_retries: self.decomposer_max_retries,
            temperature: self.decomposer_temperature,
            ..DecomposerPromptConfig::from_prompts(prompts)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Pending,
    Counting,
    Correcting,
    AwaitingReview,
    Stitching,
    Done,
    PartiallyCorrected,
    Error,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::PartiallyCorrected | Self::Error)
    }

    pub fn can_transition(self, to: JobStatus) -> bool {
        use JobStatus::*;
        match (self, to) {
            (a, b) if a == b => true,
            (_, Error) => !self.is_terminal(),
            (Pending, Counting)
            | (Counting, Correcting)
            | (Correcting, AwaitingReview)
            | (AwaitingReview, Correcting)
            | (Correcting, Stitching)
            | (Stitching, Done)
            | (Stitching, PartiallyCorrected) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubtaskPhase {
    Pending,
    AwaitingReview,
    AlreadyCorrect,
    Corrected,
    Failed,
}

impl SubtaskPhase {
    pub fn is_final(self) -> bool {
        matches!(self, Self::AlreadyCorrect | Self::Corrected | Self::Failed)
    }
}

/// A content patch with its pixels in the artifact store.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub object: ObjectRef,
    pub origin: Rect,
    pub crop: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CandidateRecord {
    Attribute(PatchRecord),
    Spatial(Placement),
}

/// A candidate parked for review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingRecord {
    pub iteration: usize,
    pub candidate: CandidateRecord,
    pub verified: bool,
    /// Image shown as "before": the crop (attribute) or the scene (spatial).
    pub before: String,
    /// Image shown as "after", same framing as `before`.
    pub after: String,
    pub progress: LoopProgress,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskState {
    pub subtask: Subtask,
    pub phase: SubtaskPhase,
    #[serde(default)]
    pub iterations_used: usize,
    #[serde(default)]
    pub executor_calls: usize,
    #[serde(default)]
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<PatchRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingRecord>,
    /// Loop position to resume from after a rejected candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<LoopProgress>,
}

impl SubtaskState {
    pub fn new(subtask: Subtask) -> Self {
        Self {
            subtask,
            phase: SubtaskPhase::Pending,
            iterations_used: 0,
            executor_calls: 0,
            verified: false,
            content: None,
            placement: None,
            failure: None,
            pending: None,
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub object: ObjectRef,
    pub bbox: Rect,
    pub mask: String,
}

/// Wall-clock per phase, milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub decompose_ms: f64,
    pub counting_ms: f64,
    pub correcting_ms: f64,
    pub stitching_ms: f64,
}

impl PhaseTimings {
    pub fn total_ms(&self) -> f64 {
        self.decompose_ms + self.counting_ms + self.correcting_ms + self.stitching_ms
    }
}

/// Checkpoint written when counting completes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingCheckpoint {
    pub image: String,
    pub registry: Vec<RegistryEntry>,
    /// Union of removal regions and inserted boxes.
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchOutput {
    pub composite: String,
    pub mask: String,
    pub refined: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub input_image: String,
    pub description: String,
    pub options: JobOptions,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SceneSpec>,
    #[serde(default)]
    pub subtasks: Vec<SubtaskState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counting: Option<CountingCheckpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<StitchOutput>,
    #[serde(default)]
    pub timings: PhaseTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub created_at: String,
}

impl JobRecord {
    pub fn subtask(&self, id: &str) -> Option<&SubtaskState> {
        self.subtasks.iter().find(|s| s.subtask.id == id)
    }

    pub fn failed_subtasks(&self) -> Vec<&str> {
        self.subtasks
            .iter()
            .filter(|s| s.phase == SubtaskPhase::Failed)
            .map(|s| s.subtask.id.as_str())
            .collect()
    }

    pub fn executor_calls(&self) -> usize {
        self.subtasks.iter().map(|s| s.executor_calls).sum()
    }
}

/// What the review queue shows for one parked candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub job_id: String,
    pub subtask_id: String,
    pub iteration: usize,
    pub before: String,
    pub candidate: String,
    pub verified: bool,
    pub transcript: Vec<TranscriptEntry>,
    pub allowed_actions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReviewVerdict {
    Approve,
    RejectRetry,
    /// PNG bytes of a replacement crop.
    Substitute(Vec<u8>),
}
