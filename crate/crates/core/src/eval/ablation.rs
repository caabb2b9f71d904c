//! Runs a suite under several engine configurations and reports accuracy,
//! iteration counts and timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::BackendsConfig;
use crate::error::Result;
use crate::orchestrator::{Engine, JobOptions, JobStatus, Schedule};
use crate::prompts::PromptSet;

use super::generate::{CorruptionKind, SyntheticScene};
use super::score::{score, SceneScore, ScoreConfig, Tally};

/// One engine configuration of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub name: String,
    pub verify: bool,
    pub schedule: Schedule,
    pub vlm_noise: f64,
    pub edit_failure: f64,
    pub k_fraction: f64,
    pub latency_ms: u64,
}

impl EvalConfig {
    pub fn new(verify: bool, schedule: Schedule, vlm_noise: f64, edit_failure: f64, k_fraction: f64) -> Self {
        let name = format!(
            "verify_{}-{}-vlm{:.2}-edit{:.2}-k{:.2}",
            if verify { "on" } else { "off" },
            match schedule {
                Schedule::Serial => "serial",
                Schedule::Parallel => "parallel",
            },
            vlm_noise,
            edit_failure,
            k_fraction
        );
        Self {
            name,
            verify,
            schedule,
            vlm_noise,
            edit_failure,
            k_fraction,
            latency_ms: 0,
        }
    }
}

/// Edit failure rate paired with the noisy VLM setting.
pub const NOISY_EDIT_FAILURE: f64 = 0.5;

/// {verifier on/off} × {serial/parallel} × {clean, noisy}, then a
/// K-fraction sweep with the verifier on.
pub fn default_grid() -> Vec<EvalConfig> {
    let mut out = Vec::new();
    for (vlm, edit) in [(0.0, 0.0), (0.2, NOISY_EDIT_FAILURE)] {
        for schedule in [Schedule::Serial, Schedule::Parallel] {
            for verify in [true, false] {
                out.push(EvalConfig::new(verify, schedule, vlm, edit, 0.75));
            }
        }
    }
    for k in [0.5, 1.0] {
        out.push(EvalConfig::new(true, Schedule::Parallel, 0.0, 0.0, k));
    }
    out
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Mock knobs shared by every configuration; noise fields are overridden per row.
    pub backends: BackendsConfig,
    pub prompts: PromptSet,
    pub max_iterations: usize,
    pub steps: usize,
    pub score: ScoreConfig,
    /// Evaluate scenes of one configuration concurrently.
    pub concurrent_scenes: bool,
    /// Per-scene artifact directories are written here when set.
    pub artifacts: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            backends: BackendsConfig::default(),
            prompts: PromptSet::default(),
            max_iterations: 3,
            steps: 40,
            score: ScoreConfig::default(),
            concurrent_scenes: true,
            artifacts: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub index: usize,
    pub status: JobStatus,
    pub before: SceneScore,
    pub after: SceneScore,
    /// Iterations used by each attribute and spatial subtask that ran.
    pub iterations: Vec<usize>,
    pub executor_calls: usize,
    pub correcting_ms: f64,
    pub total_ms: f64,
    pub crowded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub counting: Option<f64>,
    pub color: Option<f64>,
    pub texture: Option<f64>,
    pub spatial: Option<f64>,
    pub attribute: Option<f64>,
}

impl CategoryAccuracy {
    pub fn of(s: &SceneScore) -> Self {
        Self {
            counting: s.counting.accuracy(),
            color: s.color.accuracy(),
            texture: s.texture.accuracy(),
            spatial: s.spatial.accuracy(),
            attribute: s.attribute().accuracy(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub config: EvalConfig,
    pub scenes: usize,
    pub before: CategoryAccuracy,
    pub after: CategoryAccuracy,
    /// Spatial accuracy after correction over scenes not flagged crowded.
    pub spatial_uncrowded: Option<f64>,
    pub iterations_histogram: BTreeMap<usize, usize>,
    pub executor_calls: usize,
    pub correcting_ms: f64,
    pub total_ms: f64,
    pub done: usize,
    pub partially_corrected: usize,
    pub errors: usize,
}

impl ConfigRow {
    pub fn from_outcomes(config: &EvalConfig, outcomes: &[SceneOutcome]) -> Self {
        let mut before = SceneScore::default();
        let mut after = SceneScore::default();
        let mut uncrowded = Tally::default();
        let mut hist = BTreeMap::new();
        for o in outcomes {
            before.add(&o.before);
            after.add(&o.after);
            if !o.crowded {
                uncrowded.add(o.after.spatial);
            }
            for &i in &o.iterations {
                *hist.entry(i).or_insert(0) += 1;
            }
        }
        let count = |s: JobStatus| outcomes.iter().filter(|o| o.status == s).count();
        Self {
            config: config.clone(),
            scenes: outcomes.len(),
            before: CategoryAccuracy::of(&before),
            after: CategoryAccuracy::of(&after),
            spatial_uncrowded: uncrowded.accuracy(),
            iterations_histogram: hist,
            executor_calls: outcomes.iter().map(|o| o.executor_calls).sum(),
            correcting_ms: outcomes.iter().map(|o| o.correcting_ms).sum(),
            total_ms: outcomes.iter().map(|o| o.total_ms).sum(),
            done: count(JobStatus::Done),
            partially_corrected: count(JobStatus::PartiallyCorrected),
            errors: count(JobStatus::Error),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub scenes: usize,
    pub corruption_counts: BTreeMap<CorruptionKind, usize>,
    pub crowded: usize,
}

impl SuiteSummary {
    pub fn of(suite: &[SyntheticScene]) -> Self {
        let mut corruption_counts = BTreeMap::new();
        for s in suite {
            for c in &s.corruptions {
                *corruption_counts.entry(c.kind).or_insert(0) += 1;
            }
        }
        Self {
            scenes: suite.len(),
            corruption_counts,
            crowded: suite.iter().filter(|s| s.crowded).count(),
        }
    }
}

/// Serial and parallel correction wall-clock for otherwise equal rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingPair {
    pub serial: String,
    pub parallel: String,
    pub serial_ms: f64,
    pub parallel_ms: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite: SuiteSummary,
    pub rows: Vec<ConfigRow>,
    pub timing: Vec<TimingPair>,
    pub scenes: BTreeMap<String, Vec<SceneOutcome>>,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&ConfigRow> {
        self.rows.iter().find(|r| r.config.name == name)
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let mut out = String::from(
            "config,verify,schedule,vlm_noise,edit_failure,k_fraction,scenes,\
             counting_before,counting_after,color_before,color_after,texture_before,texture_after,\
             spatial_before,spatial_after,attribute_before,attribute_after,spatial_uncrowded,\
             executor_calls,correcting_ms,total_ms,done,partially_corrected,errors\n",
        );
        for r in &self.rows {
            let c = &r.config;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.1},{:.1},{},{},{}\n",
                c.name,
                c.verify,
                match c.schedule {
                    Schedule::Serial => "serial",
                    Schedule::Parallel => "parallel",
                },
                c.vlm_noise,
                c.edit_failure,
                c.k_fraction,
                r.scenes,
                f(r.before.counting),
                f(r.after.counting),
                f(r.before.color),
                f(r.after.color),
                f(r.before.texture),
                f(r.after.texture),
                f(r.before.spatial),
                f(r.after.spatial),
                f(r.before.attribute),
                f(r.after.attribute),
                f(r.spatial_uncrowded),
                r.executor_calls,
                r.correcting_ms,
                r.total_ms,
                r.done,
                r.partially_corrected,
                r.errors
            ));
        }
        out
    }

    /// Writes report.json and report.csv into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(self)?)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        Ok(())
    }
}

fn job_options(cfg: &EvalConfig, opts: &EvalOptions) -> JobOptions {
    let mut o = JobOptions {
        schedule: cfg.schedule,
        ..JobOptions::default()
    };
    o.loop_cfg.verify = cfg.verify;
    o.loop_cfg.max_iterations = opts.max_iterations;
    o.refine.steps = opts.steps;
    o.refine.k_fraction = cfg.k_fraction;
    o
}

fn run_scene(engine: &Engine, scene: &SyntheticScene, options: &JobOptions, opts: &EvalOptions, dir: Option<&Path>) -> Result<SceneOutcome> {
    let input = scene.image();
    let before = score(&input, &scene.spec, &opts.score);
    let id = engine.submit_image(&input, scene.description(), options.clone())?;
    let rec = engine.run(&id)?;
    let output = match engine.final_image(&id) {
        Ok(img) => img,
        Err(_) => input.clone(),
    };
    let after = score(&output, &scene.spec, &opts.score);
    if let Some(dir) = dir {
        let d = dir.join(format!("{:03}", scene.index));
        fs::create_dir_all(&d)?;
        fs::write(d.join("input.png"), input.to_png())?;
        fs::write(d.join("output.png"), output.to_png())?;
        fs::write(d.join("scene.json"), serde_json::to_vec_pretty(scene)?)?;
        fs::write(d.join("job.json"), serde_json::to_vec_pretty(&rec)?)?;
        fs::write(d.join("runlog.jsonl"), engine.log_jsonl(&id)?)?;
    }
    Ok(SceneOutcome {
        index: scene.index,
        status: rec.status,
        before,
        after,
        iterations: rec
            .subtasks
            .iter()
            .filter(|s| !s.subtask.is_counting() && s.iterations_used > 0)
            .map(|s| s.iterations_used)
            .collect(),
        executor_calls: rec.executor_calls(),
        correcting_ms: rec.timings.correcting_ms,
        total_ms: rec.timings.total_ms(),
        crowded: scene.crowded,
        error: rec.error.clone(),
    })
}

/// Runs every scene under one configuration. Failed jobs are scored on
/// their input image.
pub fn run_config(suite: &[SyntheticScene], cfg: &EvalConfig, opts: &EvalOptions) -> Result<Vec<SceneOutcome>> {
    let mut bc = opts.backends.clone();
    bc.mock.vlm_noise = cfg.vlm_noise;
    bc.mock.edit_failure = cfg.edit_failure;
    bc.mock.latency_ms = cfg.latency_ms;
    let engine = Engine::new(Arc::new(bc.suite()?), opts.prompts.clone(), None)?;
    let options = job_options(cfg, opts);
    let dir = opts.artifacts.as_ref().map(|d| d.join("scenes").join(&cfg.name));
    let one = |s: &SyntheticScene| {
        run_scene(&engine, s, &options, opts, dir.as_deref()).unwrap_or_else(|e| {
            let before = score(&s.image(), &s.spec, &opts.score);
            SceneOutcome {
                index: s.index,
                status: JobStatus::Error,
                before,
                after: before,
                iterations: vec![],
                executor_calls: 0,
                correcting_ms: 0.0,
                total_ms: 0.0,
                crowded: s.crowded,
                error: Some(e.to_string()),
            }
        })
    };
    Ok(if opts.concurrent_scenes {
        suite.par_iter().map(one).collect()
    } else {
        suite.iter().map(one).collect()
    })
}

pub fn run_ablations(suite: &[SyntheticScene], configs: &[EvalConfig], opts: &EvalOptions) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut scenes = BTreeMap::new();
    for cfg in configs {
        let outcomes = run_config(suite, cfg, opts)?;
        rows.push(ConfigRow::from_outcomes(cfg, &outcomes));
        scenes.insert(cfg.name.clone(), outcomes);
    }
    let mut timing = Vec::new();
    for s in rows.iter().filter(|r| r.config.schedule == Schedule::Serial) {
        let twin = rows.iter().find(|p| {
            p.config.schedule == Schedule::Parallel
                && p.config.verify == s.config.verify
                && p.config.vlm_noise == s.config.vlm_noise
                && p.config.edit_failure == s.config.edit_failure
                && p.config.k_fraction == s.config.k_fraction
        });
        if let Some(p) = twin {
            timing.push(TimingPair {
                serial: s.config.name.clone(),
                parallel: p.config.name.clone(),
                serial_ms: s.correcting_ms,
                parallel_ms: p.correcting_ms,
                ratio: if s.correcting_ms > 0.0 {
                    p.correcting_ms / s.correcting_ms
                } else {
                    f64::NAN
                },
            });
        }
    }
    let report = EvalReport {
        suite: SuiteSummary::of(suite),
        rows,
        timing,
        scenes,
    };
    if let Some(dir) = &opts.artifacts {
        report.write(dir)?;
    }
    Ok(report)
}
