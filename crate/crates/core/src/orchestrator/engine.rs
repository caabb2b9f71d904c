use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::*;
use crate::backend::{BackendError, BackendSuite};
use crate::counting::{apply_counting, plan_counting, ObjectGeometry, Registry};
use crate::decompose::{decompose, to_subtasks};
use crate::error::{Error, Result};
use crate::geometry::DetectionBox;
use crate::image::{Image, ObjectMask};
use crate::ocs::{
    apply_candidate, run_loop, verify_candidate, Agents, Candidate, ContentPatch, LoopOutcome,
    Parked, SubtaskResult, SubtaskStatus,
};
use crate::pdss::{assemble, refine};
use crate::prompts::PromptSet;
use crate::runlog::{now_ts, ArtifactStore, LogEvent, Role, RunLog, TranscriptEntry};
use crate::scene::{SceneSpec, SpatialConstraint, SubtaskKind};

/// Called with a snapshot whenever a job's status or a subtask changes.
pub type StatusObserver = Arc<dyn Fn(&JobRecord) + Send + Sync>;

struct Job {
    record: Mutex<JobRecord>,
    log: RunLog,
    store: ArtifactStore,
    dir: Option<PathBuf>,
    /// Serializes `run` and `review_action` per job.
    action: Mutex<()>,
}

impl Job {
    fn snapshot(&self) -> JobRecord {
        self.record.lock().expect("job record lock").clone()
    }

    fn save(&self, rec: &JobRecord) -> Result<()> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join("job.json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(rec)?)?;
            fs::rename(&tmp, dir.join("job.json"))?;
        }
        Ok(())
    }

    fn update<T>(&self, f: impl FnOnce(&mut JobRecord) -> T) -> Result<(T, JobRecord)> {
        let mut rec = self.record.lock().expect("job record lock");
        let out = f(&mut rec);
        self.save(&rec)?;
        Ok((out, rec.clone()))
    }

    fn write_file(&self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Runs jobs against one backend suite.
pub struct Engine {
    backends: Arc<BackendSuite>,
    prompts: PromptSet,
    root: Option<PathBuf>,
    jobs: Mutex<BTreeMap<String, Arc<Job>>>,
    observer: RwLock<Option<StatusObserver>>,
    counter: AtomicU64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

impl Engine {
    /// `root` holds one directory per job; `None` keeps everything in memory.
    pub fn new(backends: Arc<BackendSuite>, prompts: PromptSet, root: Option<PathBuf>) -> Result<Self> {
        if let Some(r) = &root {
            fs::create_dir_all(r)?;
        }
        Ok(Self {
            backends,
            prompts,
            root,
            jobs: Mutex::new(BTreeMap::new()),
            observer: RwLock::new(None),
            counter: AtomicU64::new(0),
        })
    }

    pub fn backends(&self) -> &Arc<BackendSuite> {
        &self.backends
    }

    pub fn set_observer(&self, f: StatusObserver) {
        *self.observer.write().expect("observer lock") = Some(f);
    }

    fn notify(&self, rec: &JobRecord) {
        if let Some(f) = self.observer.read().expect("observer lock").as_ref() {
            f(rec);
        }
    }

    fn job(&self, id: &str) -> Result<Arc<Job>> {
        if let Some(j) = self.jobs.lock().expect("jobs lock").get(id) {
            return Ok(j.clone());
        }
        self.load_job(id)
    }

    /// Loads a persisted job into memory.
    pub fn load(&self, id: &str) -> Result<JobRecord> {
        Ok(self.load_job(id)?.snapshot())
    }

    fn load_job(&self, id: &str) -> Result<Arc<Job>> {
        let valid_id = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let dir = match &self.root {
            Some(r) if valid_id => r.join(id),
            _ => return Err(Error::JobNotFound(id.to_string())),
        };
        let path = dir.join("job.json");
        if !path.exists() {
            return Err(Error::JobNotFound(id.to_string()));
        }
        let record: JobRecord = serde_json::from_slice(&fs::read(&path)?)?;
        let job = Arc::new(Job {
            record: Mutex::new(record),
            log: RunLog::open(&dir.join("runlog.jsonl"))?,
            store: ArtifactStore::open(&dir.join("artifacts"))?,
            dir: Some(dir),
            action: Mutex::new(()),
        });
        self.jobs
            .lock()
            .expect("jobs lock")
            .insert(id.to_string(), job.clone());
        Ok(job)
    }

    pub fn job_ids(&self) -> Vec<String> {
        self.jobs.lock().expect("jobs lock").keys().cloned().collect()
    }

    pub fn submit(&self, png: &[u8], description: &str, options: JobOptions) -> Result<String> {
        let image = Image::from_png(png)?;
        self.submit_image(&image, description, options)
    }

    pub fn submit_image(&self, image: &Image, description: &str, options: JobOptions) -> Result<String> {
        if description.trim().is_empty() {
            return Err(Error::EmptyDescription);
        }
        options.refine.check()?;
        if options.loop_cfg.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        options.decomposer(&self.prompts).check()?;
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let id = format!(
            "{}-{:04}-{:06x}",
            chrono::Utc::now().format("%Y%m%d%H%M%S"),
            n,
            rand::random::<u32>() & 0xff_ffff
        );
        let dir = match &self.root {
            Some(r) => {
                let d = r.join(&id);
                fs::create_dir_all(&d)?;
                Some(d)
            }
            None => None,
        };
        let (log, store) = match &dir {
            Some(d) => (RunLog::open(&d.join("runlog.jsonl"))?, ArtifactStore::open(&d.join("artifacts"))?),
            None => (RunLog::in_memory(), ArtifactStore::in_memory()),
        };
        let input_image = store.put_image(image)?;
        let record = JobRecord {
            id: id.clone(),
            input_image: input_image.clone(),
            description: description.to_string(),
            options,
            status: JobStatus::Pending,
            spec: None,
            subtasks: vec![],
            counting: None,
            output: None,
            timings: PhaseTimings::default(),
            error: None,
            created_at: now_ts(),
        };
        let job = Arc::new(Job {
            record: Mutex::new(record.clone()),
            log,
            store,
            dir,
            action: Mutex::new(()),
        });
        job.save(&record)?;
        job.log.append(
            "submitted",
            None,
            json!({"description": description, "input_image": input_image, "options": record.options}),
        )?;
        self.jobs.lock().expect("jobs lock").insert(id.clone(), job);
        self.notify(&record);
        Ok(id)
    }

    pub fn record(&self, id: &str) -> Result<JobRecord> {
        Ok(self.job(id)?.snapshot())
    }

    pub fn log(&self, id: &str) -> Result<Vec<LogEvent>> {
        Ok(self.job(id)?.log.events())
    }

    pub fn log_jsonl(&self, id: &str) -> Result<String> {
        Ok(self.job(id)?.log.to_jsonl())
    }

    /// Log events without timestamps.
    pub fn comparable_log(&self, id: &str) -> Result<Vec<serde_json::Value>> {
        Ok(self.job(id)?.log.comparable())
    }

    pub fn artifacts(&self, id: &str) -> Result<Vec<String>> {
        self.job(id)?.store.list()
    }

    pub fn artifact_of(&self, id: &str, hash: &str) -> Result<Vec<u8>> {
        self.job(id)?.store.get(hash)
    }

    /// Looks a blob up in every loaded job.
    pub fn artifact(&self, hash: &str) -> Result<Vec<u8>> {
        let jobs: Vec<Arc<Job>> = self.jobs.lock().expect("jobs lock").values().cloned().collect();
        for j in jobs {
            if j.store.contains(hash) {
                return j.store.get(hash);
            }
        }
        Err(Error::MissingArtifact(hash.to_string()))
    }

    pub fn final_image(&self, id: &str) -> Result<Image> {
        let job = self.job(id)?;
        let rec = job.snapshot();
        let out = rec
            .output
            .ok_or(Error::InvalidState(rec.status))?;
        job.store.get_image(&out.refined)
    }

    fn set_status(&self, job: &Job, status: JobStatus) -> Result<JobRecord> {
        let (ok, rec) = job.update(|r| {
            if r.status.can_transition(status) {
                r.status = status;
                true
            } else {
                false
            }
        })?;
        if !ok {
            return Err(Error::InvalidState(rec.status));
        }
        job.log.append("status", None, json!({"status": status}))?;
        self.notify(&rec);
        Ok(rec)
    }

    fn fail_job(&self, job: &Job, e: &Error) -> Result<JobRecord> {
        let (_, rec) = job.update(|r| {
            if !r.status.is_terminal() {
                r.status = JobStatus::Error;
            }
            r.error = Some(e.to_string());
        })?;
        job.log.append("error", None, json!({"message": e.to_string()}))?;
        self.notify(&rec);
        Ok(rec)
    }

    /// Drives the job forward until it finishes or parks for review.
    pub fn run(&self, id: &str) -> Result<JobRecord> {
        let job = self.job(id)?;
        let _guard = job.action.lock().expect("job action lock");
        self.drive(&job)
    }

    /// Re-enters a persisted job at its last checkpoint.
    pub fn resume(&self, id: &str) -> Result<JobRecord> {
        self.run(id)
    }

    fn drive(&self, job: &Job) -> Result<JobRecord> {
        loop {
            let status = job.snapshot().status;
            let step = match status {
                JobStatus::Pending => self.phase_decompose(job),
                JobStatus::Counting => self.phase_counting(job),
                JobStatus::Correcting => self.phase_correcting(job),
                JobStatus::AwaitingReview => {
                    let rec = job.snapshot();
                    if is_parked(&rec) && runnable_lanes(&rec).is_empty() {
                        return Ok(rec);
                    }
                    self.set_status(job, JobStatus::Correcting).map(|_| ())
                }
                JobStatus::Stitching => self.phase_stitch(job),
                _ => return Ok(job.snapshot()),
            };
            if let Err(e) = step {
                return self.fail_job(job, &e);
            }
        }
    }

    fn phase_decompose(&self, job: &Job) -> Result<()> {
        let t0 = Instant::now();
        let rec = job.snapshot();
        if rec.spec.is_none() {
            let cfg = rec.options.decomposer(&self.prompts);
            let mut transcript = Vec::new();
            let result = decompose(&rec.description, &self.backends, &cfg, &mut transcript);
            job.log.append_transcript(None, &transcript)?;
            let spec = result?;
            let subtasks = to_subtasks(&spec);
            job.log.append(
                "decomposed",
                None,
                json!({"spec": spec, "subtasks": subtasks.iter().map(|s| &s.id).collect::<Vec<_>>()}),
            )?;
            job.update(|r| {
                r.subtasks = subtasks.into_iter().map(SubtaskState::new).collect();
                r.spec = Some(spec);
                r.timings.decompose_ms += ms_since(t0);
            })?;
        }
        self.set_status(job, JobStatus::Counting)?;
        Ok(())
    }

    fn describe_instance(spec: &SceneSpec, base: &str, k: usize) -> String {
        let inst = spec.instances(base);
        let attrs: Vec<&str> = inst
            .get(k)
            .map(|r| spec.attributes_of(r).map(|a| a.attribute.as_str()).collect())
            .unwrap_or_default();
        if attrs.is_empty() {
            format!("a {base}")
        } else {
            format!("a {} {base}", attrs.join(" "))
        }
    }

    fn phase_counting(&self, job: &Job) -> Result<()> {
        let t0 = Instant::now();
        let rec = job.snapshot();
        if rec.counting.is_none() {
            let spec = rec.spec.clone().ok_or(Error::InvalidState(rec.status))?;
            let mut image = job.store.get_image(&rec.input_image)?;
            let mut registry = Registry::new();
            let mut extra = ObjectMask::empty(image.size());
            for (idx, state) in rec.subtasks.iter().enumerate() {
                let SubtaskKind::Counting { base_name, target_count } = &state.subtask.kind else {
                    continue;
                };
                let detected = self.backends.detect(&image, base_name)?;
                let mut others: Vec<DetectionBox> = Vec::new();
                if detected.len() < *target_count {
                    for other in spec.base_names().into_iter().filter(|b| b != base_name) {
                        others.extend(self.backends.detect(&image, other)?);
                    }
                }
                let describe = |k: usize| Self::describe_instance(&spec, base_name, k);
                let plan = plan_counting(&image, base_name, *target_count, &self.backends, &others, &describe)?;
                let instances = spec.instances(base_name);
                let outcome = apply_counting(&image, &plan, &instances, &self.backends)?;
                let (phase, failure) = if plan.infeasible {
                    (SubtaskPhase::Failed, Some("no feasible placement for a missing object".to_string()))
                } else if outcome.redetected != *target_count {
                    (
                        SubtaskPhase::Failed,
                        Some(format!("{} detected after correction, {} expected", outcome.redetected, target_count)),
                    )
                } else if plan.is_noop() {
                    (SubtaskPhase::AlreadyCorrect, None)
                } else {
                    (SubtaskPhase::Corrected, None)
                };
                let mut report = plan.report();
                report["redetected"] = json!(outcome.redetected);
                report["status"] = json!(phase);
                job.log.append("counting", Some(&state.subtask.id), report)?;
                image = outcome.image;
                extra.union_with(&outcome.removal_mask);
                extra.union_with(&outcome.insertion_mask);
                for (r, g) in outcome.bound {
                    registry.insert(r, g);
                }
                let (_, snap) = job.update(|r| {
                    let s = &mut r.subtasks[idx];
                    s.phase = phase;
                    s.failure = failure;
                })?;
                self.notify(&snap);
            }
            let mut entries = Vec::new();
            for (object, g) in &registry {
                entries.push(RegistryEntry {
                    object: object.clone(),
                    bbox: g.bbox,
                    mask: job.store.put_mask(&g.mask)?,
                });
            }
            let checkpoint = CountingCheckpoint {
                image: job.store.put_image(&image)?,
                registry: entries,
                mask: job.store.put_mask(&extra)?,
            };
            job.log.append("counting_checkpoint", None, json!(checkpoint))?;
            job.update(|r| {
                r.counting = Some(checkpoint);
                r.timings.counting_ms += ms_since(t0);
            })?;
        }
        self.set_status(job, JobStatus::Correcting)?;
        Ok(())
    }

    fn counted(&self, job: &Job, rec: &JobRecord) -> Result<(Image, Registry, ObjectMask)> {
        let cp = rec.counting.as_ref().ok_or(Error::InvalidState(rec.status))?;
        let image = job.store.get_image(&cp.image)?;
        let mut registry = Registry::new();
        for e in &cp.registry {
            registry.insert(
                e.object.clone(),
                ObjectGeometry {
                    bbox: e.bbox,
                    mask: job.store.get_mask(&e.mask)?,
                },
            );
        }
        Ok((image, registry, job.store.get_mask(&cp.mask)?))
    }

    fn load_patch(store: &ArtifactStore, p: &PatchRecord) -> Result<ContentPatch> {
        Ok(ContentPatch {
            object: p.object.clone(),
            origin: p.origin,
            crop: store.get_image(&p.crop)?,
            mask: store.get_mask(&p.mask)?,
        })
    }

    fn store_patch(store: &ArtifactStore, p: &ContentPatch) -> Result<PatchRecord> {
        Ok(PatchRecord {
            object: p.object.clone(),
            origin: p.origin,
            crop: store.put_image(&p.crop)?,
            mask: store.put_mask(&p.mask)?,
        })
    }

    fn accepted_candidate(store: &ArtifactStore, s: &SubtaskState) -> Result<Option<Candidate>> {
        if s.phase != SubtaskPhase::Corrected {
            return Ok(None);
        }
        if let Some(p) = &s.content {
            return Ok(Some(Candidate::Attribute(Self::load_patch(store, p)?)));
        }
        Ok(s.placement.clone().map(Candidate::Spatial))
    }

    /// Working image and registry a lane member sees: the counted scene
    /// with every earlier accepted candidate of its lane applied.
    fn lane_context(&self, job: &Job, rec: &JobRecord, lane: &[usize], upto: usize) -> Result<(Image, Registry)> {
        let (mut image, mut registry, _) = self.counted(job, rec)?;
        for &i in lane.iter().take_while(|&&i| i != upto) {
            if let Some(c) = Self::accepted_candidate(&job.store, &rec.subtasks[i])? {
                apply_candidate(&self.backends, &mut image, &mut registry, &c)?;
            }
        }
        Ok((image, registry))
    }

    fn record_result(&self, job: &Job, idx: usize, res: &SubtaskResult) -> Result<()> {
        let content = match &res.content_patch {
            Some(p) => Some(Self::store_patch(&job.store, p)?),
            None => None,
        };
        let id = res.subtask_id.clone();
        job.log.append_transcript(Some(&id), &res.transcript)?;
        job.log.append(
            "subtask_result",
            Some(&id),
            json!({
                "status": res.status,
                "iterations_used": res.iterations_used,
                "executor_calls": res.executor_calls,
                "verified": res.verified,
                "content": content,
                "placement": res.placement,
                "failure": res.failure,
            }),
        )?;
        let phase = match res.status {
            SubtaskStatus::AlreadyCorrect => SubtaskPhase::AlreadyCorrect,
            SubtaskStatus::Corrected => SubtaskPhase::Corrected,
            SubtaskStatus::Failed => SubtaskPhase::Failed,
        };
        let (_, snap) = job.update(|r| {
            let s = &mut r.subtasks[idx];
            s.phase = phase;
            s.iterations_used = res.iterations_used;
            s.executor_calls = res.executor_calls;
            s.verified = res.verified;
            s.content = content;
            s.placement = res.placement.clone();
            s.failure = res.failure.clone();
            s.pending = None;
            s.resume = None;
        })?;
        self.notify(&snap);
        Ok(())
    }

    fn record_parked(&self, job: &Job, idx: usize, p: &Parked, image: &Image, registry: &Registry) -> Result<()> {
        let (candidate, before, after) = match &p.candidate {
            Candidate::Attribute(patch) => (
                CandidateRecord::Attribute(Self::store_patch(&job.store, patch)?),
                job.store.put_image(&image.crop(patch.origin))?,
                job.store.put_image(&patch.crop)?,
            ),
            Candidate::Spatial(pl) => {
                let mut img = image.clone();
                let mut reg = registry.clone();
                apply_candidate(&self.backends, &mut img, &mut reg, &p.candidate)?;
                (
                    CandidateRecord::Spatial(pl.clone()),
                    job.store.put_image(image)?,
                    job.store.put_image(&img)?,
                )
            }
        };
        job.log.append_transcript(Some(&p.subtask_id), &p.progress.transcript)?;
        job.log.append(
            "parked",
            Some(&p.subtask_id),
            json!({"iteration": p.iteration, "verified": p.verified, "before": before, "candidate": after}),
        )?;
        let pending = PendingRecord {
            iteration: p.iteration,
            candidate,
            verified: p.verified,
            before,
            after,
            // The transcript was logged above; only the loop position is kept.
            progress: crate::ocs::LoopProgress {
                transcript: vec![],
                ..p.progress.clone()
            },
        };
        let mut excerpt = p.progress.transcript.clone();
        let keep = excerpt.len().saturating_sub(6);
        excerpt.drain(..keep);
        let (_, snap) = job.update(|r| {
            let s = &mut r.subtasks[idx];
            s.phase = SubtaskPhase::AwaitingReview;
            s.iterations_used = p.progress.next_iteration;
            s.executor_calls = p.progress.executor_calls;
            s.pending = Some(PendingRecord {
                progress: crate::ocs::LoopProgress {
                    transcript: excerpt,
                    ..pending.progress.clone()
                },
                ..pending
            });
            s.resume = None;
        })?;
        self.notify(&snap);
        Ok(())
    }

    fn run_lane(&self, job: &Job, rec: &JobRecord, lane: &[usize], base: &Image, registry: &Registry) -> Result<()> {
        let mut image = base.clone();
        let mut reg = registry.clone();
        let review = rec.options.mode == JobMode::Review;
        // Spatial relations already satisfied earlier in this lane.
        let mut kept: Vec<SpatialConstraint> = Vec::new();
        for &idx in lane {
            let state = &rec.subtasks[idx];
            let phase = match state.phase {
                SubtaskPhase::Corrected => {
                    if let Some(c) = Self::accepted_candidate(&job.store, state)? {
                        apply_candidate(&self.backends, &mut image, &mut reg, &c)?;
                    }
                    SubtaskPhase::Corrected
                }
                SubtaskPhase::AwaitingReview => return Ok(()),
                SubtaskPhase::Pending => {
                    let agents = Agents {
                        backends: &self.backends,
                        prompts: &self.prompts,
                        cfg: &rec.options.loop_cfg,
                        store: Some(&job.store),
                        keep: &kept,
                    };
                    let progress = state.resume.clone().unwrap_or_default();
                    match run_loop(agents, &state.subtask, &image, &reg, review, progress) {
                        LoopOutcome::Finished(res) => {
                            self.record_result(job, idx, &res)?;
                            let accepted = match (&res.content_patch, &res.placement) {
                                (Some(p), _) => Some(Candidate::Attribute(p.clone())),
                                (None, Some(pl)) => Some(Candidate::Spatial(pl.clone())),
                                _ => None,
                            };
                            if let (SubtaskStatus::Corrected, Some(c)) = (res.status, accepted) {
                                apply_candidate(&self.backends, &mut image, &mut reg, &c)?;
                            }
                            match res.status {
                                SubtaskStatus::AlreadyCorrect => SubtaskPhase::AlreadyCorrect,
                                SubtaskStatus::Corrected => SubtaskPhase::Corrected,
                                SubtaskStatus::Failed => SubtaskPhase::Failed,
                            }
                        }
                        LoopOutcome::Parked(p) => {
                            self.record_parked(job, idx, &p, &image, &reg)?;
                            return Ok(());
                        }
                    }
                }
                other => other,
            };
            if let SubtaskKind::Spatial(c) = &state.subtask.kind {
                if matches!(phase, SubtaskPhase::Corrected | SubtaskPhase::AlreadyCorrect) {
                    kept.push(c.clone());
                }
            }
        }
        Ok(())
    }

    fn phase_correcting(&self, job: &Job) -> Result<()> {
        let t0 = Instant::now();
        let rec = job.snapshot();
        let (image, registry, _) = self.counted(job, &rec)?;
        let lanes = runnable_lanes(&rec);
        let loops = rec.subtasks.iter().filter(|s| !s.subtask.is_counting()).count();
        let threads = match rec.options.schedule {
            Schedule::Serial => 1,
            Schedule::Parallel => loops.min(rec.options.max_parallel).max(1),
        };
        let results: Vec<Result<()>> = if threads == 1 || lanes.len() <= 1 {
            lanes.iter().map(|l| self.run_lane(job, &rec, l, &image, &registry)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            pool.install(|| {
                lanes
                    .par_iter()
                    .map(|l| self.run_lane(job, &rec, l, &image, &registry))
                    .collect()
            })
        };
        job.update(|r| r.timings.correcting_ms += ms_since(t0))?;
        for r in results {
            r?;
        }
        let rec = job.snapshot();
        if is_parked(&rec) {
            self.set_status(job, JobStatus::AwaitingReview)?;
        } else {
            self.set_status(job, JobStatus::Stitching)?;
        }
        Ok(())
    }

    fn phase_stitch(&self, job: &Job) -> Result<()> {
        let t0 = Instant::now();
        let rec = job.snapshot();
        let (base, registry, extra) = self.counted(job, &rec)?;
        let mut results = Vec::new();
        for s in &rec.subtasks {
            if s.phase != SubtaskPhase::Corrected || s.subtask.is_counting() {
                continue;
            }
            results.push(SubtaskResult {
                subtask_id: s.subtask.id.clone(),
                status: SubtaskStatus::Corrected,
                content_patch: match &s.content {
                    Some(p) => Some(Self::load_patch(&job.store, p)?),
                    None => None,
                },
                placement: s.placement.clone(),
                iterations_used: s.iterations_used,
                executor_calls: s.executor_calls,
                verified: s.verified,
                transcript: vec![],
                failure: None,
            });
        }
        let (composite, mask) = assemble(&base, &results, &registry, &extra, &self.backends)?;
        // Nothing was pasted or removed: the input is returned untouched.
        let (refined, trace) = if mask.pixel.is_empty() {
            (composite.clone(), vec![])
        } else {
            refine(&composite, &mask, &rec.options.refine, &self.backends)?
        };
        let output = StitchOutput {
            composite: job.store.put_image(&composite)?,
            mask: job.store.put_mask(&mask.pixel)?,
            refined: job.store.put_image(&refined)?,
        };
        job.write_file("composite.png", &composite.to_png())?;
        job.write_file("mask.png", &mask.pixel.to_png())?;
        job.write_file("refined.png", &refined.to_png())?;
        let mut trace_jsonl = String::new();
        for t in &trace {
            trace_jsonl.push_str(&serde_json::to_string(t)?);
            trace_jsonl.push('\n');
        }
        job.write_file("refine_trace.jsonl", trace_jsonl.as_bytes())?;
        job.log.append(
            "stitched",
            None,
            json!({
                "output": output,
                "masked_steps": trace.iter().filter(|t| t.masked).count(),
                "latent_cells_masked": mask.latent.count(),
                "trace": trace,
            }),
        )?;
        let failed: Vec<String> = rec.failed_subtasks().into_iter().map(String::from).collect();
        let status = if failed.is_empty() {
            JobStatus::Done
        } else {
            JobStatus::PartiallyCorrected
        };
        job.update(|r| {
            r.output = Some(output);
            r.timings.stitching_ms += ms_since(t0);
        })?;
        job.log.append("finished", None, json!({"status": status, "unsatisfied": failed}))?;
        self.set_status(job, status)?;
        Ok(())
    }

    /// Candidates parked for review.
    pub fn pending(&self, id: &str) -> Result<Vec<CandidateView>> {
        let rec = self.record(id)?;
        Ok(rec
            .subtasks
            .iter()
            .filter_map(|s| {
                let p = s.pending.as_ref()?;
                let mut actions = vec!["approve".to_string()];
                if p.progress.next_iteration < rec.options.loop_cfg.max_iterations {
                    actions.push("reject_retry".into());
                }
                if matches!(s.subtask.kind, SubtaskKind::Attribute(_)) {
                    actions.push("substitute".into());
                }
                Some(CandidateView {
                    job_id: rec.id.clone(),
                    subtask_id: s.subtask.id.clone(),
                    iteration: p.iteration,
                    before: p.before.clone(),
                    candidate: p.after.clone(),
                    verified: p.verified,
                    transcript: p.progress.transcript.clone(),
                    allowed_actions: actions,
                })
            })
            .collect())
    }

    /// Applies an operator verdict, then continues the job when nothing else is parked.
    pub fn review_action(&self, id: &str, subtask_id: &str, verdict: ReviewVerdict) -> Result<JobRecord> {
        let job = self.job(id)?;
        let _guard = job.action.lock().expect("job action lock");
        let rec = job.snapshot();
        if rec.status != JobStatus::AwaitingReview {
            return Err(Error::InvalidState(rec.status));
        }
        let idx = rec
            .subtasks
            .iter()
            .position(|s| s.subtask.id == subtask_id)
            .ok_or_else(|| Error::SubtaskNotFound(subtask_id.to_string()))?;
        let state = &rec.subtasks[idx];
        let pending = state
            .pending
            .clone()
            .ok_or_else(|| Error::NoPendingCandidate(subtask_id.to_string()))?;
        match verdict {
            ReviewVerdict::Approve => {
                job.log.append("review", Some(subtask_id), json!({"action": "approve"}))?;
                job.update(|r| {
                    let s = &mut r.subtasks[idx];
                    s.phase = SubtaskPhase::Corrected;
                    s.verified = pending.verified;
                    match &pending.candidate {
                        CandidateRecord::Attribute(p) => s.content = Some(p.clone()),
                        CandidateRecord::Spatial(pl) => s.placement = Some(pl.clone()),
                    }
                    s.pending = None;
                })?;
            }
            ReviewVerdict::RejectRetry => {
                if pending.progress.next_iteration >= rec.options.loop_cfg.max_iterations {
                    return Err(Error::IterationBudgetExhausted(subtask_id.to_string()));
                }
                job.log.append(
                    "review",
                    Some(subtask_id),
                    json!({"action": "reject_retry", "next_iteration": pending.progress.next_iteration}),
                )?;
                job.update(|r| {
                    let s = &mut r.subtasks[idx];
                    s.phase = SubtaskPhase::Pending;
                    s.resume = Some(crate::ocs::LoopProgress {
                        transcript: vec![],
                        ..pending.progress.clone()
                    });
                    s.pending = None;
                })?;
            }
            ReviewVerdict::Substitute(png) => {
                let SubtaskKind::Attribute(_) = &state.subtask.kind else {
                    return Err(Error::UnsupportedAction(
                        "substitution applies to attribute subtasks".into(),
                    ));
                };
                let CandidateRecord::Attribute(patch) = &pending.candidate else {
                    return Err(Error::UnsupportedAction("pending candidate is not a crop".into()));
                };
                let crop = Image::from_png(&png)?;
                if crop.size() != crate::geometry::Size::new(patch.origin.w, patch.origin.h) {
                    return Err(Error::InvalidImage(format!(
                        "substitute must be {}x{}",
                        patch.origin.w, patch.origin.h
                    )));
                }
                let upload = job.store.put(&png)?;
                let lanes = build_lanes(&rec.subtasks.iter().map(|s| s.subtask.clone()).collect::<Vec<_>>());
                let lane = lanes.into_iter().find(|l| l.contains(&idx)).unwrap_or_else(|| vec![idx]);
                let (image, registry) = self.lane_context(&job, &rec, &lane, idx)?;
                let geom = registry
                    .get(&patch.object)
                    .ok_or_else(|| Error::MissingGeometry(patch.object.display()))?;
                let local = crate::geometry::Rect::new(
                    geom.bbox.x - patch.origin.x,
                    geom.bbox.y - patch.origin.y,
                    geom.bbox.w,
                    geom.bbox.h,
                );
                let mask = match self.backends.segment(&crop, &DetectionBox::new(local, 1.0)) {
                    Ok(m) => m,
                    Err(BackendError::EmptyMask) => geom.mask.crop(patch.origin),
                    Err(e) => return Err(e.into()),
                };
                let candidate = ContentPatch {
                    object: patch.object.clone(),
                    origin: patch.origin,
                    crop,
                    mask,
                };
                let agents = Agents {
                    backends: &self.backends,
                    prompts: &self.prompts,
                    cfg: &rec.options.loop_cfg,
                    store: Some(&job.store),
                    keep: &[],
                };
                let mut transcript = vec![TranscriptEntry::new(Role::Operator, "substitute", "uploaded crop")
                    .with_artifact(upload.clone())];
                let verified = verify_candidate(
                    agents,
                    &state.subtask,
                    &image,
                    &registry,
                    &Candidate::Attribute(candidate.clone()),
                    &mut transcript,
                )?;
                job.log.append_transcript(Some(subtask_id), &transcript)?;
                job.log.append(
                    "review",
                    Some(subtask_id),
                    json!({"action": "substitute", "artifact": upload, "verified": verified}),
                )?;
                let content = Self::store_patch(&job.store, &candidate)?;
                job.update(|r| {
                    let s = &mut r.subtasks[idx];
                    s.phase = SubtaskPhase::Corrected;
                    s.verified = verified;
                    s.content = Some(content);
                    s.pending = None;
                })?;
            }
        }
        let rec = job.snapshot();
        self.notify(&rec);
        self.drive(&job)
    }
}

fn is_parked(rec: &JobRecord) -> bool {
    rec.subtasks.iter().any(|s| s.phase == SubtaskPhase::AwaitingReview)
}

/// Lanes with work left and no member waiting on an operator.
fn runnable_lanes(rec: &JobRecord) -> Vec<Vec<usize>> {
    build_lanes(&rec.subtasks.iter().map(|s| s.subtask.clone()).collect::<Vec<_>>())
        .into_iter()
        .filter(|l| l.iter().any(|&i| rec.subtasks[i].phase == SubtaskPhase::Pending))
        .filter(|l| l.iter().all(|&i| rec.subtasks[i].phase != SubtaskPhase::AwaitingReview))
        .collect()
}
