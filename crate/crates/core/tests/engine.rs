mod common;

use common::*;
use scenefix_core::backend::mock::MockConfig;
use scenefix_core::eval::{score, ScoreConfig};
use scenefix_core::image::Image;
use scenefix_core::orchestrator::*;
use scenefix_core::scene::SubtaskKind;
use scenefix_core::Error;

fn serial() -> JobOptions {
    JobOptions {
        schedule: Schedule::Serial,
        ..JobOptions::default()
    }
}

#[test]
fn deer_bear_birds_scene_is_fully_corrected() {
    let e = engine();
    let id = e.submit_image(&deer_image(), DEER_SCENE, JobOptions::default()).unwrap();
    let rec = e.run(&id).unwrap();
    assert_eq!(rec.status, JobStatus::Done, "{:?}", rec.error);
    let spec = rec.spec.clone().unwrap();
    let ids: Vec<&str> = rec.subtasks.iter().map(|s| s.subtask.id.as_str()).collect();
    assert!(ids.iter().any(|i| i.starts_with("count:")), "{ids:?}");
    let out = e.final_image(&id).unwrap();
    let sc = score(&out, &spec, &ScoreConfig::default());
    assert!(sc.all_satisfied(), "{sc:?}");
    let before = score(&deer_image(), &spec, &ScoreConfig::default());
    assert!(!before.counting.is_perfect() && !before.color.is_perfect());
}

#[test]
fn aligned_scene_needs_no_edits() {
    let e = engine();
    let id = e.submit_image(&deer_clean(), DEER_SCENE, serial()).unwrap();
    let rec = e.run(&id).unwrap();
    assert_eq!(rec.status, JobStatus::Done);
    assert_eq!(rec.executor_calls(), 0);
    assert!(rec
        .subtasks
        .iter()
        .all(|s| s.phase == SubtaskPhase::AlreadyCorrect));
    let out = rec.output.unwrap();
    let composite = Image::from_png(&e.artifact_of(&id, &out.composite).unwrap()).unwrap();
    assert_eq!(composite, deer_clean());
    assert_eq!(e.final_image(&id).unwrap(), deer_clean());
}

#[test]
fn serial_runs_are_bit_identical() {
    let run = || {
        let e = engine();
        let id = e.submit_image(&deer_image(), DEER_SCENE, serial()).unwrap();
        e.run(&id).unwrap();
        (e.final_image(&id).unwrap().to_png(), e.comparable_log(&id).unwrap())
    };
    let (a_png, a_log) = run();
    let (b_png, b_log) = run();
    assert_eq!(a_png, b_png);
    assert_eq!(a_log, b_log);
}

#[test]
fn parallel_matches_serial() {
    let (img, desc) = four_recolors();
    let e = engine();
    let s = e.submit_image(&img, desc, serial()).unwrap();
    let p = e.submit_image(&img, desc, JobOptions::default()).unwrap();
    assert_eq!(e.run(&s).unwrap().status, JobStatus::Done);
    assert_eq!(e.run(&p).unwrap().status, JobStatus::Done);
    assert_eq!(e.final_image(&s).unwrap(), e.final_image(&p).unwrap());
}

#[test]
fn forced_edit_failure_keeps_original() {
    let (img, desc) = four_recolors();
    let e = engine_with(
        MockConfig {
            edit_failure: 1.0,
            ..MockConfig::default()
        },
        None,
    );
    let id = e.submit_image(&img, desc, JobOptions::default()).unwrap();
    let rec = e.run(&id).unwrap();
    assert_eq!(rec.status, JobStatus::PartiallyCorrected);
    let max = rec.options.loop_cfg.max_iterations;
    for s in rec.subtasks.iter().filter(|s| matches!(s.subtask.kind, SubtaskKind::Attribute(_))) {
        assert_eq!(s.phase, SubtaskPhase::Failed, "{}", s.subtask.id);
        assert_eq!(s.executor_calls, max);
    }
    assert_eq!(rec.failed_subtasks().len(), 4);
    assert_eq!(e.final_image(&id).unwrap(), img);
}

#[test]
fn invalid_submissions_are_rejected() {
    let e = engine();
    let img = deer_image();
    assert!(matches!(e.submit_image(&img, "  ", JobOptions::default()), Err(Error::EmptyDescription)));
    let mut o = JobOptions::default();
    o.loop_cfg.max_iterations = 0;
    assert!(matches!(e.submit_image(&img, DEER_SCENE, o), Err(Error::InvalidConfig(_))));
    let mut o = JobOptions::default();
    o.refine.k_fraction = 1.5;
    assert!(matches!(e.submit_image(&img, DEER_SCENE, o), Err(Error::InvalidConfig(_))));
    assert!(e.submit(b"not a png", DEER_SCENE, JobOptions::default()).is_err());
    assert!(matches!(e.record("nope"), Err(Error::JobNotFound(_))));
}

#[test]
fn jobs_persist_across_engines() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let e = engine_with(MockConfig::default(), Some(dir.path().to_path_buf()));
        let id = e.submit_image(&deer_image(), DEER_SCENE, JobOptions::default()).unwrap();
        e.run(&id).unwrap();
        id
    };
    let jd = dir.path().join(&id);
    for f in ["job.json", "runlog.jsonl", "composite.png", "mask.png", "refined.png", "refine_trace.jsonl"] {
        assert!(jd.join(f).exists(), "{f}");
    }
    let e = engine_with(MockConfig::default(), Some(dir.path().to_path_buf()));
    let rec = e.load(&id).unwrap();
    assert_eq!(rec.status, JobStatus::Done);
    let refined = Image::from_png(&std::fs::read(jd.join("refined.png")).unwrap()).unwrap();
    assert_eq!(e.final_image(&id).unwrap(), refined);
    let out = rec.output.unwrap();
    assert_eq!(Image::from_png(&e.artifact(&out.refined).unwrap()).unwrap(), refined);
    assert!(e.artifacts(&id).unwrap().contains(&rec.input_image));
    let log = e.log_jsonl(&id).unwrap();
    assert!(log.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn resume_after_crash_in_correction() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (id, expected) = {
        let e = engine_with(MockConfig::default(), Some(root.clone()));
        let id = e.submit_image(&deer_image(), DEER_SCENE, serial()).unwrap();
        e.run(&id).unwrap();
        let img = e.final_image(&id).unwrap();
        (id, img)
    };
    // Rewind the persisted record to just after the counting checkpoint.
    let path = root.join(&id).join("job.json");
    let mut rec: JobRecord = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert!(rec.counting.is_some());
    rec.status = JobStatus::Correcting;
    rec.output = None;
    for s in &mut rec.subtasks {
        if !matches!(s.subtask.kind, SubtaskKind::Counting { .. }) {
            *s = SubtaskState::new(s.subtask.clone());
        }
    }
    std::fs::write(&path, serde_json::to_vec_pretty(&rec).unwrap()).unwrap();

    let e = engine_with(MockConfig::default(), Some(root));
    e.load(&id).unwrap();
    let rec = e.resume(&id).unwrap();
    assert_eq!(rec.status, JobStatus::Done);
    assert_eq!(e.final_image(&id).unwrap(), expected);
}

#[test]
fn observer_sees_every_phase() {
    use std::sync::{Arc, Mutex};
    let seen = Arc::new(Mutex::new(Vec::new()));
    let e = engine();
    let s = seen.clone();
    e.set_observer(Arc::new(move |r: &JobRecord| {
        let mut v = s.lock().unwrap();
        if v.last() != Some(&r.status) {
            v.push(r.status);
        }
    }));
    let id = e.submit_image(&deer_image(), DEER_SCENE, JobOptions::default()).unwrap();
    e.run(&id).unwrap();
    let v = seen.lock().unwrap().clone();
    for s in [JobStatus::Counting, JobStatus::Correcting, JobStatus::Stitching, JobStatus::Done] {
        assert!(v.contains(&s), "{v:?}");
    }
}

#[test]
fn resume_skips_finished_subtasks() {
    use scenefix_core::backend::BackendKind;
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let (img, desc) = four_recolors();
    let (id, expected) = {
        let e = engine_with(MockConfig::default(), Some(root.clone()));
        let id = e.submit_image(&img, desc, JobOptions::default()).unwrap();
        e.run(&id).unwrap();
        let out = e.final_image(&id).unwrap();
        (id, out)
    };
    let path = root.join(&id).join("job.json");
    let mut rec: JobRecord = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    rec.status = JobStatus::Correcting;
    rec.output = None;
    let mut reset = 0;
    for s in rec.subtasks.iter_mut().filter(|s| !s.subtask.is_counting()).skip(2) {
        *s = SubtaskState::new(s.subtask.clone());
        reset += 1;
    }
    assert_eq!(reset, 2);
    std::fs::write(&path, serde_json::to_vec(&rec).unwrap()).unwrap();

    let e = engine_with(MockConfig::default(), Some(root));
    let rec = e.resume(&id).unwrap();
    assert_eq!(rec.status, JobStatus::Done);
    assert_eq!(e.backends().calls(BackendKind::Editor), 2);
    assert_eq!(e.final_image(&id).unwrap(), expected);
}
