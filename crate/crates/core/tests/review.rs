mod common;

use common::*;
use scenefix_core::backend::mock::MockConfig;
use scenefix_core::backend::mock::world::{render, ShapeKind};
use scenefix_core::eval::{score, ScoreConfig};
use scenefix_core::geometry::{Rect, Size};
use scenefix_core::image::Image;
use scenefix_core::orchestrator::*;
use scenefix_core::runlog::ArtifactStore;
use scenefix_core::Error;

fn review() -> JobOptions {
    JobOptions {
        mode: JobMode::Review,
        ..JobOptions::default()
    }
}

fn parked(e: &Engine) -> (String, Image) {
    let (img, desc) = four_recolors();
    let id = e.submit_image(&img, desc, review()).unwrap();
    let rec = e.run(&id).unwrap();
    assert_eq!(rec.status, JobStatus::AwaitingReview);
    (id, img)
}

#[test]
fn auto_jobs_have_nothing_pending() {
    let e = engine();
    let (img, desc) = four_recolors();
    let id = e.submit_image(&img, desc, JobOptions::default()).unwrap();
    e.run(&id).unwrap();
    assert!(e.pending(&id).unwrap().is_empty());
}

#[test]
fn approving_every_candidate_finishes_like_auto() {
    let e = engine();
    let (id, img) = parked(&e);
    let views = e.pending(&id).unwrap();
    assert_eq!(views.len(), 4);
    for v in &views {
        assert_eq!(v.job_id, id);
        assert_eq!(v.iteration, 0);
        assert!(v.verified);
        assert_eq!(v.allowed_actions, ["approve", "reject_retry", "substitute"]);
        assert!(!v.transcript.is_empty());
        assert!(Image::from_png(&e.artifact(&v.candidate).unwrap()).is_ok());
        assert!(Image::from_png(&e.artifact(&v.before).unwrap()).is_ok());
    }
    for (i, v) in views.iter().enumerate() {
        let rec = e.review_action(&id, &v.subtask_id, ReviewVerdict::Approve).unwrap();
        let last = i + 1 == views.len();
        assert_eq!(rec.status == JobStatus::Done, last, "{:?}", rec.status);
        assert_eq!(e.pending(&id).unwrap().len(), views.len() - i - 1);
    }
    let auto = {
        let (_, desc) = four_recolors();
        let a = e.submit_image(&img, desc, JobOptions::default()).unwrap();
        e.run(&a).unwrap();
        e.final_image(&a).unwrap()
    };
    assert_eq!(e.final_image(&id).unwrap(), auto);
}

#[test]
fn reject_retry_advances_until_the_budget_is_spent() {
    let e = engine();
    let (id, _) = parked(&e);
    let sid = e.pending(&id).unwrap()[0].subtask_id.clone();
    let max = JobOptions::default().loop_cfg.max_iterations;
    for it in 1..max {
        let rec = e.review_action(&id, &sid, ReviewVerdict::RejectRetry).unwrap();
        assert_eq!(rec.status, JobStatus::AwaitingReview);
        let v = e.pending(&id).unwrap().into_iter().find(|v| v.subtask_id == sid).unwrap();
        assert_eq!(v.iteration, it);
    }
    let v = e.pending(&id).unwrap().into_iter().find(|v| v.subtask_id == sid).unwrap();
    assert!(!v.allowed_actions.iter().any(|a| a == "reject_retry"));
    let err = e.review_action(&id, &sid, ReviewVerdict::RejectRetry).unwrap_err();
    assert!(matches!(err, Error::IterationBudgetExhausted(_)), "{err}");
    assert_eq!(e.pending(&id).unwrap().len(), 4);
    let rec = e.review_action(&id, &sid, ReviewVerdict::Approve).unwrap();
    assert_eq!(rec.subtask(&sid).unwrap().phase, SubtaskPhase::Corrected);
}

#[test]
fn substitute_installs_the_upload() {
    let e = engine();
    let (id, _) = parked(&e);
    let views = e.pending(&id).unwrap();
    let v = &views[0];
    let candidate = Image::from_png(&e.artifact(&v.candidate).unwrap()).unwrap();

    let wrong = Image::filled(candidate.width() + 1, candidate.height(), [0, 0, 0]).to_png();
    let err = e.review_action(&id, &v.subtask_id, ReviewVerdict::Substitute(wrong)).unwrap_err();
    assert!(matches!(err, Error::InvalidImage(_)), "{err}");

    let png = candidate.to_png();
    let hash = ArtifactStore::in_memory().put(&png).unwrap();
    let rec = e.review_action(&id, &v.subtask_id, ReviewVerdict::Substitute(png)).unwrap();
    let s = rec.subtask(&v.subtask_id).unwrap();
    assert_eq!(s.phase, SubtaskPhase::Corrected);
    assert!(s.pending.is_none());
    assert!(e.artifacts(&id).unwrap().contains(&hash));
    let log = e.log_jsonl(&id).unwrap();
    assert!(log.contains(&hash));
}

#[test]
fn misdirected_actions_are_rejected() {
    let e = engine();
    let (id, _) = parked(&e);
    let err = e.review_action(&id, "attr:nobody_9:color", ReviewVerdict::Approve).unwrap_err();
    assert!(matches!(err, Error::SubtaskNotFound(_)), "{err}");
    let err = e.review_action(&id, "count:bear", ReviewVerdict::Approve).unwrap_err();
    assert!(matches!(err, Error::NoPendingCandidate(_)), "{err}");

    let (img, desc) = four_recolors();
    let auto = e.submit_image(&img, desc, JobOptions::default()).unwrap();
    e.run(&auto).unwrap();
    let sid = e.record(&auto).unwrap().subtasks[0].subtask.id.clone();
    let err = e.review_action(&auto, &sid, ReviewVerdict::Approve).unwrap_err();
    assert!(matches!(err, Error::InvalidState(JobStatus::Done)), "{err}");
}

#[test]
fn spatial_candidates_cannot_be_substituted() {
    let e = engine();
    let img = render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "red", Rect::new(20, 60, 30, 30)),
            shape(ShapeKind::Ellipse, "blue", Rect::new(100, 60, 26, 26)),
        ],
    );
    let desc = "a red bear and a blue bird, the bird is left of the bear";
    let id = e.submit_image(&img, desc, review()).unwrap();
    let rec = e.run(&id).unwrap();
    assert_eq!(rec.status, JobStatus::AwaitingReview);
    let views = e.pending(&id).unwrap();
    assert_eq!(views.len(), 1);
    assert_eq!(views[0].allowed_actions, ["approve", "reject_retry"]);
    let err = e
        .review_action(&id, &views[0].subtask_id, ReviewVerdict::Substitute(img.to_png()))
        .unwrap_err();
    assert!(matches!(err, Error::UnsupportedAction(_)), "{err}");
    let rec = e.review_action(&id, &views[0].subtask_id, ReviewVerdict::Approve).unwrap();
    assert_eq!(rec.status, JobStatus::Done);
    let sc = score(&e.final_image(&id).unwrap(), rec.spec.as_ref().unwrap(), &ScoreConfig::default());
    assert!(sc.all_satisfied(), "{sc:?}");
}

#[test]
fn parked_jobs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let id = {
        let e = engine_with(MockConfig::default(), Some(root.clone()));
        parked(&e).0
    };
    let e = engine_with(MockConfig::default(), Some(root));
    assert_eq!(e.load(&id).unwrap().status, JobStatus::AwaitingReview);
    let views = e.pending(&id).unwrap();
    assert_eq!(views.len(), 4);
    let mut last = None;
    for v in views {
        last = Some(e.review_action(&id, &v.subtask_id, ReviewVerdict::Approve).unwrap());
    }
    assert_eq!(last.unwrap().status, JobStatus::Done);
}

#[test]
fn approval_unblocks_the_rest_of_its_lane() {
    let e = engine();
    let img = render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "green", Rect::new(20, 20, 34, 34)),
            shape(ShapeKind::Rect, "green", Rect::new(80, 90, 44, 24)),
        ],
    );
    let id = e.submit_image(&img, "a red striped bear and a blue dog", review()).unwrap();
    e.run(&id).unwrap();
    let ids = |e: &Engine| -> Vec<String> { e.pending(&id).unwrap().into_iter().map(|v| v.subtask_id).collect() };
    assert_eq!(ids(&e), ["attr:bear_1:color", "attr:dog_2:color"]);
    let rec = e.review_action(&id, "attr:bear_1:color", ReviewVerdict::Approve).unwrap();
    assert_eq!(rec.status, JobStatus::AwaitingReview);
    assert_eq!(ids(&e), ["attr:bear_1:texture", "attr:dog_2:color"]);
}
