mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use scenefix_core::backend::mock::{MockConfig, MockWorld};
use scenefix_core::backend::remote::RemoteBackend;
use scenefix_core::backend::wire::{blob_hash, PATH_BLOBS, PATH_DETECT};
use scenefix_core::backend::*;
use scenefix_core::config::BackendsConfig;
use scenefix_core::geometry::{DetectionBox, Rect, Size};
use scenefix_core::image::ObjectMask;
use scenefix_core::orchestrator::{Engine, JobOptions, JobStatus};
use scenefix_core::prompts::PromptSet;
use serde_json::json;

fn hosted(cfg: MockConfig) -> (String, RemoteBackend) {
    let suite = BackendSuite::new(BackendHandles::mock(cfg), DEFAULT_CONCURRENCY_LIMIT);
    let base = spawn(scenefix_server::hosting::router(Arc::new(suite)));
    let remote = RemoteBackend::new(&base, Duration::from_secs(60));
    (base, remote)
}

#[test]
fn remote_calls_match_in_process_mock() {
    let (_, remote) = hosted(MockConfig::default());
    let local = MockWorld::default();
    let img = deer_image();

    let prompt = "TASK: decompose\nDESCRIPTION: a red bear and two blue birds\n";
    assert_eq!(remote.complete(prompt, 0.0).unwrap(), local.complete(prompt, 0.0).unwrap());
    let q = "Is the bear red? Answer yes or no.";
    assert_eq!(remote.query(&img, q).unwrap(), local.query(&img, q).unwrap());

    let birds = remote.detect(&img, "bird").unwrap();
    assert_eq!(birds, local.detect(&img, "bird").unwrap());
    assert_eq!(birds.len(), 2);

    let seg = remote.segment(&img, &birds[0]).unwrap();
    assert_eq!(seg, local.segment(&img, &birds[0]).unwrap());
    assert!(!seg.is_empty());

    let removed = remote.inpaint_remove(&img, &seg).unwrap();
    assert_eq!(removed, local.inpaint_remove(&img, &seg).unwrap());
    assert_eq!(remote.detect(&removed, "bird").unwrap().len(), 1);

    let crop = img.crop(Rect::new(14, 20, 24, 40));
    let recolor = "Make the deer yellow.";
    assert_eq!(remote.edit(&crop, recolor, 3).unwrap(), local.edit(&crop, recolor, 3).unwrap());

    let canvas = Size::new(160, 160);
    let b = remote.propose_box("bird", &birds, canvas).unwrap();
    assert_eq!(b, local.propose_box("bird", &birds, canvas).unwrap());
    assert_eq!(remote.generate("blue bird", &b).unwrap(), local.generate("blue bird", &b).unwrap());

    let traj = remote.invert(&img, 6).unwrap();
    assert_eq!(traj, local.invert(&img, 6).unwrap());
    assert!(traj.is_consistent());
    let z = remote.step(&traj.latents[0], 6).unwrap();
    assert_eq!(z, local.step(&traj.latents[0], 6).unwrap());
    assert_eq!(remote.decode(&z).unwrap(), local.decode(&z).unwrap());
}

#[test]
fn backend_errors_cross_the_wire_unchanged() {
    let (_, remote) = hosted(MockConfig::default());
    let canvas = Size::new(40, 40);
    let wall = vec![DetectionBox::new(Rect::new(0, 0, 40, 40), 1.0)];
    assert_eq!(
        remote.propose_box("bird", &wall, canvas).unwrap_err(),
        BackendError::NoFeasiblePlacement
    );
    let img = deer_image();
    let empty = ObjectMask::empty(Size::new(10, 10));
    assert!(matches!(
        remote.inpaint_remove(&img, &empty),
        Err(BackendError::InvalidInput(_))
    ));
}

#[test]
fn blob_upload_checks_the_hash() {
    let (base, remote) = hosted(MockConfig::default());
    let png = deer_image().to_png();
    let (status, body) = read(
        agent()
            .put(format!("{base}{PATH_BLOBS}/{}", "0".repeat(64)))
            .send(&png[..])
            .unwrap(),
    );
    assert_eq!(status, 400);
    assert_eq!(json(&body)["error"], "invalid_input");

    let hash = remote.put_blob(&png).unwrap();
    assert_eq!(hash, blob_hash(&png));
    assert_eq!(remote.get_blob(&hash).unwrap(), png);
    let (status, body) = get(&base, &format!("{PATH_BLOBS}/{}", "f".repeat(64)));
    assert_eq!(status, 404);
    assert_eq!(json(&body)["error"], "invalid_input");
}

#[test]
fn unknown_blob_and_malformed_body_are_client_errors() {
    let (base, _) = hosted(MockConfig::default());
    let (status, body) = post_json(&base, PATH_DETECT, &json!({"image": "ab", "label": "bird"}));
    assert_eq!(status, 400);
    assert_eq!(json(&body)["error"], "invalid_input");
    let (status, body) = post_json(&base, PATH_DETECT, &json!({"label": "bird"}));
    assert_eq!(status, 400);
    assert_eq!(json(&body)["error"], "protocol");
}

#[test]
fn engine_over_hosted_backends_matches_in_process_run() {
    let (base, _) = hosted(MockConfig::default());
    let remote_suite = BackendsConfig::remote(&base).suite().unwrap();
    let remote = Engine::new(Arc::new(remote_suite), PromptSet::default(), None).unwrap();
    let local = engine(MockConfig::default(), None);
    let opts = JobOptions {
        schedule: scenefix_core::orchestrator::Schedule::Serial,
        ..JobOptions::default()
    };
    let mut finals = Vec::new();
    for e in [&remote, local.as_ref()] {
        let id = e.submit_image(&deer_image(), DEER_SCENE, opts.clone()).unwrap();
        let rec = e.run(&id).unwrap();
        assert_eq!(rec.status, JobStatus::Done, "{:?}", rec.error);
        finals.push((e.final_image(&id).unwrap(), e.comparable_log(&id).unwrap()));
    }
    assert!(finals[0].0 == finals[1].0, "remote and in-process images differ");
    assert_eq!(finals[0].1.len(), finals[1].1.len());
}
