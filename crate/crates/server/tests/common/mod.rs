#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::Router;
use scenefix_core::backend::mock::world::{color_index, render, Shape, ShapeKind};
use scenefix_core::backend::mock::MockConfig;
use scenefix_core::config::BackendsConfig;
use scenefix_core::geometry::{Rect, Size};
use scenefix_core::image::Image;
use scenefix_core::orchestrator::{Engine, JobStatus};
use scenefix_core::prompts::PromptSet;
use scenefix_server::{AppState, JobView};
use serde_json::Value;

pub const DEER_SCENE: &str = "a yellow deer and a red bear and three blue birds";

/// Serves `router` on an ephemeral port from a background runtime.
pub fn spawn(router: Router) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(l, router).await.unwrap();
        });
    });
    format!("http://{addr}")
}

pub fn shape(kind: ShapeKind, color: &str, rect: Rect) -> Shape {
    Shape {
        kind,
        color: color_index(color).unwrap(),
        striped: false,
        rect,
    }
}

pub fn deer_image() -> Image {
    render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "green", Rect::new(14, 20, 24, 40)),
            shape(ShapeKind::Rect, "red", Rect::new(70, 24, 34, 34)),
            shape(ShapeKind::Ellipse, "blue", Rect::new(20, 100, 24, 24)),
            shape(ShapeKind::Ellipse, "blue", Rect::new(70, 100, 22, 22)),
        ],
    )
}

pub fn four_recolors() -> (Image, &'static str) {
    let img = render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "green", Rect::new(10, 10, 30, 30)),
            shape(ShapeKind::Rect, "green", Rect::new(90, 10, 40, 24)),
            shape(ShapeKind::Ellipse, "green", Rect::new(10, 90, 30, 30)),
            shape(ShapeKind::Ellipse, "green", Rect::new(90, 90, 44, 24)),
        ],
    );
    (img, "a red bear and a blue dog and a yellow bird and a purple cat")
}

/// A bird left of the bear, drawn the other way round.
pub fn swapped_pair() -> (Image, &'static str) {
    let img = render(
        Size::new(160, 160),
        &[
            shape(ShapeKind::Rect, "red", Rect::new(20, 60, 30, 30)),
            shape(ShapeKind::Ellipse, "blue", Rect::new(110, 60, 24, 24)),
        ],
    );
    (img, "a red bear and a blue bird, the bird is left of the bear")
}

pub fn engine(mock: MockConfig, root: Option<std::path::PathBuf>) -> Arc<Engine> {
    let suite = BackendsConfig::mock(mock).suite().unwrap();
    Arc::new(Engine::new(Arc::new(suite), PromptSet::default(), root).unwrap())
}

/// A job API server over a fresh mock engine.
pub fn api(mock: MockConfig) -> String {
    spawn(scenefix_server::jobs::router(AppState::new(engine(mock, None))))
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into()
}

/// A multipart body; parts are (name, filename, bytes).
pub fn multipart(parts: &[(&str, Option<&str>, &[u8])]) -> (String, Vec<u8>) {
    let boundary = "scenefixboundary7d3c";
    let mut body = Vec::new();
    for (name, file, bytes) in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        match file {
            Some(f) => body.extend_from_slice(
                format!(
                    "Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\nContent-Type: image/png\r\n\r\n"
                )
                .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes()),
        }
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/form-data; boundary={boundary}"), body)
}

/// Status code and body of a response.
pub fn read(resp: ureq::http::Response<ureq::Body>) -> (u16, Vec<u8>) {
    let status = resp.status().as_u16();
    let mut resp = resp;
    (status, resp.body_mut().read_to_vec().unwrap())
}

pub fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

pub fn post_multipart(base: &str, path: &str, parts: &[(&str, Option<&str>, &[u8])]) -> (u16, Vec<u8>) {
    let (ct, body) = multipart(parts);
    read(
        agent()
            .post(format!("{base}{path}"))
            .header("content-type", &ct)
            .send(&body[..])
            .unwrap(),
    )
}

pub fn post_json(base: &str, path: &str, v: &Value) -> (u16, Vec<u8>) {
    read(agent().post(format!("{base}{path}")).send_json(v).unwrap())
}

pub fn get(base: &str, path: &str) -> (u16, Vec<u8>) {
    read(agent().get(format!("{base}{path}")).call().unwrap())
}

pub fn submit(base: &str, image: &Image, description: &str, options: &Value) -> String {
    let png = image.to_png();
    let opts = options.to_string();
    let (status, body) = post_multipart(
        base,
        "/jobs",
        &[
            ("image", Some("in.png"), &png),
            ("description", None, description.as_bytes()),
            ("options", None, opts.as_bytes()),
        ],
    );
    assert_eq!(status, 201, "{}", String::from_utf8_lossy(&body));
    json(&body)["id"].as_str().unwrap().to_string()
}

pub fn view(base: &str, id: &str) -> JobView {
    let (status, body) = get(base, &format!("/jobs/{id}"));
    assert_eq!(status, 200, "{}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

/// Polls until the job is terminal or parked with nothing running.
pub fn settle(base: &str, id: &str) -> JobView {
    let t0 = Instant::now();
    loop {
        let v = view(base, id);
        let s = v.job.status;
        if s.is_terminal() || (s == JobStatus::AwaitingReview && !v.pending.is_empty()) {
            return v;
        }
        assert!(t0.elapsed() < Duration::from_secs(60), "job {id} stuck in {s:?}");
        std::thread::sleep(Duration::from_millis(20));
    }
}
