//! Serves a backend suite over the wire protocol, so a remote client can
//! drive in-process backends (the mock world, typically) through HTTP.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use scenefix_core::backend::wire::*;
use scenefix_core::backend::{BackendError, BackendResult, BackendSuite};
use scenefix_core::image::{Image, ObjectMask};

/// Blobs kept before the oldest is evicted.
pub const BLOB_CAPACITY: usize = 4096;
const BODY_LIMIT: usize = 512 * 1024 * 1024;

#[derive(Default)]
struct Blobs {
    map: HashMap<String, Arc<Vec<u8>>>,
    order: VecDeque<String>,
}

impl Blobs {
    fn insert(&mut self, hash: String, bytes: Vec<u8>) {
        if self.map.contains_key(&hash) {
            return;
        }
        while self.order.len() >= BLOB_CAPACITY {
            if let Some(old) = self.order.pop_front() {
                self.map.remove(&old);
            }
        }
        self.order.push_back(hash.clone());
        self.map.insert(hash, Arc::new(bytes));
    }
}

#[derive(Clone)]
struct Host {
    suite: Arc<BackendSuite>,
    blobs: Arc<Mutex<Blobs>>,
}

impl Host {
    fn blob(&self, hash: &str) -> BackendResult<Arc<Vec<u8>>> {
        self.blobs
            .lock()
            .expect("blob lock")
            .map
            .get(hash)
            .cloned()
            .ok_or_else(|| BackendError::InvalidInput(format!("unknown blob {hash}")))
    }

    fn image(&self, hash: &str) -> BackendResult<Image> {
        Image::from_png(&self.blob(hash)?).map_err(|e| BackendError::InvalidInput(e.to_string()))
    }

    fn mask(&self, hash: &str) -> BackendResult<ObjectMask> {
        ObjectMask::from_png(&self.blob(hash)?).map_err(|e| BackendError::InvalidInput(e.to_string()))
    }

    fn store(&self, bytes: Vec<u8>) -> String {
        let hash = blob_hash(&bytes);
        self.blobs.lock().expect("blob lock").insert(hash.clone(), bytes);
        hash
    }
}

struct WireError(BackendError);

impl IntoResponse for WireError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            BackendError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            BackendError::EmptyMask | BackendError::NoFeasiblePlacement => StatusCode::UNPROCESSABLE_ENTITY,
            BackendError::InvalidInput(_) | BackendError::Protocol(_) => StatusCode::BAD_REQUEST,
        };
        (status, Json(self.0)).into_response()
    }
}

type WireResult<T> = Result<T, WireError>;

/// Parses the body, then runs `f` on the blocking pool.
async fn call<Req, Resp, F>(host: Host, body: Bytes, f: F) -> WireResult<Json<Resp>>
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
    F: FnOnce(&Host, Req) -> BackendResult<Resp> + Send + 'static,
{
    let req: Req = serde_json::from_slice(&body).map_err(|e| WireError(BackendError::Protocol(e.to_string())))?;
    tokio::task::spawn_blocking(move || f(&host, req))
        .await
        .map_err(|e| WireError(BackendError::Unavailable(e.to_string())))?
        .map(Json)
        .map_err(WireError)
}

async fn put_blob(State(host): State<Host>, Path(hash): Path<String>, body: Bytes) -> WireResult<StatusCode> {
    let actual = blob_hash(&body);
    if actual != hash {
        return Err(WireError(BackendError::InvalidInput(format!(
            "blob hash mismatch: path {hash}, content {actual}"
        ))));
    }
    host.store(body.to_vec());
    Ok(StatusCode::NO_CONTENT)
}

async fn get_blob(State(host): State<Host>, Path(hash): Path<String>) -> Response {
    match host.blob(&hash) {
        Ok(b) => ([(header::CONTENT_TYPE, "image/png")], b.as_ref().clone()).into_response(),
        Err(e) => (StatusCode::NOT_FOUND, Json(e)).into_response(),
    }
}

async fn detect(State(h): State<Host>, body: Bytes) -> WireResult<Json<DetectResponse>> {
    call(h, body, |h, r: DetectRequest| {
        Ok(DetectResponse {
            boxes: h.suite.detect(&h.image(&r.image)?, &r.label)?,
        })
    })
    .await
}

async fn segment(State(h): State<Host>, body: Bytes) -> WireResult<Json<MaskResponse>> {
    call(h, body, |h, r: SegmentRequest| {
        let mask = h.suite.segment(&h.image(&r.image)?, &r.bbox)?;
        Ok(MaskResponse {
            mask: h.store(mask.to_png()),
        })
    })
    .await
}

async fn inpaint(State(h): State<Host>, body: Bytes) -> WireResult<Json<ImageResponse>> {
    call(h, body, |h, r: InpaintRequest| {
        let out = h.suite.inpaint_remove(&h.image(&r.image)?, &h.mask(&r.mask)?)?;
        Ok(ImageResponse {
            image: h.store(out.to_png()),
        })
    })
    .await
}

async fn vlm(State(h): State<Host>, body: Bytes) -> WireResult<Json<TextResponse>> {
    call(h, body, |h, r: VlmRequest| {
        Ok(TextResponse {
            text: h.suite.vlm_query(&h.image(&r.image)?, &r.question)?,
        })
    })
    .await
}

async fn llm(State(h): State<Host>, body: Bytes) -> WireResult<Json<TextResponse>> {
    call(h, body, |h, r: LlmRequest| {
        Ok(TextResponse {
            text: h.suite.complete(&r.prompt, r.temperature)?,
        })
    })
    .await
}

async fn edit(State(h): State<Host>, body: Bytes) -> WireResult<Json<ImageResponse>> {
    call(h, body, |h, r: EditRequest| {
        let out = h.suite.edit(&h.image(&r.image)?, &r.instruction, r.seed)?;
        Ok(ImageResponse {
            image: h.store(out.to_png()),
        })
    })
    .await
}

async fn propose_box(State(h): State<Host>, body: Bytes) -> WireResult<Json<BoxResponse>> {
    call(h, body, |h, r: ProposeBoxRequest| {
        Ok(BoxResponse {
            bbox: h.suite.propose_box(&r.description, &r.existing, r.canvas)?,
        })
    })
    .await
}

async fn generate(State(h): State<Host>, body: Bytes) -> WireResult<Json<ImageResponse>> {
    call(h, body, |h, r: GenerateRequest| {
        let out = h.suite.generate_object(&r.description, &r.bbox)?;
        Ok(ImageResponse {
            image: h.store(out.to_png()),
        })
    })
    .await
}

async fn refine_invert(State(h): State<Host>, body: Bytes) -> WireResult<Json<TrajectoryWire>> {
    call(h, body, |h, r: InvertRequest| {
        let t = h.suite.refiner_invert(&h.image(&r.image)?, r.steps)?;
        Ok(TrajectoryWire::pack(&t))
    })
    .await
}

async fn refine_step(State(h): State<Host>, body: Bytes) -> WireResult<Json<LatentResponse>> {
    call(h, body, |h, r: StepRequest| {
        Ok(LatentResponse {
            latent: h.suite.refiner_step(&r.latent, r.t)?,
        })
    })
    .await
}

async fn refine_decode(State(h): State<Host>, body: Bytes) -> WireResult<Json<ImageResponse>> {
    call(h, body, |h, r: DecodeRequest| {
        let out = h.suite.refiner_decode(&r.latent)?;
        Ok(ImageResponse {
            image: h.store(out.to_png()),
        })
    })
    .await
}

/// Every backend endpoint plus blob upload and download.
pub fn router(suite: Arc<BackendSuite>) -> Router {
    let host = Host {
        suite,
        blobs: Arc::new(Mutex::new(Blobs::default())),
    };
    Router::new()
        .route(&format!("{PATH_BLOBS}/{{hash}}"), get(get_blob).put(put_blob))
        .route(PATH_DETECT, post(detect))
        .route(PATH_SEGMENT, post(segment))
        .route(PATH_INPAINT, post(inpaint))
        .route(PATH_VLM, post(vlm))
        .route(PATH_LLM, post(llm))
        .route(PATH_EDIT, post(edit))
        .route(PATH_PROPOSE_BOX, post(propose_box))
        .route(PATH_GENERATE, post(generate))
        .route(PATH_REFINE_INVERT, post(refine_invert))
        .route(PATH_REFINE_STEP, post(refine_step))
        .route(PATH_REFINE_DECODE, post(refine_decode))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(host)
}
