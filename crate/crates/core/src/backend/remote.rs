//! Blocking HTTP client for model servers speaking the [`wire`](super::wire) protocol.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use crate::backend::wire::*;
use crate::backend::{
    BackendError, BackendResult, Detector, Editor, Inpainter, Latent, LatentTrajectory,
    LayoutGenerator, Llm, ObjectGenerator, Refiner, Segmenter, Vlm,
};
use crate::geometry::{DetectionBox, Size};
use crate::image::{Image, ObjectMask};

const BODY_LIMIT: u64 = 512 * 1024 * 1024;

/// Client for one server. Every backend trait is implemented; the server
/// decides which endpoints it actually serves.
#[derive(Clone, Debug)]
pub struct RemoteBackend {
    base: String,
    agent: Agent,
}

impl RemoteBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn read_body(resp: &mut ureq::http::Response<ureq::Body>) -> BackendResult<Vec<u8>> {
        resp.body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_vec()
            .map_err(|e| BackendError::Unavailable(e.to_string()))
    }

    fn check(mut resp: ureq::http::Response<ureq::Body>) -> BackendResult<Vec<u8>> {
        let status = resp.status();
        let bytes = Self::read_body(&mut resp)?;
        if status.is_success() {
            return Ok(bytes);
        }
        match serde_json::from_slice::<BackendError>(&bytes) {
            Ok(e) => Err(e),
            Err(_) => Err(BackendError::Unavailable(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&bytes)
            ))),
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> BackendResult<Resp> {
        let body = serde_json::to_vec(req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(&body[..])
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let bytes = Self::check(resp)?;
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Protocol(e.to_string()))
    }

    pub fn put_blob(&self, png: &[u8]) -> BackendResult<String> {
        let hash = blob_hash(png);
        let resp = self
            .agent
            .put(format!("{}{PATH_BLOBS}/{hash}", self.base))
            .header("content-type", "image/png")
            .send(png)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        Self::check(resp)?;
        Ok(hash)
    }

    pub fn get_blob(&self, hash: &str) -> BackendResult<Vec<u8>> {
        let resp = self
            .agent
            .get(format!("{}{PATH_BLOBS}/{hash}", self.base))
            .call()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let bytes = Self::check(resp)?;
        if blob_hash(&bytes) != hash {
            return Err(BackendError::Protocol(format!("blob {hash} failed its hash check")));
        }
        Ok(bytes)
    }

    fn put_image(&self, image: &Image) -> BackendResult<String> {
        self.put_blob(&image.to_png())
    }

    fn get_image(&self, hash: &str) -> BackendResult<Image> {
        Image::from_png(&self.get_blob(hash)?).map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn get_mask(&self, hash: &str) -> BackendResult<ObjectMask> {
        ObjectMask::from_png(&self.get_blob(hash)?).map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

impl Llm for RemoteBackend {
    fn complete(&self, prompt: &str, temperature: f32) -> BackendResult<String> {
        let r: TextResponse = self.post(
            PATH_LLM,
            &LlmRequest {
                prompt: prompt.into(),
                temperature,
            },
        )?;
        Ok(r.text)
    }
}

impl Vlm for RemoteBackend {
    fn query(&self, image: &Image, question: &str) -> BackendResult<String> {
        let image = self.put_image(image)?;
        let r: TextResponse = self.post(
            PATH_VLM,
            &VlmRequest {
                image,
                question: question.into(),
            },
        )?;
        Ok(r.text)
    }
}

impl Detector for RemoteBackend {
    fn detect(&self, image: &Image, label: &str) -> BackendResult<Vec<DetectionBox>> {
        let image = self.put_image(image)?;
        let r: DetectResponse = self.post(
            PATH_DETECT,
            &DetectRequest {
                image,
                label: label.into(),
            },
        )?;
        Ok(r.boxes)
    }
}

impl Segmenter for RemoteBackend {
    fn segment(&self, image: &Image, bbox: &DetectionBox) -> BackendResult<ObjectMask> {
        let hash = self.put_image(image)?;
        let r: MaskResponse = self.post(PATH_SEGMENT, &SegmentRequest { image: hash, bbox: *bbox })?;
        let mask = self.get_mask(&r.mask)?;
        if mask.size() != image.size() {
            return Err(BackendError::Protocol("mask size mismatch".into()));
        }
        Ok(mask)
    }
}

impl Inpainter for RemoteBackend {
    fn inpaint_remove(&self, image: &Image, mask: &ObjectMask) -> BackendResult<Image> {
        let image = self.put_image(image)?;
        let mask = self.put_blob(&mask.to_png())?;
        let r: ImageResponse = self.post(PATH_INPAINT, &InpaintRequest { image, mask })?;
        self.get_image(&r.image)
    }
}

impl Editor for RemoteBackend {
    fn edit(&self, crop: &Image, instruction: &str, seed: u64) -> BackendResult<Image> {
        let image = self.put_image(crop)?;
        let r: ImageResponse = self.post(
            PATH_EDIT,
            &EditRequest {
                image,
                instruction: instruction.into(),
                seed,
            },
        )?;
        self.get_image(&r.image)
    }
}

impl LayoutGenerator for RemoteBackend {
    fn propose_box(
        &self,
        description: &str,
        existing: &[DetectionBox],
        canvas: Size,
    ) -> BackendResult<DetectionBox> {
        let r: BoxResponse = self.post(
            PATH_PROPOSE_BOX,
            &ProposeBoxRequest {
                description: description.into(),
                existing: existing.to_vec(),
                canvas,
            },
        )?;
        Ok(r.bbox)
    }
}

impl ObjectGenerator for RemoteBackend {
    fn generate(&self, description: &str, bbox: &DetectionBox) -> BackendResult<Image> {
        let r: ImageResponse = self.post(
            PATH_GENERATE,
            &GenerateRequest {
                description: description.into(),
                bbox: *bbox,
            },
        )?;
        self.get_image(&r.image)
    }
}

impl Refiner for RemoteBackend {
    fn invert(&self, image: &Image, steps: usize) -> BackendResult<LatentTrajectory> {
        let image = self.put_image(image)?;
        let r: TrajectoryWire = self.post(PATH_REFINE_INVERT, &InvertRequest { image, steps })?;
        r.unpack()
            .ok_or_else(|| BackendError::Protocol("trajectory index out of range".into()))
    }

    fn step(&self, latent: &Latent, t: usize) -> BackendResult<Latent> {
        let r: LatentResponse = self.post(
            PATH_REFINE_STEP,
            &StepRequest {
                latent: latent.clone(),
                t,
            },
        )?;
        Ok(r.latent)
    }

    fn decode(&self, latent: &Latent) -> BackendResult<Image> {
        let r: ImageResponse = self.post(
            PATH_REFINE_DECODE,
            &DecodeRequest {
                latent: latent.clone(),
            },
        )?;
        self.get_image(&r.image)
    }
}
