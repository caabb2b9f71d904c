//! JSON request and response bodies for the backend HTTP protocol.
//!
//! Images and masks travel as PNG blobs, uploaded with
//! `PUT /v1/blobs/{hash}` and referenced by the hex SHA-256 of the PNG bytes.
//! Errors are returned as `{"error": code, "message": text}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{Latent, LatentTrajectory};
use crate::geometry::{DetectionBox, Size};

pub fn blob_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const PATH_DETECT: &str = "/v1/detect";
pub const PATH_SEGMENT: &str = "/v1/segment";
pub const PATH_INPAINT: &str = "/v1/inpaint";
pub const PATH_VLM: &str = "/v1/vlm";
pub const PATH_LLM: &str = "/v1/llm";
pub const PATH_EDIT: &str = "/v1/edit";
pub const PATH_PROPOSE_BOX: &str = "/v1/propose_box";
pub const PATH_GENERATE: &str = "/v1/generate";
pub const PATH_REFINE_INVERT: &str = "/v1/refine/invert";
pub const PATH_REFINE_STEP: &str = "/v1/refine/step";
pub const PATH_REFINE_DECODE: &str = "/v1/refine/decode";
pub const PATH_BLOBS: &str = "/v1/blobs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<DetectionBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: DetectionBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub image: String,
    pub question: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub image: String,
    pub instruction: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposeBoxRequest {
    pub description: String,
    pub existing: Vec<DetectionBox>,
    pub canvas: Size,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxResponse {
    #[serde(rename = "box")]
    pub bbox: DetectionBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub description: String,
    #[serde(rename = "box")]
    pub bbox: DetectionBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertRequest {
    pub image: String,
    pub steps: usize,
}

/// Trajectory with repeated latents sent once: `order[s]` indexes `distinct`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWire {
    pub steps: usize,
    pub distinct: Vec<Latent>,
    pub order: Vec<usize>,
}

impl TrajectoryWire {
    pub fn pack(t: &LatentTrajectory) -> Self {
        let mut distinct: Vec<Arc<Latent>> = Vec::new();
        let mut order = Vec::with_capacity(t.latents.len());
        for z in &t.latents {
            let i = match distinct.iter().position(|d| Arc::ptr_eq(d, z) || **d == **z) {
                Some(i) => i,
                None => {
                    distinct.push(z.clone());
                    distinct.len() - 1
                }
            };
            order.push(i);
        }
        Self {
            steps: t.steps,
            distinct: distinct.iter().map(|z| (**z).clone()).collect(),
            order,
        }
    }

    pub fn unpack(self) -> Option<LatentTrajectory> {
        let distinct: Vec<Arc<Latent>> = self.distinct.into_iter().map(Arc::new).collect();
        let latents = self
            .order
            .iter()
            .map(|&i| distinct.get(i).cloned())
            .collect::<Option<Vec<_>>>()?;
        Some(LatentTrajectory {
            steps: self.steps,
            latents,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub latent: Latent,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentResponse {
    pub latent: Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeRequest {
    pub latent: Latent,
}
