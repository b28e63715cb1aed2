//! The boundary to the diffusion model.
//!
//! Everything the editing stages need from the diffusion side crosses this
//! boundary as images: a pixel-space SDS gradient (the noise residual already
//! weighted and pulled back through the latent encoder), a denoised image, or
//! a cross-attention map. The editing code never sees latents.

mod mock;
mod remote;
mod server;
pub mod wire;

pub use mock::{MockProvider, MockTarget};
pub use remote::RemoteProvider;
pub use server::{router, spawn_server, ServerHandle};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, Intrinsics};
use crate::image::RgbImage;
use crate::losses::AttentionMap;

/// Default SDEdit noise level for refinement.
pub const DEFAULT_DENOISE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Global,
    Local,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Sds,
    Denoise,
    Attention,
}

/// Prompts of one edit. The scene token names the personalized scene, the
/// object token the personalized reference content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub scene_token: String,
    pub object_token: String,
    pub scene_prompt: String,
    pub global_prompt: String,
    pub local_prompt: String,
    pub reference_prompt: String,
    pub object_keyword: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            scene_token: "<V1>".into(),
            object_token: "<V2>".into(),
            scene_prompt: "a <V1> toy".into(),
            global_prompt: "a <V1> toy wearing <V2> sunglasses".into(),
            local_prompt: "a <V2> sunglasses".into(),
            reference_prompt: "<V2> sunglasses".into(),
            object_keyword: "sunglasses".into(),
        }
    }
}

impl PromptSet {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let bad = |m: &str| Err(GuidanceError::BadRequest(m.to_string()));
        if self.scene_token.is_empty() || self.object_token.is_empty() {
            return bad("special tokens must be non-empty");
        }
        if !(self.global_prompt.contains(&self.scene_token) && self.global_prompt.contains(&self.object_token)) {
            return bad("global prompt must contain both special tokens");
        }
        if !self.local_prompt.contains(&self.object_token) || self.local_prompt.contains(&self.scene_token) {
            return bad("local prompt must contain the object token and not the scene token");
        }
        if !self.reference_prompt.contains(&self.object_token) {
            return bad("reference prompt must contain the object token");
        }
        if !self.global_prompt.contains(&self.object_keyword) {
            return bad("object keyword must appear in the global prompt");
        }
        Ok(())
    }

    pub fn text(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::Global => &self.global_prompt,
            PromptKind::Local => &self.local_prompt,
            PromptKind::Reference => &self.reference_prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub id: u64,
    pub kind: RequestKind,
    pub prompt_kind: PromptKind,
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
    /// Requested noise level; for SDS the provider samples one when unset.
    pub noise_level: Option<f64>,
    pub image: RgbImage,
    /// Word whose attention map is requested.
    pub keyword: Option<String>,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if (self.image.width, self.image.height) != (self.intrinsics.width, self.intrinsics.height) {
            return Err(GuidanceError::BadRequest("image size does not match intrinsics".into()));
        }
        if !self.image.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(GuidanceError::BadRequest("image values must lie in [0, 1]".into()));
        }
        if let Some(t) = self.noise_level {
            if !(t > 0.0 && t < 1.0) {
                return Err(GuidanceError::BadRequest(format!("noise level {t} outside (0, 1)")));
            }
        }
        match self.kind {
            RequestKind::Sds if self.prompt_kind == PromptKind::Reference => {
                Err(GuidanceError::BadRequest("sds needs a global or local prompt".into()))
            }
            RequestKind::Attention if self.keyword.as_deref().is_none_or(str::is_empty) => {
                Err(GuidanceError::Keyword("missing keyword".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuidancePayload {
    PixelGradient(RgbImage),
    Denoised(RgbImage),
    Attention(AttentionMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub id: u64,
    pub payload: GuidancePayload,
    /// Noise level the provider actually used.
    pub t_used: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GuidanceError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport {
        message: String,
        attempts: u32,
        retryable: bool,
    },
    #[error("provider returned {status} {code}: {message}")]
    Remote {
        status: u16,
        code: String,
        message: String,
    },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("keyword cannot be tokenized: {0}")]
    Keyword(String),
    #[error("invalid response: {0}")]
    Validation(String),
    #[error("provider failure: {0}")]
    Provider(String),
}

impl GuidanceError {
    /// Wire error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Transport { .. } => "transport",
            Self::Remote { .. } => "remote",
            Self::BadRequest(_) => "bad_request",
            Self::Keyword(_) => "bad_keyword",
            Self::Validation(_) => "invalid_payload",
            Self::Provider(_) => "provider_error",
        }
    }
}

fn check_response(req: &GuidanceRequest, resp: &GuidanceResponse) -> Result<(), GuidanceError> {
    if resp.id != req.id {
        return Err(GuidanceError::Validation(format!(
            "response id {} does not match request {}",
            resp.id, req.id
        )));
    }
    let same_shape = |img: &RgbImage| (img.width, img.height) == (req.image.width, req.image.height);
    match (&resp.payload, req.kind) {
        (GuidancePayload::PixelGradient(img), RequestKind::Sds)
        | (GuidancePayload::Denoised(img), RequestKind::Denoise) => {
            if !same_shape(img) {
                return Err(GuidanceError::Validation("payload shape differs from request image".into()));
            }
            if !img.is_finite() {
                return Err(GuidanceError::Validation("non-finite payload".into()));
            }
        }
        (GuidancePayload::Attention(map), RequestKind::Attention) => {
            if !map.values().data.iter().all(|v| v.is_finite()) {
                return Err(GuidanceError::Validation("non-finite payload".into()));
            }
        }
        _ => return Err(GuidanceError::Validation("payload kind does not match request".into())),
    }
    Ok(())
}

/// Source of diffusion guidance. Implementations must be safe to call from
/// several threads at once.
pub trait GuidanceProvider: Send + Sync {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;

    /// Validated request/response round trip.
    fn call(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let resp = self.guide(request)?;
        check_response(request, &resp)?;
        Ok(resp)
    }

    /// Pixel-space SDS gradient for `image` under the global or local prompt.
    fn sds_gradient(
        &self,
        id: u64,
        image: &RgbImage,
        pose: &CameraPose,
        intrinsics: &Intrinsics,
        prompt_kind: PromptKind,
    ) -> Result<(RgbImage, Option<f64>), GuidanceError> {
        let req = GuidanceRequest {
            id,
            kind: RequestKind::Sds,
            prompt_kind,
            pose: *pose,
            intrinsics: *intrinsics,
            noise_level: None,
            image: image.clone(),
            keyword: None,
        };
        match self.call(&req)? {
            GuidanceResponse {
                payload: GuidancePayload::PixelGradient(g),
                t_used,
                ..
            } => Ok((g, t_used)),
            _ => unreachable!("checked by call"),
        }
    }

    /// SDEdit-style denoising at noise level `t0`.
    fn denoise(
        &self,
        id: u64,
        image: &RgbImage,
        pose: &CameraPose,
        intrinsics: &Intrinsics,
        t0: f64,
        prompt_kind: PromptKind,
    ) -> Result<RgbImage, GuidanceError> {
        let req = GuidanceRequest {
            id,
            kind: RequestKind::Denoise,
            prompt_kind,
            pose: *pose,
            intrinsics: *intrinsics,
            noise_level: Some(t0),
            image: image.clone(),
            keyword: None,
        };
        match self.call(&req)? {
            GuidanceResponse {
                payload: GuidancePayload::Denoised(img),
                ..
            } => Ok(img),
            _ => unreachable!("checked by call"),
        }
    }

    fn attention_map(
        &self,
        id: u64,
        image: &RgbImage,
        pose: &CameraPose,
        intrinsics: &Intrinsics,
        keyword: &str,
    ) -> Result<AttentionMap, GuidanceError> {
        let req = GuidanceRequest {
            id,
            kind: RequestKind::Attention,
            prompt_kind: PromptKind::Global,
            pose: *pose,
            intrinsics: *intrinsics,
            noise_level: None,
            image: image.clone(),
            keyword: Some(keyword.to_string()),
        };
        match self.call(&req)? {
            GuidanceResponse {
                payload: GuidancePayload::Attention(map),
                ..
            } => Ok(map),
            _ => unreachable!("checked by call"),
        }
    }
}

impl<P: GuidanceProvider + ?Sized> GuidanceProvider for std::sync::Arc<P> {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        (**self).guide(request)
    }
}

impl<P: GuidanceProvider + ?Sized> GuidanceProvider for Box<P> {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        (**self).guide(request)
    }
}
