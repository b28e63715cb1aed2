//! JSON envelope of `POST /v1/guidance`.
//!
//! Images travel as base64 of little-endian `f32` values in row-major
//! height × width × channels order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GuidanceError, GuidancePayload, GuidanceRequest, GuidanceResponse, PromptKind, RequestKind};
use crate::camera::{Intrinsics, PoseRecord};
use crate::image::{RgbImage, ScalarImage};
use crate::losses::AttentionMap;

pub const GUIDANCE_PATH: &str = "/v1/guidance";

pub fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str, expected_len: usize) -> Result<Vec<f64>, GuidanceError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| GuidanceError::BadRequest(format!("invalid base64: {e}")))?;
    if bytes.len() != expected_len * 4 {
        return Err(GuidanceError::BadRequest(format!(
            "expected {} float32 values, got {} bytes",
            expected_len,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub request_id: u64,
    pub kind: RequestKind,
    pub prompt_kind: PromptKind,
    pub pose: PoseRecord,
    pub noise_level: Option<f64>,
    pub image: String,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyword: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePayload {
    pub data: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub request_id: u64,
    pub kind: RequestKind,
    pub payload: WirePayload,
    pub t_used: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

impl WireRequest {
    pub fn from_request(req: &GuidanceRequest) -> Self {
        Self {
            request_id: req.id,
            kind: req.kind,
            prompt_kind: req.prompt_kind,
            pose: req.pose.to_record(req.intrinsics),
            noise_level: req.noise_level,
            image: encode_f32(&req.image.data),
            width: req.image.width,
            height: req.image.height,
            keyword: req.keyword.clone(),
        }
    }

    pub fn into_request(self) -> Result<GuidanceRequest, GuidanceError> {
        let pose = self
            .pose
            .pose()
            .map_err(|e| GuidanceError::BadRequest(e.to_string()))?;
        let intrinsics: Intrinsics = self.pose.intrinsics;
        intrinsics
            .validate()
            .map_err(|e| GuidanceError::BadRequest(e.to_string()))?;
        let data = decode_f32(&self.image, self.width * self.height * 3)?;
        Ok(GuidanceRequest {
            id: self.request_id,
            kind: self.kind,
            prompt_kind: self.prompt_kind,
            pose,
            intrinsics,
            noise_level: self.noise_level,
            image: RgbImage {
                width: self.width,
                height: self.height,
                data,
            },
            keyword: self.keyword,
        })
    }
}

impl WireResponse {
    pub fn from_response(kind: RequestKind, resp: &GuidanceResponse) -> Self {
        let payload = match &resp.payload {
            GuidancePayload::PixelGradient(img) | GuidancePayload::Denoised(img) => WirePayload {
                data: encode_f32(&img.data),
                width: img.width,
                height: img.height,
                channels: 3,
            },
            GuidancePayload::Attention(map) => {
                let v = map.values();
                WirePayload {
                    data: encode_f32(&v.data),
                    width: v.width,
                    height: v.height,
                    channels: 1,
                }
            }
        };
        Self {
            request_id: resp.id,
            kind,
            payload,
            t_used: resp.t_used,
            elapsed_ms: resp.elapsed_ms,
        }
    }

    pub fn into_response(self) -> Result<GuidanceResponse, GuidanceError> {
        let p = self.payload;
        let invalid = |m: String| GuidanceError::Validation(m);
        let expected_channels = match self.kind {
            RequestKind::Attention => 1,
            _ => 3,
        };
        if p.channels != expected_channels {
            return Err(invalid(format!("{} channels for a {:?} payload", p.channels, self.kind)));
        }
        let data = decode_f32(&p.data, p.width * p.height * p.channels).map_err(|e| invalid(e.to_string()))?;
        let payload = match self.kind {
            RequestKind::Sds => GuidancePayload::PixelGradient(RgbImage {
                width: p.width,
                height: p.height,
                data,
            }),
            RequestKind::Denoise => GuidancePayload::Denoised(RgbImage {
                width: p.width,
                height: p.height,
                data,
            }),
            RequestKind::Attention => {
                let img = ScalarImage {
                    width: p.width,
                    height: p.height,
                    data,
                };
                GuidancePayload::Attention(AttentionMap::new(img).map_err(|e| invalid(e.to_string()))?)
            }
        };
        Ok(GuidanceResponse {
            id: self.request_id,
            payload,
            t_used: self.t_used,
            elapsed_ms: self.elapsed_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encoding_is_little_endian_f32() {
        let text = encode_f32(&[1.0, -2.5]);
        let bytes = STANDARD.decode(&text).unwrap();
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..], &(-2.5f32).to_le_bytes());
        assert!(decode_f32(&text, 3).is_err());
        assert!(decode_f32("not base64!", 1).is_err());
    }

    #[test]
    fn unknown_kind_does_not_parse() {
        let json = r#"{"request_id":1,"kind":"paint","prompt_kind":"global"}"#;
        assert!(serde_json::from_str::<WireRequest>(json).is_err());
    }

    proptest! {
        #[test]
        fn float_roundtrip_within_f32(values in prop::collection::vec(-4.0..4.0f64, 0..64)) {
            let back = decode_f32(&encode_f32(&values), values.len()).unwrap();
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
            }
        }
    }
}
