use std::time::Duration;

use super::wire::{WireError, WireRequest, WireResponse, GUIDANCE_PATH};
use super::{GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse};

/// HTTP client for a remote guidance service.
///
/// Every call is bounded by the configured timeout. Connection failures,
/// timeouts and 5xx responses are retried with linear backoff; 4xx
/// responses are returned immediately.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    max_attempts: u32,
    backoff: Duration,
}

impl RemoteProvider {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, GuidanceError> {
        let parsed = reqwest::Url::parse(base_url)
            .map_err(|e| GuidanceError::BadRequest(format!("invalid provider url {base_url:?}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(GuidanceError::BadRequest(format!("unsupported scheme in {base_url:?}")));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GuidanceError::Transport {
                message: e.to_string(),
                attempts: 0,
                retryable: false,
            })?;
        Ok(Self {
            client,
            endpoint: format!("{}{}", base_url.trim_end_matches('/'), GUIDANCE_PATH),
            max_attempts: 3,
            backoff: Duration::from_millis(200),
        })
    }

    pub fn with_retries(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &WireRequest) -> Result<WireResponse, (GuidanceError, bool)> {
        let transport = |e: reqwest::Error| {
            (
                GuidanceError::Transport {
                    message: e.to_string(),
                    attempts: 0,
                    retryable: true,
                },
                true,
            )
        };
        let resp = self.client.post(&self.endpoint).json(body).send().map_err(transport)?;
        let status = resp.status();
        if status.is_success() {
            return resp.json::<WireResponse>().map_err(|e| {
                (GuidanceError::Validation(format!("malformed response body: {e}")), false)
            });
        }
        let retry = status.is_server_error();
        let code = status.as_u16();
        let err = match resp.json::<WireError>() {
            Ok(w) => GuidanceError::Remote {
                status: code,
                code: w.code,
                message: w.message,
            },
            Err(_) => GuidanceError::Remote {
                status: code,
                code: "unknown".into(),
                message: status.to_string(),
            },
        };
        Err((err, retry))
    }
}

impl GuidanceProvider for RemoteProvider {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let body = WireRequest::from_request(request);
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            match self.attempt(&body) {
                Ok(wire) => {
                    if wire.kind != request.kind {
                        return Err(GuidanceError::Validation("response kind differs from request".into()));
                    }
                    return wire.into_response();
                }
                Err((err, retryable)) => {
                    if !retryable {
                        return Err(err);
                    }
                    log::warn!("guidance attempt {attempt}/{} failed: {err}", self.max_attempts);
                    last = Some(err);
                    if attempt < self.max_attempts {
                        std::thread::sleep(self.backoff * attempt);
                    }
                }
            }
        }
        Err(match last {
            Some(GuidanceError::Transport { message, .. }) => GuidanceError::Transport {
                message,
                attempts: self.max_attempts,
                retryable: true,
            },
            Some(other) => other,
            None => GuidanceError::Transport {
                message: "no attempts made".into(),
                attempts: 0,
                retryable: true,
            },
        })
    }
}
