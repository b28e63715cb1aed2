use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::wire::{WireError, WireRequest, WireResponse, GUIDANCE_PATH};
use super::{GuidanceError, GuidanceProvider};

type SharedProvider = Arc<dyn GuidanceProvider>;

fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(WireError {
            code: code.to_string(),
            message: message.into(),
        }),
    )
        .into_response()
}

fn guidance_error_response(err: &GuidanceError) -> Response {
    let status = match err {
        GuidanceError::BadRequest(_) | GuidanceError::Keyword(_) | GuidanceError::Validation(_) => {
            StatusCode::BAD_REQUEST
        }
        GuidanceError::Provider(_) => StatusCode::INTERNAL_SERVER_ERROR,
        GuidanceError::Transport { .. } | GuidanceError::Remote { .. } => StatusCode::BAD_GATEWAY,
    };
    error_response(status, err.code(), err.to_string())
}

async fn handle(State(provider): State<SharedProvider>, body: Bytes) -> Response {
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("sds" | "denoise" | "attention") => {}
        Some(other) => {
            return error_response(StatusCode::BAD_REQUEST, "bad_kind", format!("unknown kind {other:?}"))
        }
        None => return error_response(StatusCode::BAD_REQUEST, "bad_kind", "missing kind"),
    }
    let wire: WireRequest = match serde_json::from_value(value) {
        Ok(w) => w,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    let request = match wire.into_request() {
        Ok(r) => r,
        Err(e) => return guidance_error_response(&e),
    };
    let kind = request.kind;
    let result = tokio::task::spawn_blocking(move || provider.call(&request)).await;
    match result {
        Ok(Ok(resp)) => Json(WireResponse::from_response(kind, &resp)).into_response(),
        Ok(Err(e)) => guidance_error_response(&e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "provider_error", e.to_string()),
    }
}

/// Routes serving `provider` under the guidance endpoint.
pub fn router(provider: SharedProvider) -> Router {
    Router::new()
        .route(GUIDANCE_PATH, post(handle))
        .with_state(provider)
}

/// A guidance server running on its own thread. Dropping the handle shuts
/// it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn wait(mut self) -> std::io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `provider` until the
/// returned handle is shut down or dropped.
pub fn spawn_server(provider: SharedProvider, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("guidance-server".into())
        .spawn(move || -> std::io::Result<()> {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, router(provider))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
