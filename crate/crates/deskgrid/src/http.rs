//! JSON status and steering endpoints served next to the controller.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use deskgrid_core::cluster::{ClusterError, Controller, Transport};
use parking_lot::Mutex;
use serde_json::{json, Value};
use tokio::sync::oneshot;

struct Api<T> {
    controller: Arc<Controller<T>>,
    /// old session → reply of its reset, so a repeated reset is answered identically.
    resets: Mutex<HashMap<String, Value>>,
}

type Shared<T> = Arc<Api<T>>;

struct HttpError(ClusterError);

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ClusterError::UnknownSession(_) | ClusterError::UnknownWorker(_) => StatusCode::NOT_FOUND,
            ClusterError::SessionLost(_) | ClusterError::EpisodeFinished(_) => StatusCode::CONFLICT,
            ClusterError::NoCapacity | ClusterError::Unavailable(_) | ClusterError::Timeout => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.code(), "message": self.0.to_string() }))).into_response()
    }
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> R {
    tokio::task::spawn_blocking(f).await.expect("handler panicked")
}

async fn status<T: Transport + 'static>(State(api): State<Shared<T>>) -> Response {
    Json(blocking(move || api.controller.snapshot_status()).await).into_response()
}

async fn metrics<T: Transport + 'static>(State(api): State<Shared<T>>) -> Response {
    Json(api.controller.metrics()).into_response()
}

async fn reset<T: Transport + 'static>(State(api): State<Shared<T>>, Path(session): Path<String>) -> Result<Json<Value>, HttpError> {
    blocking(move || {
        let mut resets = api.resets.lock();
        if let Some(done) = resets.get(&session) {
            return Ok(Json(done.clone()));
        }
        let a = api.controller.reset_session(&session).map_err(HttpError)?;
        let body = json!({
            "previous": session,
            "session_id": a.session_id,
            "slot_id": a.slot_id,
            "worker_id": a.worker_id,
            "observation": a.observation,
        });
        resets.insert(session, body.clone());
        Ok(Json(body))
    })
    .await
}

async fn pause<T: Transport + 'static>(State(api): State<Shared<T>>) -> Json<Value> {
    api.controller.pause();
    Json(json!({ "paused": true }))
}

async fn resume<T: Transport + 'static>(State(api): State<Shared<T>>) -> Json<Value> {
    api.controller.resume();
    Json(json!({ "paused": false }))
}

async fn drain<T: Transport + 'static>(State(api): State<Shared<T>>, Path(id): Path<String>) -> Result<Json<Value>, HttpError> {
    blocking(move || api.controller.drain_worker(&id).map(|_| Json(json!({ "draining": id }))).map_err(HttpError)).await
}

pub fn router<T: Transport + 'static>(controller: Arc<Controller<T>>) -> Router {
    let api = Arc::new(Api { controller, resets: Mutex::new(HashMap::new()) });
    Router::new()
        .route("/status", get(status::<T>))
        .route("/metrics", get(metrics::<T>))
        .route("/env/{session}/reset", post(reset::<T>))
        .route("/train/pause", post(pause::<T>))
        .route("/train/resume", post(resume::<T>))
        .route("/worker/{id}/drain", post(drain::<T>))
        .with_state(api)
}

/// HTTP server on its own runtime thread.
pub struct HttpServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn start<T: Transport + 'static>(bind: &str, controller: Arc<Controller<T>>) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(controller);
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
                let served = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = served.await {
                    tracing::error!("http server failed: {e}");
                }
            });
        });
        Ok(HttpServer { addr, stop: Some(tx), thread: Some(thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.thread.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
