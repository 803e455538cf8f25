//! HTTP render service.
//!
//! | method | path       | response                                       |
//! |--------|------------|------------------------------------------------|
//! | GET    | `/healthz` | `200 ok`                                       |
//! | GET    | `/meta`    | JSON [`Meta`]                                  |
//! | POST   | `/render`  | PNG; body `{"pose": [16 numbers, row-major]}` |
//!
//! `/render` responses carry the sub-scene that served the query in
//! `x-sub-scene` and the server-side render time in milliseconds in
//! `x-render-ms`. Malformed poses get `400`, render failures `500`, both with
//! a plain-text message.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lightslab_core::geometry::Pose;
use lightslab_core::model::SceneModel;
use serde::{Deserialize, Serialize};

pub const SUB_SCENE_HEADER: &str = "x-sub-scene";
pub const RENDER_MS_HEADER: &str = "x-render-ms";

/// Body of `GET /meta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub width: usize,
    pub height: usize,
    pub partition: String,
    pub sub_scenes: usize,
    pub routing_header: String,
    pub timing_header: String,
}

impl Meta {
    pub fn of(scene: &SceneModel) -> Self {
        let (height, width) = scene.output_shape();
        Self {
            width,
            height,
            partition: scene.partition.kind().to_string(),
            sub_scenes: scene.partition.sub_scene_count(),
            routing_header: SUB_SCENE_HEADER.to_string(),
            timing_header: RENDER_MS_HEADER.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct RenderRequest {
    pose: Vec<f64>,
}

/// Parses a `/render` body into a pose.
pub fn parse_pose_request(body: &[u8]) -> Result<Pose, String> {
    let req: RenderRequest = serde_json::from_slice(body).map_err(|e| format!("malformed request body: {e}"))?;
    Pose::from_row_major(&req.pose).map_err(|e| e.to_string())
}

/// Router over an immutable scene; handlers share it without locking.
pub fn router(scene: Arc<SceneModel>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/meta", get(meta))
        .route("/render", post(render))
        .with_state(scene)
}

async fn meta(State(scene): State<Arc<SceneModel>>) -> Json<Meta> {
    Json(Meta::of(&scene))
}

fn text(status: StatusCode, message: String) -> Response {
    (status, message).into_response()
}

async fn render(State(scene): State<Arc<SceneModel>>, body: Bytes) -> Response {
    let pose = match parse_pose_request(&body) {
        Ok(p) => p,
        Err(msg) => return text(StatusCode::BAD_REQUEST, msg),
    };
    let job = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let (id, image) = scene.render_routed(&pose)?;
        let png = image.encode_png()?;
        Ok::<_, lightslab_core::Error>((id, png, start.elapsed()))
    });
    match job.await {
        Ok(Ok((id, png, elapsed))) => {
            let ms = format!("{:.3}", elapsed.as_secs_f64() * 1e3);
            let mut resp = png.into_response();
            let headers = resp.headers_mut();
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
            headers.insert(HeaderName::from_static(SUB_SCENE_HEADER), HeaderValue::from(id));
            headers.insert(
                HeaderName::from_static(RENDER_MS_HEADER),
                HeaderValue::from_str(&ms).expect("formatted number is a valid header"),
            );
            resp
        }
        Ok(Err(e)) => {
            log::warn!("render failed: {e}");
            text(StatusCode::INTERNAL_SERVER_ERROR, format!("render failed: {e}"))
        }
        Err(e) => text(StatusCode::INTERNAL_SERVER_ERROR, format!("render task failed: {e}")),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(scene: SceneModel, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(scene)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
