//! HTTP+JSON routes over [`Service`].
//!
//! | Method | Path | Body / query |
//! |---|---|---|
//! | POST | `/v1/session` | `{session_id?, device?, created_at?}` |
//! | GET | `/v1/session/{id}` | |
//! | POST | `/v1/session/{id}/turn` | `{text, client_time?, device?}` |
//! | POST | `/v1/session/{id}/order/{oid}/{confirm\|cancel}` | `{client_time?}` (optional) |
//! | POST | `/v1/admin/reload-config` | |
//! | GET | `/v1/export` | `?from=&to=` |
//! | GET | `/v1/health` | |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use ridechat_core::timefmt;

use crate::service::{CreateSession, Service, ServiceError, TurnRequest};
use crate::store::ActionKind;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Busy(_) | ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Gateway { .. }
            | ServiceError::Store(_)
            | ServiceError::Config(_)
            | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let ServiceError::Gateway { reply, .. } = &self {
            body["reply"] = serde_json::to_value(reply).unwrap_or_default();
        }
        if status.is_server_error() {
            tracing::warn!(%status, error = %self, "request failed");
        }
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<Service>>;

/// Runs blocking service work off the async workers. Model calls can block
/// for as long as the gateway timeout.
async fn blocking<T, F>(svc: Arc<Service>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

fn parse_json<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ServiceError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("bad JSON body: {e}")))
}

async fn create_session(State(svc): Shared, body: Bytes) -> Result<Response, ServiceError> {
    let req: CreateSession = parse_json(&body)?;
    let session = blocking(svc, move |s| s.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_session(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let session = blocking(svc, move |s| s.session(&id)).await?;
    Ok(Json(session).into_response())
}

async fn turn(State(svc): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let req: TurnRequest = parse_json(&body)?;
    let reply = blocking(svc, move |s| s.handle_turn(&id, &req)).await?;
    Ok(Json(reply).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ActionBody {
    #[serde(default)]
    client_time: Option<String>,
}

async fn order_action(
    State(svc): Shared,
    Path((id, oid, action)): Path<(String, String, String)>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let kind =
        ActionKind::parse(&action).ok_or_else(|| ServiceError::NotFound(format!("no order action `{action}`")))?;
    let req: ActionBody = parse_json(&body)?;
    let order = blocking(svc, move |s| s.order_action(&id, &oid, kind, req.client_time.as_deref())).await?;
    Ok(Json(order).into_response())
}

async fn reload(State(svc): Shared) -> Result<Response, ServiceError> {
    let summary = blocking(svc, |s| s.reload()).await?;
    Ok(Json(summary).into_response())
}

#[derive(Debug, Deserialize)]
struct Range {
    from: String,
    to: String,
}

async fn export(State(svc): Shared, Query(r): Query<Range>) -> Result<Response, ServiceError> {
    let parse = |t: &str| {
        timefmt::parse(t)
            .ok_or_else(|| ServiceError::BadRequest(format!("bad time `{t}`, expected {}", timefmt::FORMAT)))
    };
    let (from, to) = (parse(&r.from)?, parse(&r.to)?);
    let sets = blocking(svc, move |s| s.export(from, to)).await?;
    Ok(Json(json!({ "counts": sets.counts(), "records": sets.records })).into_response())
}

async fn health(State(svc): Shared) -> Json<serde_json::Value> {
    Json(json!({ "ok": true, "sessions": svc.store().ids().len(), "turns": svc.store().turn_count() }))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/session", post(create_session))
        .route("/v1/session/{id}", get(get_session))
        .route("/v1/session/{id}/turn", post(turn))
        .route("/v1/session/{id}/order/{oid}/{action}", post(order_action))
        .route("/v1/admin/reload-config", post(reload))
        .route("/v1/export", get(export))
        .route("/v1/health", get(health))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
