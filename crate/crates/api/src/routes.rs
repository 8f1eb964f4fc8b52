use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use apolo_discord::verify::{SIGNATURE_HEADER, TIMESTAMP_HEADER};

use crate::auth::{Scope, TokenTable};
use crate::error::ApiError;
use crate::service::{ActionRequest, CancelRequest, OpenSimCase, SatisfactionRequest, Service, SimCommunityRequest, API_VERSION};

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    tokens: Arc<TokenTable>,
}

type Q = Query<BTreeMap<String, String>>;

/// Runs a blocking service call off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ApiError> + Send + 'static,
{
    let service = state.service.clone();
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError::Internal(format!("handler panicked: {e}")))?
}

fn ok<T: Serialize>(value: T) -> Response {
    Json(value).into_response()
}

pub fn router(service: Arc<Service>, tokens: TokenTable) -> Router {
    let state = AppState { service, tokens: Arc::new(tokens) };
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/cases", get(list_cases))
        .route("/v1/cases/{id}", get(get_case))
        .route("/v1/cases/{id}/events", get(case_events))
        .route("/v1/cases/{id}/actions", post(case_action))
        .route("/v1/cases/{id}/cancel", post(cancel_case))
        .route("/v1/cases/{id}/satisfaction", post(record_satisfaction))
        .route("/v1/sim/communities", post(create_sim_community))
        .route("/v1/sim/cases", post(open_sim_case))
        .route("/v1/metrics/funnel", get(metrics_funnel))
        .route("/v1/metrics/recidivism", get(metrics_recidivism))
        .route("/v1/discord/interactions", post(discord_interaction))
        .with_state(state)
}

async fn healthz() -> Response {
    ok(json!({ "status": "ok", "version": API_VERSION }))
}

async fn list_cases(State(st): State<AppState>, headers: HeaderMap, Query(q): Q) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Read)?;
    blocking(&st, move |s| s.list(&q)).await.map(ok)
}

async fn get_case(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Read)?;
    blocking(&st, move |s| s.case(&id)).await.map(ok)
}

async fn case_events(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Read)?;
    blocking(&st, move |s| s.events(&id)).await.map(ok)
}

async fn case_action(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<ActionRequest>,
) -> Result<Response, ApiError> {
    let scope = st.tokens.require(&headers, Scope::Sim)?;
    blocking(&st, move |s| s.action(&id, scope, req)).await.map(ok)
}

async fn cancel_case(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<CancelRequest>,
) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Moderate)?;
    blocking(&st, move |s| s.cancel(&id, req)).await.map(ok)
}

async fn record_satisfaction(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<SatisfactionRequest>,
) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Sim)?;
    blocking(&st, move |s| s.satisfaction(&id, req)).await.map(ok)
}

async fn create_sim_community(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<SimCommunityRequest>,
) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Sim)?;
    let created = blocking(&st, move |s| s.create_sim_community(req)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn open_sim_case(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<OpenSimCase>,
) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Sim)?;
    let view = blocking(&st, move |s| s.open_sim_case(req)).await?;
    let body = json!({ "case_id": view.case.case_id, "case_number": view.case.case_number, "case": view });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn metrics_funnel(State(st): State<AppState>, headers: HeaderMap, Query(q): Q) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Read)?;
    blocking(&st, move |s| s.funnel(&q)).await.map(ok)
}

async fn metrics_recidivism(State(st): State<AppState>, headers: HeaderMap, Query(q): Q) -> Result<Response, ApiError> {
    st.tokens.require(&headers, Scope::Read)?;
    blocking(&st, move |s| s.recidivism(&q)).await.map(ok)
}

/// Signed by Discord rather than bearer-authenticated.
async fn discord_interaction(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    if st.service.discord().is_none() {
        return Err(ApiError::NotFound("the Discord binding is not active".into()));
    }
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).unwrap_or("").to_owned();
    let (timestamp, signature) = (header(TIMESTAMP_HEADER), header(SIGNATURE_HEADER));
    let (status, reply) = blocking(&st, move |s| {
        let verifier = s.discord().expect("checked above");
        Ok(apolo_discord::handle_request(verifier, s.mediator(), &timestamp, &signature, &body, s.now()))
    })
    .await?;
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    Ok((status, Json(reply)).into_response())
}
