//! HTTP+JSON API over a [`SessionStore`].

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use infarct_core::metrics::{sens_spec_ci, SensSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use crate::analysis::{
    aggregate_proportions, patient_contingency_from_ratings, preference_summary, rater_agreement,
    AgreementKind, PatientContingency, PreferenceSummary, Proportions,
};
use crate::events::{EventDraft, Payload};
use crate::export::export_session;
use crate::model::{Arm, ComparisonChoice, RatingCategory, TargetClass};
use crate::render::OverlayStyle;
use crate::session::{CreateSession, SessionStore};
use crate::RatingError;

pub const ADMIN_HEADER: &str = "x-admin-token";

pub struct AppState {
    pub store: SessionStore,
    pub admin_token: String,
    pub style: OverlayStyle,
}

impl AppState {
    pub fn new(store: SessionStore, admin_token: impl Into<String>) -> Self {
        AppState {
            store,
            admin_token: admin_token.into(),
            style: OverlayStyle::default(),
        }
    }
}

impl IntoResponse for RatingError {
    fn into_response(self) -> Response {
        let status = match &self {
            RatingError::Invalid(_) | RatingError::Incomplete(_) => StatusCode::BAD_REQUEST,
            RatingError::NotFound(_) => StatusCode::NOT_FOUND,
            RatingError::Conflict(_) => StatusCode::CONFLICT,
            RatingError::Unauthorized => StatusCode::UNAUTHORIZED,
            RatingError::Corrupt(_) | RatingError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, RatingError>;
type Shared = State<Arc<AppState>>;

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), RatingError> {
    match headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok()) {
        Some(t) if t == state.admin_token => Ok(()),
        _ => Err(RatingError::Unauthorized),
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, RatingError> {
    serde_json::from_slice(body).map_err(|e| RatingError::Invalid(e.to_string()))
}

fn class_param(q: &HashMap<String, String>) -> Result<TargetClass, RatingError> {
    let name = q
        .get("class")
        .ok_or_else(|| RatingError::Invalid("missing query parameter class".into()))?;
    TargetClass::from_name(name)
        .ok_or_else(|| RatingError::Invalid(format!("unknown class {name:?}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingBody {
    rater_id: String,
    patient_id: String,
    slice_index: usize,
    target_class: TargetClass,
    arm: Arm,
    category: RatingCategory,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComparisonBody {
    rater_id: String,
    patient_id: String,
    slice_index: usize,
    target_class: TargetClass,
    choice: ComparisonChoice,
}

#[derive(Debug, Serialize)]
struct Summary {
    proportions: Proportions,
    preference: PreferenceSummary,
    contingency: Option<PatientContingency>,
    /// Why the detection table is missing.
    contingency_error: Option<String>,
    sens_spec: Option<HashMap<&'static str, SensSpec>>,
}

async fn create_session(
    State(s): Shared,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, RatingError> {
    require_admin(&s, &headers)?;
    let req: CreateSession = parse_body(&body)?;
    let session = s.store.create(req)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": session.plan.session_id })),
    )
        .into_response())
}

async fn get_task(
    State(s): Shared,
    Path((id, rater, cursor)): Path<(String, String, usize)>,
) -> ApiResult<crate::session::TaskPayload> {
    Ok(Json(s.store.get(&id)?.task(&rater, cursor, &s.style)?))
}

async fn post_rating(
    State(s): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::events::RatingEvent> {
    let b: RatingBody = parse_body(&body)?;
    let session = s.store.get(&id)?;
    Ok(Json(session.submit(EventDraft {
        rater_id: b.rater_id,
        patient_id: b.patient_id,
        slice_index: b.slice_index,
        target_class: b.target_class,
        arm: Some(b.arm),
        payload: Payload::Category(b.category),
    })?))
}

async fn post_comparison(
    State(s): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<crate::events::RatingEvent> {
    let b: ComparisonBody = parse_body(&body)?;
    let session = s.store.get(&id)?;
    Ok(Json(session.submit(EventDraft {
        rater_id: b.rater_id,
        patient_id: b.patient_id,
        slice_index: b.slice_index,
        target_class: b.target_class,
        arm: None,
        payload: Payload::Comparison(b.choice),
    })?))
}

async fn get_progress(
    State(s): Shared,
    Path((id, rater)): Path<(String, String)>,
) -> ApiResult<crate::session::Progress> {
    Ok(Json(s.store.get(&id)?.progress(&rater)?))
}

async fn get_summary(
    State(s): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Summary> {
    require_admin(&s, &headers)?;
    let class = class_param(&q)?;
    let session = s.store.get(&id)?;
    let events = session.log.snapshot();
    let (contingency, contingency_error) =
        match patient_contingency_from_ratings(&session.plan, &events, class) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let sens_spec = contingency.as_ref().and_then(|c| {
        Some(HashMap::from([
            ("manual", sens_spec_ci(&c.manual, 0.95).ok()?),
            ("automatic", sens_spec_ci(&c.automatic, 0.95).ok()?),
        ]))
    });
    Ok(Json(Summary {
        proportions: aggregate_proportions(&session.plan, &events, class),
        preference: preference_summary(&session.plan, &events, class),
        contingency,
        contingency_error,
        sens_spec,
    }))
}

async fn get_agreement(
    State(s): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<crate::analysis::Agreement> {
    require_admin(&s, &headers)?;
    let class = class_param(&q)?;
    let kind = match q.get("kind") {
        None => AgreementKind::Categories,
        Some(k) => AgreementKind::from_name(k)
            .ok_or_else(|| RatingError::Invalid(format!("unknown kind {k:?}")))?,
    };
    let session = s.store.get(&id)?;
    Ok(Json(rater_agreement(
        &session.plan,
        &session.log.snapshot(),
        class,
        kind,
    )?))
}

async fn get_export(
    State(s): Shared,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<crate::export::ExportBundle> {
    require_admin(&s, &headers)?;
    let session = s.store.get(&id)?;
    Ok(Json(export_session(
        &session.plan,
        &session.log.snapshot(),
    )?))
}

async fn get_history(
    State(s): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> ApiResult<Vec<crate::events::RatingEvent>> {
    require_admin(&s, &headers)?;
    let session = s.store.get(&id)?;
    let events = session.log.snapshot();
    Ok(Json(
        events
            .iter()
            .filter(|e| q.get("rater").is_none_or(|r| &e.rater_id == r))
            .cloned()
            .collect(),
    ))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route(
            "/sessions/{id}/raters/{rater}/tasks/{cursor}",
            get(get_task),
        )
        .route("/sessions/{id}/ratings", post(post_rating))
        .route("/sessions/{id}/comparisons", post(post_comparison))
        .route("/sessions/{id}/progress/{rater}", get(get_progress))
        .route("/sessions/{id}/summary", get(get_summary))
        .route("/sessions/{id}/agreement", get(get_agreement))
        .route("/sessions/{id}/export", get(get_export))
        .route("/sessions/{id}/history", get(get_history))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
