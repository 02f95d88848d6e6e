//! HTTP routes. Responses speak only of screen positions (middle/right);
//! method names appear in the token-gated export alone.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use bpe_core::pipeline::{write_scores_csv, ScoreRow};

use crate::error::{ReaderError, Result};
use crate::render::{encode_png, slice_rgb};
use crate::store::{Preference, SideScore, Store, StoredRecord};
use crate::study::{Layer, ReaderAssignment, Slot, Study};

pub const TOKEN_HEADER: &str = "x-study-token";

pub const RULE_READER_ID: &str = "reader_id required";
pub const RULE_SCORE_RANGE: &str = "score must be between 1 and 5";
pub const RULE_UNACCEPTABLE_CAP: &str = "unacceptable slice caps score at 2";
pub const RULE_PREFERENCE_ONLY_EQUAL: &str = "preference only when scores equal";
pub const RULE_PREFERENCE_REQUIRED: &str = "preference required when scores equal";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub case_id: String,
    pub reader_id: String,
    pub middle: SideScore,
    pub right: SideScore,
    #[serde(default)]
    pub preference: Option<Preference>,
    /// Filled in by the server when absent.
    #[serde(default)]
    pub timestamp: Option<String>,
}

/// Checks the scoring rules, returning the first one broken.
pub fn validate(s: &Submission) -> std::result::Result<(), &'static str> {
    if s.reader_id.trim().is_empty() {
        return Err(RULE_READER_ID);
    }
    for side in [&s.middle, &s.right] {
        if !(1..=5).contains(&side.score) {
            return Err(RULE_SCORE_RANGE);
        }
        if side.unacceptable_slice && side.score > 2 {
            return Err(RULE_UNACCEPTABLE_CAP);
        }
    }
    match (s.middle.score == s.right.score, s.preference.is_some()) {
        (false, true) => Err(RULE_PREFERENCE_ONLY_EQUAL),
        (true, false) => Err(RULE_PREFERENCE_REQUIRED),
        _ => Ok(()),
    }
}

pub struct AppState {
    pub study: Study,
    pub store: Store,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/cases", get(list_cases))
        .route("/api/case/{id}/slice/{z}", get(get_slice))
        .route("/api/score", post(submit_score))
        .route("/api/export", get(export_scores))
        .with_state(state)
}

fn json_error(status: StatusCode, msg: &str) -> Response {
    (status, Json(serde_json::json!({ "error": msg }))).into_response()
}

impl IntoResponse for ReaderError {
    fn into_response(self) -> Response {
        match &self {
            ReaderError::UnknownCase(_) | ReaderError::SliceOutOfRange { .. } => {
                json_error(StatusCode::NOT_FOUND, &self.to_string())
            }
            ReaderError::Rule(rule) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(serde_json::json!({ "error": rule, "rule": rule })),
            )
                .into_response(),
            _ => {
                // details may name mask paths, which would unblind
                log::error!("{self}");
                json_error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
            }
        }
    }
}

#[derive(Serialize)]
struct CaseEntry<'a> {
    case_id: &'a str,
    slices: usize,
}

async fn list_cases(State(s): State<Arc<AppState>>) -> Response {
    let cases: Vec<CaseEntry> = s
        .study
        .cases()
        .iter()
        .map(|(id, &slices)| CaseEntry { case_id: id, slices })
        .collect();
    Json(serde_json::json!({ "cases": cases })).into_response()
}

#[derive(Deserialize)]
struct SliceQuery {
    #[serde(default = "original")]
    layer: Layer,
}

fn original() -> Layer {
    Layer::Original
}

fn render(study: &Study, id: &str, z: usize, layer: Layer) -> Result<Vec<u8>> {
    let view = study.view(id)?;
    let a = study.assignment(id)?;
    let mask = match layer {
        Layer::Original => None,
        Layer::Middle => Some(view.mask(a.middle)),
        Layer::Right => Some(view.mask(a.right)),
    };
    let rgb = slice_rgb(&view.volume, view.window, mask, z)?;
    let [nx, ny, _] = view.volume.dims();
    encode_png(nx, ny, &rgb)
}

async fn get_slice(
    State(s): State<Arc<AppState>>,
    Path((id, z)): Path<(String, usize)>,
    Query(q): Query<SliceQuery>,
) -> Response {
    let result = tokio::task::spawn_blocking(move || render(&s.study, &id, z, q.layer)).await;
    match result {
        Ok(Ok(png)) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => {
            log::error!("render task: {e}");
            json_error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

fn now_millis() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
        .to_string()
}

fn store_submission(state: &AppState, sub: Submission) -> Result<StoredRecord> {
    validate(&sub).map_err(ReaderError::Rule)?;
    state.study.assignment(&sub.case_id)?;
    let timestamp = sub.timestamp.clone().unwrap_or_else(now_millis);
    let (reader, case) = (sub.reader_id.clone(), sub.case_id.clone());
    state.store.append(
        |version| StoredRecord {
            record_id: format!("{}:{}:v{version}", sub.reader_id, sub.case_id),
            version,
            case_id: sub.case_id,
            reader_id: sub.reader_id,
            middle: sub.middle,
            right: sub.right,
            preference: sub.preference,
            timestamp,
        },
        &reader,
        &case,
    )
}

async fn submit_score(State(s): State<Arc<AppState>>, Json(sub): Json<Submission>) -> Response {
    // the record is synced to disk before the acknowledgement is sent
    match tokio::task::spawn_blocking(move || store_submission(&s, sub)).await {
        Ok(Ok(r)) => (
            StatusCode::CREATED,
            Json(serde_json::json!({ "record_id": r.record_id, "version": r.version })),
        )
            .into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => {
            log::error!("store task: {e}");
            json_error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

/// Resolves a stored record to method terms.
pub fn unblind(study: &Study, a: ReaderAssignment, r: &StoredRecord) -> ScoreRow {
    let by_slot = |slot: Slot| if a.middle == slot { r.middle } else { r.right };
    let (sa, sb) = (by_slot(Slot::A), by_slot(Slot::B));
    let preferred_method = match r.preference {
        None => String::new(),
        Some(Preference::None) => "none".into(),
        Some(Preference::Middle) => study.method_name(a.middle),
        Some(Preference::Right) => study.method_name(a.right),
    };
    ScoreRow {
        case_id: r.case_id.clone(),
        reader_id: r.reader_id.clone(),
        version: r.version,
        method_a: study.method_name(Slot::A),
        method_b: study.method_name(Slot::B),
        score_a: sa.score,
        score_b: sb.score,
        unacceptable_a: sa.unacceptable_slice,
        unacceptable_b: sb.unacceptable_slice,
        preferred_method,
        submitted_at: r.timestamp.clone(),
    }
}

pub fn export_csv(state: &AppState) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for r in state.store.latest()? {
        let a = state.study.assignment(&r.case_id)?;
        rows.push(unblind(&state.study, a, &r));
    }
    let mut buf = Vec::new();
    write_scores_csv(&rows, &mut buf)?;
    Ok(buf)
}

async fn export_scores(State(s): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let token = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
    if token != Some(s.study.config.token.as_str()) {
        return json_error(StatusCode::UNAUTHORIZED, "missing or wrong study token");
    }
    match tokio::task::spawn_blocking(move || export_csv(&s)).await {
        Ok(Ok(csv)) => ([(header::CONTENT_TYPE, "text/csv")], csv).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => {
            log::error!("export task: {e}");
            json_error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}
