//! HTTP+JSON adapter over [`dyadtalk::app::App`]. Handlers only translate
//! between HTTP and engine calls; every rule lives in the library.
//!
//! Errors are returned as `{"code": ..., "message": ...}` with these statuses:
//!
//! | code | status |
//! |------|--------|
//! | UnknownDyad, UnknownSession, UnknownGuide, UnknownCard, NotFound | 404 |
//! | WrongState, SessionEnded, DyadBusy | 409 |
//! | InvalidTopic, BadPosition, InvalidProfile, UnrecognizedAudio | 422 |
//! | BadRequest | 400 |
//! | PayloadTooLarge | 413 |
//! | ProviderUnavailable | 503 |
//! | Storage, Internal | 500 |

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dyadtalk::analytics::Period;
use dyadtalk::app::{App, AppError};
use dyadtalk::domain::{ConversationTopic, DyadId, DyadProfile, SessionId};
use dyadtalk::session::{PassSource, SessionError, SessionState};
use dyadtalk::store::StoreError;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(err: SessionError) -> Self {
        let status = match &err {
            SessionError::UnknownDyad(_)
            | SessionError::UnknownSession(_)
            | SessionError::UnknownGuide(_)
            | SessionError::UnknownCard(_) => StatusCode::NOT_FOUND,
            SessionError::WrongState { .. }
            | SessionError::SessionEnded
            | SessionError::DyadBusy(_) => StatusCode::CONFLICT,
            SessionError::InvalidTopic(_)
            | SessionError::BadPosition { .. }
            | SessionError::InvalidProfile(_)
            | SessionError::UnrecognizedAudio => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::ProviderUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            SessionError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, err.code(), err.to_string())
    }
}

impl From<AppError> for ApiError {
    fn from(err: AppError) -> Self {
        match err {
            AppError::Session(e) => e.into(),
            AppError::Store(StoreError::InvalidId(id)) => {
                Self::bad_request(format!("invalid id {id:?}"))
            }
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "code": self.code, "message": self.message }));
        (self.status, body).into_response()
    }
}

/// JSON body extractor whose rejections use the error body shape.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(value)) => Ok(Self(value)),
            Err(rejection) if rejection.status() == StatusCode::PAYLOAD_TOO_LARGE => {
                Err(ApiError::new(
                    StatusCode::PAYLOAD_TOO_LARGE,
                    "PayloadTooLarge",
                    rejection.body_text(),
                ))
            }
            Err(rejection) => Err(ApiError::bad_request(rejection.body_text())),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct ServerState {
    pub app: Arc<App>,
}

/// Runs `f` on the blocking pool; engine calls may wait on providers.
async fn blocking<T, F>(state: &ServerState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&App) -> ApiResult<T> + Send + 'static,
{
    let app = state.app.clone();
    tokio::task::spawn_blocking(move || f(&app))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

pub fn router(app: Arc<App>) -> Router {
    let limit = app.config.server.max_upload_bytes;
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/dyads", get(list_dyads).post(create_dyad))
        .route("/dyads/{dyad_id}", get(get_dyad).put(update_dyad))
        .route("/dyads/{dyad_id}/images", post(upload_image))
        .route("/dyads/{dyad_id}/transcript", get(transcript))
        .route("/sessions", get(list_sessions).post(start_session))
        .route("/sessions/{session_id}", get(get_session))
        .route("/sessions/{session_id}/log", get(session_log))
        .route("/sessions/{session_id}/utterance", post(submit_text))
        .route("/sessions/{session_id}/audio", post(submit_audio))
        .route("/sessions/{session_id}/reveal", post(reveal))
        .route("/sessions/{session_id}/pass", post(pass_turn))
        .route("/sessions/{session_id}/select", post(select))
        .route("/sessions/{session_id}/deselect", post(deselect))
        .route("/sessions/{session_id}/refresh", post(refresh))
        .route("/sessions/{session_id}/end", post(end))
        .route("/reports/usage", get(report))
        .route("/assets/{asset_id}", get(asset))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(ServerState { app })
}

/// Profiles may omit `locale_pair`; the service default is used then.
fn profile_from(app: &App, mut body: Value) -> ApiResult<DyadProfile> {
    if let Some(map) = body.as_object_mut() {
        if !map.contains_key("locale_pair") {
            let locales = serde_json::to_value(app.config.locale_pair())
                .map_err(|e| ApiError::internal(e.to_string()))?;
            map.insert("locale_pair".into(), locales);
        }
    }
    serde_json::from_value(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn list_dyads(State(state): State<ServerState>) -> ApiResult<Json<Vec<DyadProfile>>> {
    blocking(&state, |app| Ok(Json(app.engine.dyads()))).await
}

async fn create_dyad(
    State(state): State<ServerState>,
    ApiJson(body): ApiJson<Value>,
) -> ApiResult<(StatusCode, Json<DyadProfile>)> {
    blocking(&state, move |app| {
        let profile = profile_from(app, body)?;
        Ok((StatusCode::CREATED, Json(app.engine.upsert_dyad(profile)?)))
    })
    .await
}

async fn get_dyad(
    State(state): State<ServerState>,
    Path(dyad_id): Path<String>,
) -> ApiResult<Json<DyadProfile>> {
    blocking(&state, move |app| {
        Ok(Json(app.engine.dyad(&DyadId::new(dyad_id))?))
    })
    .await
}

async fn update_dyad(
    State(state): State<ServerState>,
    Path(dyad_id): Path<String>,
    ApiJson(body): ApiJson<Value>,
) -> ApiResult<Json<DyadProfile>> {
    blocking(&state, move |app| {
        let profile = profile_from(app, body)?;
        if profile.dyad_id.as_str() != dyad_id {
            return Err(ApiError::bad_request(
                "dyad_id in the body differs from the path",
            ));
        }
        Ok(Json(app.engine.upsert_dyad(profile)?))
    })
    .await
}

/// Collects multipart fields as (name, bytes).
async fn read_multipart(mut multipart: Multipart) -> ApiResult<Vec<(String, Bytes)>> {
    let mut fields = Vec::new();
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(field)) => field,
            Ok(None) => break,
            Err(e) => return Err(multipart_error(e.status(), e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| multipart_error(e.status(), e.body_text()))?;
        fields.push((name, bytes));
    }
    Ok(fields)
}

fn multipart_error(status: StatusCode, message: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "PayloadTooLarge", message)
    } else {
        ApiError::bad_request(message)
    }
}

fn take_field(fields: &mut Vec<(String, Bytes)>, name: &str) -> ApiResult<Bytes> {
    let at = fields
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| ApiError::bad_request(format!("missing multipart field {name:?}")))?;
    Ok(fields.remove(at).1)
}

#[derive(Serialize)]
struct ImageUploaded {
    asset_id: String,
    label: String,
    profile: DyadProfile,
}

async fn upload_image(
    State(state): State<ServerState>,
    Path(dyad_id): Path<String>,
    multipart: Multipart,
) -> ApiResult<(StatusCode, Json<ImageUploaded>)> {
    let mut fields = read_multipart(multipart).await?;
    let label = take_field(&mut fields, "label")?;
    let label = String::from_utf8(label.to_vec())
        .map_err(|_| ApiError::bad_request("label must be UTF-8 text"))?;
    let file = take_field(&mut fields, "file")?;
    blocking(&state, move |app| {
        let (asset_id, profile) =
            app.engine
                .upload_custom_image(&DyadId::new(dyad_id), &label, &file)?;
        Ok((
            StatusCode::CREATED,
            Json(ImageUploaded {
                asset_id,
                label: label.trim().to_string(),
                profile,
            }),
        ))
    })
    .await
}

#[derive(Deserialize)]
struct DateQuery {
    date: NaiveDate,
}

async fn transcript(
    State(state): State<ServerState>,
    Path(dyad_id): Path<String>,
    Query(query): Query<DateQuery>,
) -> ApiResult<Response> {
    blocking(&state, move |app| {
        let text = app.transcript(&DyadId::new(dyad_id), query.date)?;
        Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct SessionFilter {
    dyad_id: Option<String>,
}

async fn list_sessions(
    State(state): State<ServerState>,
    Query(filter): Query<SessionFilter>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let sessions: Vec<_> = app
            .engine
            .sessions()
            .into_iter()
            .filter(|s| {
                filter
                    .dyad_id
                    .as_deref()
                    .is_none_or(|d| s.dyad_id.as_str() == d)
            })
            .collect();
        Ok(Json(json!(sessions)))
    })
    .await
}

#[derive(Deserialize)]
struct StartRequest {
    dyad_id: DyadId,
    topic: ConversationTopic,
}

async fn start_session(
    State(state): State<ServerState>,
    ApiJson(body): ApiJson<StartRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(&state, move |app| {
        let session = app.engine.start_session(&body.dyad_id, body.topic)?;
        Ok((StatusCode::CREATED, Json(json!(session))))
    })
    .await
}

async fn get_session(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        Ok(Json(json!(app
            .engine
            .session(&SessionId::new(session_id))?)))
    })
    .await
}

async fn session_log(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let id = SessionId::new(session_id);
        app.engine.session(&id)?;
        let events = app.store.read_events(&id).map_err(AppError::from)?;
        Ok(Json(json!(events)))
    })
    .await
}

#[derive(Deserialize)]
struct TextUtterance {
    text: String,
}

async fn submit_text(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
    ApiJson(body): ApiJson<TextUtterance>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let outcome = app
            .engine
            .submit_text(&SessionId::new(session_id), &body.text)?;
        Ok(Json(json!(outcome)))
    })
    .await
}

async fn submit_audio(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
    multipart: Multipart,
) -> ApiResult<Json<Value>> {
    let mut fields = read_multipart(multipart).await?;
    let audio = take_field(&mut fields, "audio")?;
    blocking(&state, move |app| {
        let outcome = app
            .engine
            .submit_audio(&SessionId::new(session_id), &audio)?;
        Ok(Json(json!(outcome)))
    })
    .await
}

#[derive(Deserialize)]
struct RevealRequest {
    guide_id: String,
}

async fn reveal(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
    ApiJson(body): ApiJson<RevealRequest>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let guide = app
            .engine
            .reveal_example(&SessionId::new(session_id), &body.guide_id)?;
        Ok(Json(json!(guide)))
    })
    .await
}

#[derive(Deserialize, Default)]
struct PassRequest {
    #[serde(default)]
    from_state: Option<SessionState>,
    #[serde(default)]
    source: Option<PassSource>,
}

async fn pass_turn(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    // An empty body means "pass from whatever state, via the UI".
    let body: PassRequest = if body.iter().all(u8::is_ascii_whitespace) {
        PassRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    blocking(&state, move |app| {
        let outcome = app.engine.pass_turn(
            &SessionId::new(session_id),
            body.from_state,
            body.source.unwrap_or(PassSource::UiButton),
        )?;
        Ok(Json(json!(outcome)))
    })
    .await
}

#[derive(Deserialize)]
struct SelectRequest {
    card_id: String,
}

async fn select(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
    ApiJson(body): ApiJson<SelectRequest>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let outcome = app
            .engine
            .select_card(&SessionId::new(session_id), &body.card_id)?;
        Ok(Json(json!(outcome)))
    })
    .await
}

#[derive(Deserialize)]
struct DeselectRequest {
    position: usize,
}

async fn deselect(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
    ApiJson(body): ApiJson<DeselectRequest>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let selection = app
            .engine
            .deselect_card(&SessionId::new(session_id), body.position)?;
        Ok(Json(json!({ "selection": selection })))
    })
    .await
}

async fn refresh(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        Ok(Json(json!(app
            .engine
            .refresh_deck(&SessionId::new(session_id))?)))
    })
    .await
}

async fn end(
    State(state): State<ServerState>,
    Path(session_id): Path<String>,
) -> ApiResult<Json<Value>> {
    blocking(&state, move |app| {
        let session = app.engine.end_session(&SessionId::new(session_id))?;
        Ok(Json(json!({ "stars": session.stars, "session": session })))
    })
    .await
}

#[derive(Deserialize)]
struct ReportQuery {
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
}

async fn report(
    State(state): State<ServerState>,
    Query(query): Query<ReportQuery>,
) -> ApiResult<Json<Value>> {
    let period = match (query.from, query.to) {
        (Some(from), Some(to)) if from <= to => Some(Period { from, to }),
        (None, None) => None,
        _ => {
            return Err(ApiError::bad_request(
                "give both from and to, with from <= to",
            ))
        }
    };
    blocking(&state, move |app| Ok(Json(json!(app.report(period, &[])?)))).await
}

async fn asset(
    State(state): State<ServerState>,
    Path(asset_id): Path<String>,
) -> ApiResult<Response> {
    blocking(&state, move |app| {
        match app.store.read_asset(&asset_id).map_err(AppError::from)? {
            Some(bytes) => {
                Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
            }
            None => Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "NotFound",
                format!("no asset {asset_id}"),
            )),
        }
    })
    .await
}
