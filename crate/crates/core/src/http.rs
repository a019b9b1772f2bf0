//! JSON-over-HTTP interface of the tracing service.
//!
//! | method | path                         | role                   |
//! |--------|------------------------------|------------------------|
//! | POST   | /users                       | none                   |
//! | POST   | /auth/login                  | none                   |
//! | POST   | /reports/tests               | HealthServiceProvider  |
//! | POST   | /reports/citizen             | User                   |
//! | POST   | /reports/locations           | TelecomServiceProvider |
//! | GET    | /tracking-requests           | TelecomServiceProvider |
//! | POST   | /patients/{id}/recovered     | Government             |
//! | POST   | /patients/{id}/confirmed     | Government             |
//! | PUT    | /me/location                 | User                   |
//! | GET    | /me                          | User                   |
//! | GET    | /me/notifications?since=     | User                   |
//! | GET    | /stream                      | User                   |
//! | GET    | /safety?lat=&lon=            | any authenticated      |
//! | GET    | /zones?south=&west=&north=&east= | any authenticated  |
//!
//! 400 validation, 401 bad token, 403 wrong role, 404 unknown entity,
//! 409 duplicate or conflicting state.

use std::convert::Infallible;
use std::marker::PhantomData;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::{Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;

use crate::geo::{BoundingBox, GeoError, GeoPoint};
use crate::ids::{PatientId, UserId};
use crate::service::{ApiCredential, ServiceError, TracingService, ZoneEventSummary};
use crate::store::{Principal, Registration, Role, StoreError, SubjectIdentity, TestResult};

pub type AppState = Arc<TracingService>;

/// Every role-gated endpoint, as `(method, path template, role)`.
pub const ROLE_MATRIX: &[(&str, &str, Role)] = &[
    ("POST", "/reports/tests", Role::HealthServiceProvider),
    ("POST", "/reports/citizen", Role::User),
    ("POST", "/reports/locations", Role::TelecomServiceProvider),
    ("GET", "/tracking-requests", Role::TelecomServiceProvider),
    ("POST", "/patients/{id}/recovered", Role::Government),
    ("POST", "/patients/{id}/confirmed", Role::Government),
    ("PUT", "/me/location", Role::User),
    ("GET", "/me", Role::User),
    ("GET", "/me/notifications", Role::User),
    ("GET", "/stream", Role::User),
];

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use StoreError as S;
        let status = match &e {
            ServiceError::Unauthenticated => StatusCode::UNAUTHORIZED,
            ServiceError::Geo(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownReport(_) => StatusCode::NOT_FOUND,
            ServiceError::Index(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Store(s) => match s {
                S::Forbidden { .. } => StatusCode::FORBIDDEN,
                S::InvalidLogin => StatusCode::UNAUTHORIZED,
                S::DuplicateUsername(_) => StatusCode::CONFLICT,
                S::MalformedNid | S::InvalidBloodGroup(_) | S::Invalid(_) | S::Geo(_) => StatusCode::BAD_REQUEST,
                S::UnknownPatient(_) | S::UnknownUser(_) => StatusCode::NOT_FOUND,
                S::PatientRecovered(_)
                | S::PatientUnverified(_)
                | S::AlreadyVerified(_)
                | S::StaleTimestamp { .. }
                | S::ReportAlreadyProcessed(_) => StatusCode::CONFLICT,
                S::Log(_) | S::Integrity(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, e.to_string())
    }
}

impl From<GeoError> for ApiError {
    fn from(e: GeoError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = self.status.canonical_reason().unwrap_or("error");
        (self.status, Json(json!({ "error": self.message, "status": code }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `Json` whose rejections are reported as 400 with a JSON body.
pub struct ApiJson<T>(pub T);

impl<T, S> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e: JsonRejection| ApiError::bad_request(e.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

impl<T, S> FromRequestParts<S> for ApiQuery<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| ApiQuery(q.0))
            .map_err(|e: QueryRejection| ApiError::bad_request(e.body_text()))
    }
}

fn bearer(parts: &Parts) -> Option<&str> {
    parts
        .headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// Any valid bearer token.
pub struct Authed(pub ApiCredential);

impl FromRequestParts<AppState> for Authed {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(parts).ok_or(ServiceError::Unauthenticated)?;
        Ok(Authed(state.authenticate(token)?))
    }
}

pub trait RoleMarker {
    const ROLE: Role;
}

macro_rules! role_marker {
    ($name:ident, $role:expr) => {
        pub struct $name;
        impl RoleMarker for $name {
            const ROLE: Role = $role;
        }
    };
}

role_marker!(UserRole, Role::User);
role_marker!(HspRole, Role::HealthServiceProvider);
role_marker!(TspRole, Role::TelecomServiceProvider);
role_marker!(GovRole, Role::Government);

/// A valid bearer token whose role is `R::ROLE`; anything else is 403.
pub struct HasRole<R>(pub ApiCredential, PhantomData<R>);

impl<R: RoleMarker> FromRequestParts<AppState> for HasRole<R> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let Authed(cred) = Authed::from_request_parts(parts, state).await?;
        if cred.credential.role != R::ROLE {
            return Err(ServiceError::Store(StoreError::Forbidden {
                required: R::ROLE,
                actual: cred.credential.role,
            })
            .into());
        }
        Ok(HasRole(cred, PhantomData))
    }
}

pub fn router(service: AppState) -> Router {
    Router::new()
        .route("/users", post(register))
        .route("/auth/login", post(login))
        .route("/reports/tests", post(submit_test))
        .route("/reports/citizen", post(submit_citizen))
        .route("/reports/locations", post(submit_location))
        .route("/tracking-requests", get(tracking_requests))
        .route("/patients/{id}/recovered", post(mark_recovered))
        .route("/patients/{id}/confirmed", post(confirm_patient))
        .route("/me", get(me))
        .route("/me/location", put(update_location))
        .route("/me/notifications", get(notifications))
        .route("/stream", get(stream))
        .route("/safety", get(safety))
        .route("/zones", get(zones))
        .with_state(service)
}

async fn register(State(svc): State<AppState>, ApiJson(reg): ApiJson<Registration>) -> ApiResult<Response> {
    let profile = svc.register_user(&reg)?;
    Ok((StatusCode::CREATED, Json(profile)).into_response())
}

#[derive(Deserialize)]
struct LoginBody {
    username: String,
    password: String,
}

#[derive(Serialize)]
struct LoginResponse {
    token: String,
    role: Role,
    principal_id: String,
}

async fn login(State(svc): State<AppState>, ApiJson(body): ApiJson<LoginBody>) -> ApiResult<Json<LoginResponse>> {
    let cred = svc.login(&body.username, &body.password)?;
    Ok(Json(LoginResponse {
        token: cred.token,
        role: cred.credential.role,
        principal_id: cred.credential.principal.to_string(),
    }))
}

#[derive(Deserialize)]
struct TestBody {
    subject: SubjectIdentity,
    result: TestResult,
}

async fn submit_test(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<HspRole>,
    ApiJson(body): ApiJson<TestBody>,
) -> ApiResult<Response> {
    let patient = svc.submit_test_report(&cred.credential, &body.subject, body.result)?;
    let status = if patient.is_some() {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(json!({ "patient": patient }))).into_response())
}

#[derive(Deserialize)]
struct CitizenBody {
    subject: SubjectIdentity,
}

async fn submit_citizen(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<UserRole>,
    ApiJson(body): ApiJson<CitizenBody>,
) -> ApiResult<Response> {
    let patient = svc.submit_citizen_report(&cred.credential, &body.subject)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "patient_id": patient.patient_id, "verified": patient.verified })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct LocationBody {
    patient_id: PatientId,
    lat: f64,
    lon: f64,
    #[serde(default)]
    observed_at: Option<DateTime<Utc>>,
}

async fn submit_location(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<TspRole>,
    ApiJson(body): ApiJson<LocationBody>,
) -> ApiResult<Response> {
    let position = GeoPoint::new_strict(body.lat, body.lon)?;
    let observed_at = body.observed_at.unwrap_or_else(|| svc.now());
    let (report, event) = svc.submit_patient_location(&cred.credential, body.patient_id, position, observed_at)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "report": report, "event": ZoneEventSummary::from(&event) })),
    )
        .into_response())
}

async fn tracking_requests(State(svc): State<AppState>, HasRole(cred, _): HasRole<TspRole>) -> ApiResult<Response> {
    Ok(Json(svc.tracking_requests(&cred.credential)?).into_response())
}

fn patient_path(id: &str) -> ApiResult<PatientId> {
    id.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown patient {id}")))
}

async fn mark_recovered(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<GovRole>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let record = svc.mark_recovered(&cred.credential, patient_path(&id)?)?;
    Ok(Json(record).into_response())
}

async fn confirm_patient(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<GovRole>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let record = svc.confirm_patient(&cred.credential, patient_path(&id)?)?;
    Ok(Json(record).into_response())
}

async fn me(State(svc): State<AppState>, HasRole(cred, _): HasRole<UserRole>) -> ApiResult<Response> {
    Ok(Json(svc.user_profile(&cred.credential)?).into_response())
}

#[derive(Deserialize)]
struct MyLocationBody {
    lat: f64,
    lon: f64,
    #[serde(default)]
    observed_at: Option<DateTime<Utc>>,
}

async fn update_location(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<UserRole>,
    ApiJson(body): ApiJson<MyLocationBody>,
) -> ApiResult<Response> {
    let position = GeoPoint::new_strict(body.lat, body.lon)?;
    let observed_at = body.observed_at.unwrap_or_else(|| svc.now());
    Ok(Json(svc.record_user_location(&cred.credential, position, observed_at)?).into_response())
}

#[derive(Deserialize)]
struct SinceQuery {
    since: Option<DateTime<Utc>>,
}

async fn notifications(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<UserRole>,
    ApiQuery(q): ApiQuery<SinceQuery>,
) -> ApiResult<Response> {
    Ok(Json(svc.fetch_notifications(&cred.credential, q.since)?).into_response())
}

async fn stream(
    State(svc): State<AppState>,
    HasRole(cred, _): HasRole<UserRole>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let user: UserId = match cred.credential.principal {
        Principal::User(id) => id,
        Principal::Operator(id) => return Err(ApiError::bad_request(format!("{id} is not a user"))),
    };
    let events = BroadcastStream::new(svc.subscribe()).filter_map(move |msg| async move {
        match msg {
            Ok(n) if n.user_id == user => Some(Ok(Event::default()
                .event("notification")
                .json_data(&n)
                .expect("notifications serialize"))),
            // lagged receivers skip ahead; missed alerts remain in /me/notifications
            _ => None,
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct SafetyQuery {
    lat: f64,
    lon: f64,
}

async fn safety(
    State(svc): State<AppState>,
    Authed(_): Authed,
    ApiQuery(q): ApiQuery<SafetyQuery>,
) -> ApiResult<Response> {
    let p = GeoPoint::new_strict(q.lat, q.lon)?;
    let verdict = svc.safety_query(p);
    Ok(Json(json!({
        "status": verdict.status,
        "matched_zone_id": verdict.matched_zone_id,
        "distance_to_nearest_zone_center_m": verdict.distance_to_nearest_zone_center_m,
        "message": verdict.report_line(p),
    }))
    .into_response())
}

#[derive(Deserialize)]
struct BoxQuery {
    south: f64,
    west: f64,
    north: f64,
    east: f64,
}

async fn zones(State(svc): State<AppState>, Authed(_): Authed, ApiQuery(q): ApiQuery<BoxQuery>) -> ApiResult<Response> {
    let bbox = BoundingBox::new(q.south, q.west, q.north, q.east)?;
    Ok(Json(svc.list_zones(&bbox)).into_response())
}

/// Serves `router(service)` on `addr` until ctrl-c.
pub async fn serve(service: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
