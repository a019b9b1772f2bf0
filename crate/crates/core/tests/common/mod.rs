#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use geosafe::config::{OperatorSeed, ServiceConfig};
use geosafe::geo::{destination_point, GeoPoint};
use geosafe::http::router;
use geosafe::service::{ManualClock, TracingService};
use geosafe::store::{Role, StoreOptions};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const LAB: (&str, &str) = ("dmch-lab", "lab-pass");
pub const TELCO: (&str, &str) = ("gp-telecom", "telco-pass");
pub const DGHS: (&str, &str) = ("dghs", "gov-pass");

pub const PATIENT_NAME: &str = "Karim Uddin";
pub const PATIENT_NID: &str = "1234567890123";

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 5, 1, 8, 0, 0).unwrap()
}

pub fn report_point() -> GeoPoint {
    GeoPoint::new(23.734135, 90.416088).unwrap()
}

pub fn offset(from: GeoPoint, bearing: f64, meters: f64) -> GeoPoint {
    destination_point(from, bearing, meters).unwrap()
}

pub fn config(db: Option<&Path>) -> ServiceConfig {
    let seed = |(name, pw): (&str, &str), role| OperatorSeed {
        name: name.into(),
        role,
        password: pw.into(),
    };
    ServiceConfig {
        db_path: db.map(Path::to_path_buf),
        store: StoreOptions {
            sync: false,
            snapshot_every: None,
        },
        operators: vec![
            seed(LAB, Role::HealthServiceProvider),
            seed(TELCO, Role::TelecomServiceProvider),
            seed(DGHS, Role::Government),
        ],
        ..ServiceConfig::default()
    }
}

pub struct Harness {
    pub service: Arc<TracingService>,
    pub clock: Arc<ManualClock>,
    pub app: Router,
    pub hsp: String,
    pub tsp: String,
    pub gov: String,
}

impl Harness {
    pub fn new() -> Self {
        Self::open(config(None), Arc::new(ManualClock::new(t0())))
    }

    pub fn on_disk(dir: &Path) -> Self {
        Self::open(config(Some(dir)), Arc::new(ManualClock::new(t0())))
    }

    pub fn open(cfg: ServiceConfig, clock: Arc<ManualClock>) -> Self {
        let service = Arc::new(TracingService::open(&cfg, clock.clone()).unwrap());
        let token = |(name, pw): (&str, &str)| service.login(name, pw).unwrap().token;
        Harness {
            hsp: token(LAB),
            tsp: token(TELCO),
            gov: token(DGHS),
            app: router(service.clone()),
            service,
            clock,
        }
    }

    pub fn request(method: Method, uri: &str, token: Option<&str>, body: Option<&Value>) -> Request<Body> {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        }
    }

    pub async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let resp = self
            .app
            .clone()
            .oneshot(Self::request(method, uri, token, body.as_ref()))
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    /// Status only; the body is dropped unread (needed for endless streams).
    pub async fn status(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> StatusCode {
        self.app
            .clone()
            .oneshot(Self::request(method, uri, token, body.as_ref()))
            .await
            .unwrap()
            .status()
    }

    pub async fn get(&self, uri: &str, token: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, Some(token), None).await
    }

    pub async fn post(&self, uri: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(token), Some(body)).await
    }

    /// Registers a user, logs in, and optionally records a location.
    pub async fn user(&self, username: &str, at: Option<GeoPoint>) -> String {
        let (status, _) = self
            .call(
                Method::POST,
                "/users",
                None,
                Some(json!({
                    "full_name": format!("Resident {username}"),
                    "username": username,
                    "password": "resident-pass",
                    "nid": "19901234567890123",
                    "blood_group": "B+",
                })),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "register {username}");
        let (status, login) = self
            .call(
                Method::POST,
                "/auth/login",
                None,
                Some(json!({ "username": username, "password": "resident-pass" })),
            )
            .await;
        assert_eq!(status, StatusCode::OK);
        let token = login["token"].as_str().unwrap().to_string();
        if let Some(p) = at {
            let (status, _) = self
                .call(
                    Method::PUT,
                    "/me/location",
                    Some(&token),
                    Some(json!({ "lat": p.latitude(), "lon": p.longitude() })),
                )
                .await;
            assert_eq!(status, StatusCode::OK);
        }
        token
    }

    /// Positive test for the standard patient, returning the patient id.
    pub async fn positive_patient(&self) -> String {
        let (status, body) = self
            .post(
                "/reports/tests",
                &self.hsp,
                json!({
                    "subject": { "full_name": PATIENT_NAME, "nid": PATIENT_NID },
                    "result": "Positive",
                }),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["patient"]["patient_id"].as_str().unwrap().to_string()
    }

    pub async fn locate(&self, patient: &str, p: GeoPoint) -> (StatusCode, Value) {
        self.post(
            "/reports/locations",
            &self.tsp,
            json!({ "patient_id": patient, "lat": p.latitude(), "lon": p.longitude() }),
        )
        .await
    }

    pub async fn safety(&self, token: &str, p: GeoPoint) -> Value {
        let (status, body) = self
            .get(&format!("/safety?lat={}&lon={}", p.latitude(), p.longitude()), token)
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }
}

/// Every object key in `v`, recursively.
pub fn keys(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                out.push(k.clone());
                keys(child, out);
            }
        }
        Value::Array(items) => items.iter().for_each(|c| keys(c, out)),
        _ => {}
    }
}

/// Fails if a user-visible payload carries anything that identifies a patient.
pub fn assert_no_patient_identity(payload: &Value, forbidden_values: &[&str]) {
    let mut found = Vec::new();
    keys(payload, &mut found);
    for k in &found {
        let k = k.to_ascii_lowercase();
        assert!(
            !(k.contains("patient") || k.contains("nid") || k.contains("subject") || k == "reported_by" || k == "source"),
            "identifying key {k:?} in {payload}"
        );
    }
    let text = payload.to_string();
    for v in forbidden_values {
        assert!(!text.contains(v), "identifying value {v:?} in {text}");
    }
}

/// Request body that passes validation for each gated endpoint.
fn matrix_body(path: &str, patient: &str) -> Option<Value> {
    let p = report_point();
    match path {
        "/reports/tests" => Some(json!({
            "subject": { "full_name": "Matrix Subject", "nid": "5555555555" },
            "result": "Negative",
        })),
        "/reports/citizen" => Some(json!({ "subject": { "full_name": "Matrix Neighbour", "nid": "6666666666" } })),
        "/reports/locations" => Some(json!({ "patient_id": patient, "lat": p.latitude(), "lon": p.longitude() })),
        "/me/location" => Some(json!({ "lat": p.latitude(), "lon": p.longitude() })),
        _ if path.starts_with("/patients/") => Some(json!({})),
        _ => None,
    }
}

/// Endpoints open to any authenticated caller.
pub const ANY_ROLE: &[&str] = &[
    "/safety?lat=23.734135&lon=90.416088",
    "/zones?south=23.73&west=90.41&north=23.74&east=90.42",
];

/// Calls every gated endpoint with every role, without a token and with a
/// forged token, and lists each response that breaks the role matrix.
pub async fn authorization_violations(h: &Harness) -> (usize, Vec<String>) {
    use geosafe::http::ROLE_MATRIX;

    let user = h.user("matrix-user", Some(report_point())).await;
    let patient = h.positive_patient().await;
    let token_for = |role: Role| match role {
        Role::User => user.clone(),
        Role::HealthServiceProvider => h.hsp.clone(),
        Role::TelecomServiceProvider => h.tsp.clone(),
        Role::Government => h.gov.clone(),
    };
    let mut checked = 0;
    let mut bad = Vec::new();
    let forged = "0".repeat(64);

    for &(method, template, required) in ROLE_MATRIX {
        let method: Method = method.parse().unwrap();
        let path = template.replace("{id}", &patient);
        let body = matrix_body(template, &patient);
        let mut callers: Vec<(String, Option<String>)> = Role::ALL
            .iter()
            .map(|r| (r.to_string(), Some(token_for(*r))))
            .collect();
        callers.push(("anonymous".into(), None));
        callers.push(("forged".into(), Some(forged.clone())));
        for (who, token) in callers {
            let status = h.status(method.clone(), &path, token.as_deref(), body.clone()).await;
            let expected_ok = who == required.to_string();
            let ok = match who.as_str() {
                "anonymous" | "forged" => status == StatusCode::UNAUTHORIZED,
                _ if expected_ok => status != StatusCode::FORBIDDEN && status != StatusCode::UNAUTHORIZED,
                _ => status == StatusCode::FORBIDDEN,
            };
            checked += 1;
            if !ok {
                bad.push(format!("{method} {template} as {who}: {status}"));
            }
        }
    }
    for path in ANY_ROLE {
        for role in Role::ALL {
            let (status, _) = h.call(Method::GET, path, Some(&token_for(role)), None).await;
            checked += 1;
            if status != StatusCode::OK {
                bad.push(format!("GET {path} as {role}: {status}"));
            }
        }
        let (status, _) = h.call(Method::GET, path, None, None).await;
        checked += 1;
        if status != StatusCode::UNAUTHORIZED {
            bad.push(format!("GET {path} anonymous: {status}"));
        }
    }
    (checked, bad)
}

/// Opens the service on `dir` without logging anyone in, so the state is
/// exactly what replay produced.
pub fn reopen(dir: &Path) -> Arc<TracingService> {
    Arc::new(TracingService::open(&config(Some(dir)), Arc::new(ManualClock::new(t0()))).unwrap())
}

pub fn dump(svc: &TracingService) -> String {
    svc.with_state(|s| s.canonical_dump())
}

/// Outcome of a crash-and-restart round.
pub struct CrashReport {
    pub zones_before: usize,
    pub notifications_before: usize,
    pub zones_after: usize,
    pub notifications_after: usize,
    pub identical_after_restart: bool,
    pub identical_after_second_restart: bool,
    pub safety_unchanged: bool,
}

/// Runs a workload against an on-disk registry, tears the final line of the
/// next transaction as a crash would, restarts twice and compares.
pub async fn crash_and_restart(dir: &Path) -> CrashReport {
    let p = report_point();
    let probes: Vec<GeoPoint> = (0..12).map(|i| offset(p, f64::from(i) * 30.0, 1.5 + f64::from(i) * 10.0)).collect();
    let (before, zones_before, notifications_before, verdicts_before) = {
        let h = Harness::on_disk(dir);
        for i in 0..4 {
            h.user(&format!("resident{i}"), Some(offset(p, f64::from(i) * 90.0, 5.0 + f64::from(i)))).await;
        }
        let patient = h.positive_patient().await;
        for i in 0..3 {
            h.clock.advance(chrono::Duration::minutes(5));
            let (status, _) = h.locate(&patient, offset(p, 45.0, f64::from(i) * 40.0)).await;
            assert_eq!(status, StatusCode::CREATED);
        }
        let verdicts: Vec<_> = probes.iter().map(|q| h.service.safety_query(*q)).collect();
        let (zones, notes) = h.service.with_state(|s| (s.zones.len(), s.notifications.len()));
        (dump(&h.service), zones, notes, verdicts)
    };

    // a reopened service performs one more write, which is torn mid-line
    let log = dir.join(geosafe::store::LOG_FILE);
    let committed_len = std::fs::metadata(&log).unwrap().len();
    let before = {
        let svc = reopen(dir);
        let replayed = dump(&svc);
        assert_eq!(replayed, before, "clean restart changes state");
        svc.login(DGHS.0, DGHS.1).unwrap();
        replayed
    };
    let grown = std::fs::metadata(&log).unwrap().len();
    assert!(grown > committed_len);
    let bytes = std::fs::read(&log).unwrap();
    std::fs::write(&log, &bytes[..grown as usize - 7]).unwrap();

    let first = reopen(dir);
    let after = dump(&first);
    let (zones_after, notifications_after) = first.with_state(|s| (s.zones.len(), s.notifications.len()));
    let verdicts_after: Vec<_> = probes.iter().map(|q| first.safety_query(*q)).collect();
    drop(first);
    let second = dump(&reopen(dir));

    CrashReport {
        zones_before,
        notifications_before,
        zones_after,
        notifications_after,
        identical_after_restart: after == before,
        identical_after_second_restart: second == after,
        safety_unchanged: verdicts_before == verdicts_after,
    }
}
