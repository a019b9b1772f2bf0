mod common;

use axum::http::{Method, StatusCode};
use common::*;
use geosafe::http::ROLE_MATRIX;
use geosafe::store::Role;
use serde_json::json;

#[tokio::test]
async fn every_role_endpoint_pair_obeys_the_matrix() {
    let h = Harness::new();
    let (checked, violations) = authorization_violations(&h).await;
    assert_eq!(checked, ROLE_MATRIX.len() * 6 + ANY_ROLE.len() * 5);
    assert!(violations.is_empty(), "{violations:#?}");
}

#[tokio::test]
async fn public_endpoints_need_no_token() {
    let h = Harness::new();
    let (status, _) = h
        .call(Method::POST, "/auth/login", None, Some(json!({"username": "dghs", "password": "gov-pass"})))
        .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = h
        .call(
            Method::POST,
            "/users",
            None,
            Some(json!({"full_name": "A", "username": "a", "password": "p", "nid": "1234567890", "blood_group": "O-"})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn wrong_role_is_rejected_before_the_body_is_read() {
    let h = Harness::new();
    let (status, body) = h.post("/reports/locations", &h.hsp, json!("not an object")).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert!(body["error"].as_str().unwrap().contains(&Role::TelecomServiceProvider.to_string()));
}

#[tokio::test]
async fn malformed_authorization_headers_are_unauthenticated() {
    let h = Harness::new();
    for header in ["", "Bearer", "Basic abc", "bearer x"] {
        let req = axum::http::Request::builder()
            .uri("/safety?lat=0&lon=0")
            .header("authorization", header)
            .body(axum::body::Body::empty())
            .unwrap();
        let resp = tower::ServiceExt::oneshot(h.app.clone(), req).await.unwrap();
        assert_eq!(resp.status(), StatusCode::UNAUTHORIZED, "{header:?}");
    }
}
