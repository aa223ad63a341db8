#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use dtm_api::{router, spawn_engine, ApiConfig, EngineThread};
use dtm_core::engine::{Engine, EngineOptions};
use dtm_core::scenario::{bundled_sources, Scenario, Sources, CATALOG_FILE};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn engine(name: &str, edit: impl FnOnce(&mut Sources)) -> Engine {
    let mut s = bundled_sources(name).unwrap();
    edit(&mut s);
    Engine::new(
        Scenario::from_sources(&s).unwrap(),
        None,
        EngineOptions::default(),
    )
    .unwrap()
}

/// Diamond with MTTA and METERING left to the operator everywhere.
pub fn contested(s: &mut Sources) {
    let mut v: Value = serde_json::from_str(&s[CATALOG_FILE]).unwrap();
    v["conflict_rules"] = json!([{"service_a": "MTTA", "service_b": "METERING", "scope": "*", "resolution": "OperatorDecides"}]);
    s.insert(CATALOG_FILE.to_owned(), v.to_string());
}

pub struct App {
    pub router: Router,
    pub thread: Option<EngineThread>,
}

pub fn app(engine: Engine, config: ApiConfig) -> App {
    let thread = spawn_engine(engine, config.start_paused);
    App {
        router: router(thread.handle(), config),
        thread: Some(thread),
    }
}

pub fn paused(engine: Engine) -> App {
    app(
        engine,
        ApiConfig {
            start_paused: true,
            ..ApiConfig::default()
        },
    )
}

impl App {
    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        self.call_with(method, uri, body, &[]).await
    }

    pub async fn call_with(
        &self,
        method: &str,
        uri: &str,
        body: Option<Value>,
        headers: &[(&str, &str)],
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let body = match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        };
        let resp = self
            .router
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, v)
    }

    pub async fn get(&self, uri: &str) -> Value {
        let (s, v) = self.call("GET", uri, None).await;
        assert_eq!(s, StatusCode::OK, "GET {uri}: {v}");
        v
    }

    pub async fn post(&self, uri: &str, body: Value) -> Value {
        let (s, v) = self.call("POST", uri, Some(body)).await;
        assert!(s.is_success(), "POST {uri}: {s} {v}");
        v
    }
}
