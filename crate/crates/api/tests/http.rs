mod common;

use axum::http::StatusCode;
use common::{app, contested, engine, paused};
use dtm_api::ApiConfig;
use dtm_core::engine::Command;
use dtm_core::network::ElementKind;
use dtm_core::scenario::{load_bundled, RunStore};
use serde_json::{json, Value};
use std::collections::BTreeMap;

fn strategy_id(reply: &Value) -> String {
    reply["result"]["strategy"]["id"]
        .as_str()
        .unwrap()
        .to_owned()
}

fn active_services(services: &Value) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in services["statuses"].as_array().unwrap() {
        if p["status"] == "active" {
            out.entry(p["service"].as_str().unwrap().into())
                .or_default()
                .push(p["element"].as_str().unwrap().into());
        }
    }
    out
}

#[tokio::test]
async fn network_is_the_loaded_scenario_with_its_taxonomy() {
    for name in ["diamond", "thessaloniki"] {
        let sc = load_bundled(name).unwrap();
        let a = paused(engine(name, |_| {}));
        let v = a.get("/network").await;
        let net = &sc.network;
        assert_eq!(v["scenario"], name);
        assert_eq!(v["content_hash"], sc.content_hash.as_str());
        assert_eq!(v["nodes"].as_array().unwrap().len(), net.nodes().len());
        assert_eq!(v["links"].as_array().unwrap().len(), net.links().len());
        assert_eq!(
            v["segments"].as_array().unwrap().len(),
            net.control_segments().len()
        );
        for (n, j) in net.nodes().iter().zip(v["nodes"].as_array().unwrap()) {
            assert_eq!(j["id"], n.id.as_str());
            assert_eq!(j["kind"], serde_json::to_value(n.kind).unwrap());
            assert_eq!(
                j["element_kind"],
                serde_json::to_value(ElementKind::of_node(n.kind)).unwrap()
            );
        }
        let parts: Vec<&str> = v["route_parts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["id"].as_str().unwrap())
            .collect();
        let expect: Vec<&str> = net.route_parts().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(parts, expect);
        let counts: BTreeMap<ElementKind, usize> =
            serde_json::from_value(v["kind_counts"].clone()).unwrap();
        assert_eq!(counts, net.kind_counts());
        assert!(v["links"][0]["road_class"].is_string());
    }
}

#[tokio::test]
async fn reads_leave_the_state_hash_alone() {
    let a = paused(engine("diamond", |_| {}));
    a.post("/sim/step", json!({"ticks": 60})).await;
    let c = a
        .post(
            "/strategies",
            json!({"problem": "A2", "level": "enlarge_outflow"}),
        )
        .await;
    a.post(
        &format!("/strategies/{}/activate", strategy_id(&c)),
        json!({}),
    )
    .await;
    a.post("/sim/step", json!({"ticks": 5})).await;
    let before = a.get("/state").await["state_hash"].clone();
    for uri in [
        "/network",
        "/state",
        "/services",
        "/strategies",
        "/kpis",
        "/runs",
        "/decisions",
        "/events?from=3",
    ] {
        a.get(uri).await;
    }
    a.get(&format!("/strategies/{}", strategy_id(&c))).await;
    assert_eq!(a.get("/state").await["state_hash"], before);
}

#[tokio::test]
async fn compose_then_activate_dispatches() {
    let a = paused(engine("diamond", |_| {}));
    let (s, c) = a
        .call(
            "POST",
            "/strategies",
            Some(json!({"problem": "A2", "level": "enlarge_outflow"})),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(c["result"]["strategy"]["status"], "Proposed");
    assert_eq!(c["result"]["strategy"]["level"], "EnlargeOutflow");
    let id = strategy_id(&c);
    assert!(active_services(&a.get("/services").await).is_empty());

    let r = a
        .post(&format!("/strategies/{id}/activate"), json!({}))
        .await;
    assert_eq!(r["result"]["strategy"]["status"], "Active");
    assert!(r["result"]["claimed"].as_u64().unwrap() > 0);
    a.post("/sim/step", json!({"ticks": 3})).await;
    let active = active_services(&a.get("/services").await);
    assert!(active.contains_key("FI"), "{active:?}");

    let events = a.get("/events").await;
    let kinds: Vec<&str> = events
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    assert!(kinds.contains(&"StrategyProposed"));
    assert!(kinds.contains(&"StrategyActivated"));
    assert!(kinds.contains(&"MessageLifecycle"));
    let listed = a.get("/strategies").await;
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert_eq!(listed[0]["strategy"]["id"], id.as_str());

    a.post(&format!("/strategies/{id}/retire"), json!({})).await;
    a.post("/sim/step", json!({"ticks": 3})).await;
    assert_eq!(
        a.get(&format!("/strategies/{id}")).await["strategy"]["status"],
        "Retired"
    );
    assert!(active_services(&a.get("/services").await).is_empty());
}

#[tokio::test]
async fn escalation_and_deescalation_swap_strategies() {
    let a = paused(engine("diamond", |_| {}));
    let c = a
        .post(
            "/strategies",
            json!({"problem": "A2", "level": "inform_traffic"}),
        )
        .await;
    let id = strategy_id(&c);
    a.post(&format!("/strategies/{id}/activate"), json!({}))
        .await;
    let up = a
        .post(&format!("/strategies/{id}/escalate"), json!({}))
        .await;
    let up_id = strategy_id(&up);
    assert_ne!(up_id, id);
    assert_eq!(up["result"]["strategy"]["level"], "EnlargeOutflow");
    assert_eq!(
        a.get(&format!("/strategies/{id}")).await["strategy"]["status"],
        "Retired"
    );
    let down = a
        .post(&format!("/strategies/{up_id}/deescalate"), json!({}))
        .await;
    assert_eq!(down["result"]["strategy"]["level"], "InformTraffic");
    let (s, _) = a
        .call(
            "POST",
            &format!("/strategies/{}/deescalate", strategy_id(&down)),
            None,
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn operator_decision_releases_the_chosen_service_only() {
    let a = paused(engine("diamond", contested));
    let c = a
        .post(
            "/strategies",
            json!({"problem": "A2", "level": "reroute_traffic"}),
        )
        .await;
    a.post(
        &format!("/strategies/{}/activate", strategy_id(&c)),
        json!({}),
    )
    .await;
    let d = a.get("/decisions").await;
    let pending = d["pending"].as_array().unwrap();
    assert_eq!(pending.len(), 1);
    let did = pending[0]["id"].as_str().unwrap().to_owned();
    assert_eq!(pending[0]["options"], json!(["METERING", "MTTA"]));
    a.post("/sim/step", json!({"ticks": 3})).await;
    let before = active_services(&a.get("/services").await);
    assert!(!before.contains_key("MTTA") && !before.contains_key("METERING"));

    let (s, _) = a
        .call(
            "POST",
            &format!("/decisions/{did}"),
            Some(json!({"choose": "FI"})),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    a.post(
        &format!("/decisions/{}", did.replace('*', "%2A")),
        json!({"choose": "MTTA"}),
    )
    .await;
    a.post("/sim/step", json!({"ticks": 3})).await;
    let after = active_services(&a.get("/services").await);
    assert!(after.contains_key("MTTA"), "{after:?}");
    assert!(!after.contains_key("METERING"));
    let d = a.get("/decisions").await;
    assert!(d["pending"].as_array().unwrap().is_empty());
    assert_eq!(d["decided"][&did], "MTTA");
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let a = paused(engine("diamond", |_| {}));
    let (s, v) = a.call("POST", "/strategies/nope/activate", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_strategy");
    assert_eq!(v["class"], "not_found");
    assert_eq!(
        a.call("GET", "/strategies/nope", None).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        a.call("POST", "/strategies/x/explode", None).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        a.call("POST", "/sim/explode", None).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        a.call("GET", "/nowhere", None).await.0,
        StatusCode::NOT_FOUND
    );

    let c = a
        .post(
            "/strategies",
            json!({"problem": "A2", "level": "enlarge_outflow"}),
        )
        .await;
    let id = strategy_id(&c);
    a.post(&format!("/strategies/{id}/activate"), json!({}))
        .await;
    let (s, v) = a
        .call("POST", &format!("/strategies/{id}/activate"), None)
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "wrong_status");

    for (uri, body) in [
        ("/strategies", json!({"problem": "A2", "level": "sideways"})),
        ("/strategies", json!({"level": "enlarge_outflow"})),
        ("/strategies", json!([1, 2])),
        ("/sim/rate", json!({"ticks_per_second": 0.0})),
        ("/services/GLOSA/force_on", json!({"element": "A2"})),
    ] {
        let (s, v) = a.call("POST", uri, Some(body.clone())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{uri} {body}: {v}");
    }
    let (s, _) = a
        .call(
            "POST",
            "/services/NOPE/force_on",
            Some(json!({"element": "c1"})),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = a
        .call(
            "POST",
            "/strategies",
            Some(json!({"problem": "Z9", "level": "enlarge_outflow"})),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn retried_commands_apply_once() {
    let a = paused(engine("diamond", |_| {}));
    let body = json!({"problem": "A2", "level": "enlarge_outflow"});
    let h = [("x-request-id", "r-1")];
    let (s1, r1) = a
        .call_with("POST", "/strategies", Some(body.clone()), &h)
        .await;
    let (s2, r2) = a.call_with("POST", "/strategies", Some(body), &h).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::CREATED));
    assert_eq!(r1, r2);
    assert_eq!(a.get("/strategies").await.as_array().unwrap().len(), 1);

    let h = [("x-request-id", "r-2")];
    let step = a
        .call_with("POST", "/sim/step", Some(json!({"ticks": 4})), &h)
        .await;
    let again = a
        .call_with("POST", "/sim/step", Some(json!({"ticks": 4})), &h)
        .await;
    assert_eq!(step, again);
    assert_eq!(a.get("/state").await["tick"], 4);

    let (s, _) = a
        .call_with(
            "POST",
            "/sim/step",
            Some(json!({"ticks": 5})),
            &[("x-request-id", "r-1")],
        )
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    // the body field works as well as the header
    let r = a
        .post("/sim/step", json!({"ticks": 2, "request_id": "r-3"}))
        .await;
    assert_eq!(
        r,
        a.post("/sim/step", json!({"ticks": 2, "request_id": "r-3"}))
            .await
    );
    assert_eq!(a.get("/state").await["tick"], 6);
}

#[tokio::test]
async fn overrides_are_flagged() {
    let a = paused(engine("diamond", |_| {}));
    a.post("/services/FI/force_on", json!({"element": "S"}))
        .await;
    a.post("/sim/step", json!({"ticks": 3})).await;
    let v = a.get("/services").await;
    let fi = v["statuses"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["service"] == "FI" && p["element"] == "S")
        .unwrap()
        .clone();
    assert_eq!(fi["forced_on"], true);
    assert_eq!(fi["status"], "active");
    a.post("/services/FI/force_off", json!({"element": "S"}))
        .await;
    a.post("/sim/step", json!({"ticks": 3})).await;
    let v = a.get("/services").await;
    let fi = v["statuses"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["service"] == "FI" && p["element"] == "S")
        .unwrap()
        .clone();
    assert_eq!(fi["forced_off"], true);
    assert_eq!(fi["status"], "inactive");
    a.post("/services/FI/release", json!({"element": "S"}))
        .await;
    assert!(a.get("/services").await["statuses"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p.get("forced_on").is_none() && p.get("forced_off").is_none()));
}

#[tokio::test]
async fn pace_controls_the_clock() {
    let a = paused(engine("diamond", |_| {}));
    let r = a.post("/sim/step", json!({"ticks": 5})).await;
    assert_eq!(r["tick"], 5);
    a.post("/sim/step", json!({})).await;
    assert_eq!(a.get("/state").await["tick"], 6);
    a.post("/sim/rate", json!({"ticks_per_second": 200.0}))
        .await;
    a.post("/sim/resume", json!({})).await;
    tokio::time::sleep(std::time::Duration::from_millis(300)).await;
    a.post("/sim/pause", json!({})).await;
    let st = a.get("/state").await;
    assert_eq!(st["paused"], true);
    assert_eq!(st["rate"], 200.0);
    let t = st["tick"].as_u64().unwrap();
    assert!(t > 6, "clock did not run: {t}");
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    assert_eq!(a.get("/state").await["tick"], t);

    a.post("/sim/auto_confirm", json!({"enabled": true})).await;
    assert_eq!(a.get("/state").await["auto_confirm"], true);
    let inc = json!({"id": "late", "link": "B1", "capacity_factor": 0.2, "start": 400, "end": 500});
    a.post("/incidents", inc.clone()).await;
    assert_eq!(
        a.call("POST", "/incidents", Some(inc)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let r = a
        .post("/commands", json!({"command": "step", "ticks": 2}))
        .await;
    assert_eq!(r["tick"], t + 2);
}

#[tokio::test]
async fn static_token_guards_every_route() {
    let a = app(
        engine("diamond", |_| {}),
        ApiConfig {
            token: Some("s3cret".into()),
            start_paused: true,
            ..ApiConfig::default()
        },
    );
    assert_eq!(
        a.call("GET", "/state", None).await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        a.call("POST", "/sim/step", None).await.0,
        StatusCode::UNAUTHORIZED
    );
    let (s, _) = a
        .call_with("GET", "/state", None, &[("authorization", "Bearer wrong")])
        .await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = a
        .call_with("GET", "/state", None, &[("authorization", "Bearer s3cret")])
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        a.call("GET", "/events?token=s3cret", None).await.0,
        StatusCode::OK
    );
}

#[tokio::test]
async fn runs_lists_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let mut e = engine("diamond", |_| {});
    e.submit(Command::Step { ticks: 10 }.into()).unwrap();
    let sc = load_bundled("diamond").unwrap();
    let kpis = e.kpis();
    let store = RunStore::open(dir.path()).unwrap();
    store
        .record_run(&sc, 7, 0, 10, e.sim().log(), &kpis)
        .unwrap();

    let a = app(
        engine("diamond", |_| {}),
        ApiConfig {
            runs: Some(dir.path().to_path_buf()),
            start_paused: true,
            ..ApiConfig::default()
        },
    );
    let v = a.get("/runs").await;
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["run_id"], "run-0001");
    assert_eq!(v[0]["end_tick"], 10);
    let empty = paused(engine("diamond", |_| {}));
    assert_eq!(empty.get("/runs").await, json!([]));
}

#[tokio::test]
async fn kpis_follow_the_clock() {
    let a = paused(engine("diamond", |_| {}));
    assert_eq!(a.get("/kpis").await["ticks"], 0);
    a.post("/sim/step", json!({"ticks": 90})).await;
    let k = a.get("/kpis").await;
    assert_eq!(k["ticks"], 90);
}

#[tokio::test]
async fn stopping_returns_the_engine() {
    let mut a = paused(engine("diamond", |_| {}));
    a.post("/sim/step", json!({"ticks": 12})).await;
    let e = a.thread.take().unwrap().stop().await.unwrap();
    assert_eq!(e.tick(), 12);
    let (s, _) = a.call("GET", "/state", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}
