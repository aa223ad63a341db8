mod common;

use common::{contested, engine};
use dtm_api::{serve, ApiConfig, ApiError};
use dtm_core::engine::{EngineEvent, EventKind};
use futures_util::StreamExt;
use serde_json::{json, Value};
use std::time::Duration;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

/// One HTTP/1.1 exchange over a fresh connection.
async fn http(
    addr: std::net::SocketAddr,
    method: &str,
    path: &str,
    body: Option<Value>,
) -> (u16, Value) {
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nhost: localhost\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, rest) = text.split_once("\r\n\r\n").unwrap();
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    (status, serde_json::from_str(rest).unwrap_or(Value::Null))
}

async fn next_event<S>(ws: &mut S) -> EngineEvent
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("event within 10 s")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = m {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

fn paused() -> ApiConfig {
    ApiConfig {
        start_paused: true,
        ..ApiConfig::default()
    }
}

#[tokio::test]
async fn stream_replays_then_follows_in_order() {
    let server = serve(engine("diamond", contested), "127.0.0.1:0", paused())
        .await
        .unwrap();
    let addr = server.local_addr();
    assert_eq!(
        http(addr, "POST", "/sim/step", Some(json!({"ticks": 40})))
            .await
            .0,
        200
    );
    let (s, c) = http(
        addr,
        "POST",
        "/strategies",
        Some(json!({"problem": "A2", "level": "reroute_traffic"})),
    )
    .await;
    assert_eq!(s, 201);
    let id = c["result"]["strategy"]["id"].as_str().unwrap().to_owned();

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/events?from=1"))
        .await
        .unwrap();
    let (_, backlog) = http(addr, "GET", "/events", None).await;
    let backlog: Vec<EngineEvent> = serde_json::from_value(backlog).unwrap();
    assert!(!backlog.is_empty());
    for want in &backlog {
        assert_eq!(&next_event(&mut ws).await, want);
    }

    assert_eq!(
        http(addr, "POST", &format!("/strategies/{id}/activate"), None)
            .await
            .0,
        200
    );
    assert_eq!(
        http(addr, "POST", "/sim/step", Some(json!({"ticks": 30})))
            .await
            .0,
        200
    );
    let (_, st) = http(addr, "GET", "/state", None).await;
    let last = st["last_seq"].as_u64().unwrap();
    let mut seen = Vec::new();
    let mut seq = backlog.last().unwrap().seq;
    while seq < last {
        let e = next_event(&mut ws).await;
        assert_eq!(e.seq, seq + 1);
        seq = e.seq;
        seen.push(e);
    }
    let kinds: Vec<EventKind> = seen.iter().map(|e| e.kind).collect();
    assert!(kinds.contains(&EventKind::StrategyActivated));
    assert!(kinds.contains(&EventKind::PendingDecision));
    assert!(kinds.contains(&EventKind::MessageLifecycle));
    assert!(seen.windows(2).all(|w| w[0].tick <= w[1].tick));

    // a second client resuming mid-way gets the same suffix
    let from = backlog.len() as u64 + 3;
    let (mut late, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/events?from={from}"))
        .await
        .unwrap();
    let all: Vec<EngineEvent> = backlog.iter().chain(&seen).cloned().collect();
    for want in &all[from as usize - 1..] {
        assert_eq!(&next_event(&mut late).await, want);
    }

    // shutdown with both streams open still completes, and the run log holds
    // every streamed event
    let engine = tokio::time::timeout(Duration::from_secs(20), server.shutdown())
        .await
        .expect("shutdown drains")
        .unwrap();
    let logged: Vec<(u64, u64, EventKind)> = engine
        .sim()
        .log()
        .records()
        .iter()
        .filter_map(|r| {
            EventKind::from_log_kind(&r.kind)
                .map(|k| (r.payload["seq"].as_u64().unwrap(), r.tick, k))
        })
        .collect();
    let streamed: Vec<(u64, u64, EventKind)> =
        all.iter().map(|e| (e.seq, e.tick, e.kind)).collect();
    assert_eq!(logged, streamed);
}

#[tokio::test]
async fn running_clock_streams_snapshots() {
    let server = serve(
        engine("diamond", |_| {}),
        "127.0.0.1:0",
        ApiConfig::default(),
    )
    .await
    .unwrap();
    let addr = server.local_addr();
    assert_eq!(
        http(
            addr,
            "POST",
            "/sim/rate",
            Some(json!({"ticks_per_second": 500.0}))
        )
        .await
        .0,
        200
    );
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/events"))
        .await
        .unwrap();
    let mut snapshots = 0;
    while snapshots < 3 {
        if next_event(&mut ws).await.kind == EventKind::StateSnapshot {
            snapshots += 1;
        }
    }
    let engine = server.shutdown().await.unwrap();
    assert!(engine.tick() >= 30);
}

#[tokio::test]
async fn concurrent_clients_share_one_queue() {
    let server = serve(engine("diamond", |_| {}), "127.0.0.1:0", paused())
        .await
        .unwrap();
    let addr = server.local_addr();
    let clients: Vec<_> = (0..8)
        .map(|_| {
            tokio::spawn(
                async move { http(addr, "POST", "/sim/step", Some(json!({"ticks": 5}))).await },
            )
        })
        .collect();
    let mut ticks = Vec::new();
    for c in clients {
        let (s, v) = c.await.unwrap();
        assert_eq!(s, 200);
        ticks.push(v["tick"].as_u64().unwrap());
    }
    ticks.sort();
    assert_eq!(ticks, (1..=8).map(|i| i * 5).collect::<Vec<u64>>());
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn bind_failure_is_reported() {
    let first = serve(engine("diamond", |_| {}), "127.0.0.1:0", paused())
        .await
        .unwrap();
    let taken = first.local_addr().to_string();
    let err = serve(engine("diamond", |_| {}), &taken, paused())
        .await
        .err()
        .unwrap();
    assert!(matches!(err, ApiError::Bind { .. }), "{err}");
    first.shutdown().await.unwrap();
}
