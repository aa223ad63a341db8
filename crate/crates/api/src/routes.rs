use crate::driver::EngineHandle;
use crate::view::{NetworkView, StateView};
use crate::ApiError;
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequestParts, Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dtm_core::engine::{CommandReply, CommandRequest, EngineEvent};
use dtm_core::scenario::RunStore;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use std::path::PathBuf;
use std::sync::Arc;
use tokio::sync::{broadcast, watch};

/// Header carrying the client request id; a `request_id` body field works too.
pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Clone, Debug, Default)]
pub struct ApiConfig {
    /// Static bearer token; `None` leaves the API open.
    pub token: Option<String>,
    /// Run store listed by `GET /runs`.
    pub runs: Option<PathBuf>,
    /// Hold the clock until a resume or step command.
    pub start_paused: bool,
}

#[derive(Clone)]
struct AppState {
    engine: EngineHandle,
    config: ApiConfig,
    closing: watch::Receiver<bool>,
    _closer: Arc<watch::Sender<bool>>,
}

/// The full route table over `engine`.
pub fn router(engine: EngineHandle, config: ApiConfig) -> Router {
    app(engine, config).0
}

/// The route table plus the switch that closes open event streams.
pub(crate) fn app(engine: EngineHandle, config: ApiConfig) -> (Router, Arc<watch::Sender<bool>>) {
    let (tx, closing) = watch::channel(false);
    let closer = Arc::new(tx);
    let state = AppState {
        engine,
        config,
        closing,
        _closer: closer.clone(),
    };
    let router = Router::new()
        .route("/network", get(network))
        .route("/state", get(state_view))
        .route("/services", get(services))
        .route("/services/{id}/{action}", post(service_action))
        .route("/strategies", get(strategies).post(compose))
        .route("/strategies/{id}", get(strategy))
        .route("/strategies/{id}/{action}", post(strategy_action))
        .route("/decisions", get(decisions))
        .route("/decisions/{id}", post(decide))
        .route("/kpis", get(kpis))
        .route("/runs", get(runs))
        .route("/sim/{action}", post(sim_action))
        .route("/incidents", post(incident))
        .route("/commands", post(command))
        .route("/events", get(events))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state);
    (router, closer)
}

async fn auth(State(s): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &s.config.token {
        let bearer = req
            .headers()
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        // browsers cannot set headers on a WebSocket handshake
        let query = req
            .uri()
            .query()
            .and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("token=")));
        if bearer != Some(token.as_str()) && query != Some(token.as_str()) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

// ----- reads -----

async fn network(State(s): State<AppState>) -> Result<Json<NetworkView>, ApiError> {
    let v = s
        .engine
        .read(|e| {
            let sc = e.scenario();
            NetworkView::new(sc.name(), &sc.content_hash, e.network())
        })
        .await?;
    Ok(Json(v))
}

async fn state_view(State(s): State<AppState>) -> Result<Json<StateView>, ApiError> {
    Ok(Json(s.engine.read(StateView::of).await?))
}

async fn services(State(s): State<AppState>) -> Result<Json<Value>, ApiError> {
    let v = s
        .engine
        .read(|e| {
            let services: Vec<_> = e.catalog().services_in_order().collect();
            json!({"services": services, "statuses": e.service_statuses()})
        })
        .await?;
    Ok(Json(v))
}

async fn strategies(State(s): State<AppState>) -> Result<Json<Value>, ApiError> {
    let v = s
        .engine
        .read(|e| {
            serde_json::to_value(e.strategies().collect::<Vec<_>>()).expect("strategies serialize")
        })
        .await?;
    Ok(Json(v))
}

async fn strategy(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let v = s
        .engine
        .read(move |e| {
            e.strategy(&id)
                .map(|x| serde_json::to_value(x).expect("strategy serializes"))
                .ok_or(id)
        })
        .await?;
    v.map(Json)
        .map_err(|id| dtm_core::engine::EngineError::UnknownStrategy { id }.into())
}

async fn decisions(State(s): State<AppState>) -> Result<Json<Value>, ApiError> {
    let v = s
        .engine
        .read(|e| json!({"pending": e.pending_decisions().collect::<Vec<_>>(), "decided": e.decisions()}))
        .await?;
    Ok(Json(v))
}

async fn kpis(State(s): State<AppState>) -> Result<Json<Value>, ApiError> {
    let v = s
        .engine
        .read(|e| serde_json::to_value(e.kpis()).expect("kpis serialize"))
        .await?;
    Ok(Json(v))
}

async fn runs(State(s): State<AppState>) -> Result<Json<Value>, ApiError> {
    let runs = match &s.config.runs {
        Some(root) => RunStore::open(root)?.list_runs()?,
        None => Vec::new(),
    };
    Ok(Json(serde_json::to_value(runs).expect("runs serialize")))
}

// ----- commands -----

/// Body as a JSON object; an empty body is an empty object.
fn object(body: &Bytes) -> Result<Map<String, Value>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::BadRequest("body must be a JSON object".into())),
        Err(e) => Err(ApiError::BadRequest(format!("malformed body: {e}"))),
    }
}

/// Merge the command tag and path fields into `body` and submit it.
async fn run(
    s: &AppState,
    headers: &HeaderMap,
    mut body: Map<String, Value>,
    command: &str,
    fields: &[(&str, &str)],
) -> Result<CommandReply, ApiError> {
    body.insert("command".into(), json!(command));
    for (k, v) in fields {
        body.insert((*k).into(), json!(v));
    }
    if let Some(id) = headers.get(REQUEST_ID_HEADER).and_then(|v| v.to_str().ok()) {
        body.insert("request_id".into(), json!(id));
    }
    let req: CommandRequest = serde_json::from_value(Value::Object(body))
        .map_err(|e| ApiError::BadRequest(format!("invalid {command}: {e}")))?;
    s.engine.submit(req).await
}

async fn compose(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let reply = run(&s, &headers, object(&body)?, "compose", &[]).await?;
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

async fn strategy_action(
    State(s): State<AppState>,
    Path((id, action)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CommandReply>, ApiError> {
    if !matches!(
        action.as_str(),
        "activate" | "escalate" | "deescalate" | "retire"
    ) {
        return Err(ApiError::NotFound(format!("/strategies/{id}/{action}")));
    }
    Ok(Json(
        run(&s, &headers, object(&body)?, &action, &[("strategy", &id)]).await?,
    ))
}

async fn service_action(
    State(s): State<AppState>,
    Path((id, action)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CommandReply>, ApiError> {
    let command = match action.as_str() {
        "force_on" | "force_off" => action.as_str(),
        "release" => "release_override",
        _ => return Err(ApiError::NotFound(format!("/services/{id}/{action}"))),
    };
    Ok(Json(
        run(&s, &headers, object(&body)?, command, &[("service", &id)]).await?,
    ))
}

async fn decide(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CommandReply>, ApiError> {
    Ok(Json(
        run(&s, &headers, object(&body)?, "decide", &[("decision", &id)]).await?,
    ))
}

async fn sim_action(
    State(s): State<AppState>,
    Path(action): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CommandReply>, ApiError> {
    let command = match action.as_str() {
        "pause" | "resume" | "step" | "rate" => action.as_str(),
        "auto_confirm" => "set_auto_confirm",
        _ => return Err(ApiError::NotFound(format!("/sim/{action}"))),
    };
    Ok(Json(run(&s, &headers, object(&body)?, command, &[]).await?))
}

async fn incident(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CommandReply>, ApiError> {
    let mut m = Map::new();
    m.insert("incident".into(), Value::Object(object(&body)?));
    Ok(Json(run(&s, &headers, m, "inject_incident", &[]).await?))
}

async fn command(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<CommandReply>, ApiError> {
    let m = object(&body)?;
    let name = m
        .get("command")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::BadRequest("missing command".into()))?
        .to_owned();
    Ok(Json(run(&s, &headers, m, &name, &[]).await?))
}

// ----- event stream -----

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
}

/// WebSocket stream of events from `from` on; a plain GET returns the
/// backlog as a JSON array instead.
async fn events(State(s): State<AppState>, Query(q): Query<EventsQuery>, req: Request) -> Response {
    let upgrade = req
        .headers()
        .get(axum::http::header::UPGRADE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("websocket"));
    if upgrade {
        let (mut parts, _) = req.into_parts();
        return match WebSocketUpgrade::from_request_parts(&mut parts, &()).await {
            Ok(ws) => ws.on_upgrade(move |socket| stream(socket, s, q.from)),
            Err(rejection) => rejection.into_response(),
        };
    }
    let from = q.from;
    match s.engine.read(move |e| e.events_since(from).to_vec()).await {
        Ok(backlog) => Json(backlog).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn send(socket: &mut WebSocket, e: &EngineEvent) -> bool {
    let text = serde_json::to_string(e).expect("events serialize");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn stream(mut socket: WebSocket, s: AppState, from: u64) {
    let mut next = from.max(1);
    let Ok((backlog, mut rx)) = s.engine.subscribe(next).await else {
        return;
    };
    for e in &backlog {
        if !send(&mut socket, e).await {
            return;
        }
        next = e.seq + 1;
    }
    let mut closing = s.closing.clone();
    loop {
        tokio::select! {
            r = rx.recv() => match r {
                Ok(e) if e.seq < next => {}
                Ok(e) => {
                    if !send(&mut socket, &e).await {
                        return;
                    }
                    next = e.seq + 1;
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    // fall back to the engine's log
                    let Ok((backlog, fresh)) = s.engine.subscribe(next).await else { break };
                    rx = fresh;
                    for e in &backlog {
                        if !send(&mut socket, e).await {
                            return;
                        }
                        next = e.seq + 1;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            m = socket.recv() => match m {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
            r = closing.changed() => {
                if r.is_err() || *closing.borrow() {
                    break;
                }
            }
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
