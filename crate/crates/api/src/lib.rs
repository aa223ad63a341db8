//! Control API over a live engine: JSON queries and commands over HTTP,
//! engine events over a WebSocket.
//!
//! One thread owns the [`Engine`](dtm_core::engine::Engine). Every request,
//! read or write, is a job on its queue, so handlers never see a state
//! between two commands.

mod driver;
mod error;
mod routes;
mod view;

pub use driver::{spawn_engine, EngineHandle, EngineThread};
pub use error::ApiError;
pub use routes::{router, ApiConfig};
pub use view::{NetworkView, StateView};

use dtm_core::engine::Engine;
use std::net::SocketAddr;
use std::sync::Arc;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};

/// Version of every payload shape this crate serves.
pub const API_VERSION: u32 = 1;

/// A running server. Drop it to leave the server running detached; call
/// [`Server::shutdown`] to stop it and get the engine back.
pub struct Server {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    closer: Arc<watch::Sender<bool>>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
    engine: EngineThread,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn handle(&self) -> EngineHandle {
        self.engine.handle()
    }

    /// Finish in-flight requests, then stop the engine thread.
    pub async fn shutdown(self) -> Result<Engine, ApiError> {
        let _ = self.closer.send(true);
        let _ = self.stop.send(());
        self.http
            .await
            .map_err(|e| ApiError::Server(e.to_string()))??;
        self.engine.stop().await
    }

    /// Serve until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> Result<Engine, ApiError> {
        let _ = tokio::signal::ctrl_c().await;
        self.shutdown().await
    }
}

/// Bind `addr` and serve `engine`.
pub async fn serve(engine: Engine, addr: &str, config: ApiConfig) -> Result<Server, ApiError> {
    let listener = TcpListener::bind(addr).await.map_err(|e| ApiError::Bind {
        addr: addr.to_owned(),
        source: e,
    })?;
    let local = listener.local_addr()?;
    let thread = spawn_engine(engine, config.start_paused);
    let (app, closer) = routes::app(thread.handle(), config);
    let (stop, stopped) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok(Server {
        addr: local,
        stop,
        closer,
        http,
        engine: thread,
    })
}
