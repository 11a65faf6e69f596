//! WebSocket front end for [`SessionHub`].
//!
//! Each socket gets a connection id and an outbound queue. Inbound frames
//! are funneled through one hub lock, which gives every session a single
//! total order of events.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use crate::hub::{ConnId, Outbound, SessionHub};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

pub struct Shared {
    hub: Mutex<SessionHub>,
    senders: Mutex<HashMap<ConnId, mpsc::UnboundedSender<String>>>,
    next_conn: AtomicU64,
}

impl Shared {
    pub fn new(hub: SessionHub) -> Arc<Self> {
        Arc::new(Shared { hub: Mutex::new(hub), senders: Mutex::new(HashMap::new()), next_conn: AtomicU64::new(1) })
    }

    fn deliver(&self, frames: Vec<Outbound>) {
        let senders = self.senders.lock().expect("sender registry");
        for f in frames {
            if let Some(tx) = senders.get(&f.conn) {
                let _ = tx.send(f.text);
            }
        }
    }

    fn tick(&self) {
        let frames = self.hub.lock().expect("hub").tick(now_ms());
        self.deliver(frames);
    }
}

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new().route("/healthz", get(|| async { "ok" })).route("/ws", get(upgrade)).with_state(shared)
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) {
    let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let (tx, mut rx) = mpsc::unbounded_channel::<String>();
    shared.senders.lock().expect("sender registry").insert(conn, tx);
    shared.hub.lock().expect("hub").connect(conn);
    tracing::debug!(conn, "connected");

    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some(text) = rx.recv().await {
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => {
                let frames = shared.hub.lock().expect("hub").handle_text(conn, text.as_str(), now_ms());
                shared.deliver(frames);
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    let frames = shared.hub.lock().expect("hub").disconnect(conn, now_ms());
    shared.senders.lock().expect("sender registry").remove(&conn);
    shared.deliver(frames);
    writer.abort();
    tracing::debug!(conn, "disconnected");
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, checking for idle sessions every `tick`.
pub async fn serve(
    listener: TcpListener,
    shared: Arc<Shared>,
    tick: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let ticker = {
        let shared = shared.clone();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(tick);
            loop {
                interval.tick().await;
                shared.tick();
            }
        })
    };
    let result = axum::serve(listener, router(shared)).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    Ok(result?)
}
