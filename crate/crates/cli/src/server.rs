//! WebSocket service for live sessions.
//!
//! A dedicated engine thread owns the `LiveSession` and ticks it at 20 Hz.
//! Client messages travel to it over a channel and take effect at the next
//! tick boundary. Snapshots go out to every attached client as NDJSON lines;
//! a client that attaches mid-session first receives the latest snapshot.

use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use myoloop::game::TICK_HZ;
use myoloop::live::{ClientMessage, LiveSession};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

pub const TICK: Duration = Duration::from_millis(1000 / TICK_HZ as u64);

#[derive(Clone)]
pub struct AppState {
    commands: mpsc::Sender<ClientMessage>,
    lines: broadcast::Sender<String>,
    last: Arc<Mutex<Option<String>>>,
}

/// Handle to the running engine thread.
pub struct Engine {
    pub state: AppState,
    handle: thread::JoinHandle<()>,
}

impl Engine {
    /// Starts ticking `live`. The thread stops once every `AppState` clone is dropped.
    pub fn spawn(mut live: LiveSession) -> Self {
        let (tx, rx) = mpsc::channel::<ClientMessage>();
        let (lines, _) = broadcast::channel(1024);
        let last = Arc::new(Mutex::new(None));
        let state = AppState {
            commands: tx,
            lines: lines.clone(),
            last: last.clone(),
        };
        let handle = thread::spawn(move || {
            let mut deadline = Instant::now();
            let mut finetunes = 0;
            loop {
                loop {
                    match rx.try_recv() {
                        Ok(msg) => live.submit(msg),
                        Err(mpsc::TryRecvError::Empty) => break,
                        Err(mpsc::TryRecvError::Disconnected) => return,
                    }
                }
                let started = Instant::now();
                let line = match live.tick() {
                    Ok(Some(snap)) => snap.to_line().ok(),
                    Ok(None) => None,
                    Err(e) => Some(format!("{}\n", json!({ "error": e.to_string() }))),
                };
                if live.finetunes.len() > finetunes {
                    finetunes = live.finetunes.len();
                    let report = live.finetunes.last().expect("new finetune report");
                    let _ = lines.send(format!("{}\n", json!({ "event": "finetune", "report": report })));
                    deadline = Instant::now();
                }
                let elapsed = started.elapsed();
                if elapsed > TICK {
                    eprintln!("tick took {elapsed:?}, over the {TICK:?} budget");
                }
                if let Some(line) = line {
                    *last.lock().expect("snapshot lock") = Some(line.clone());
                    let _ = lines.send(line);
                }
                deadline += TICK;
                let now = Instant::now();
                if deadline > now {
                    thread::sleep(deadline - now);
                } else {
                    deadline = now;
                }
            }
        });
        Self { state, handle }
    }

    /// Drops the command sender and waits for the engine to stop.
    pub fn shutdown(self) {
        drop(self.state);
        let _ = self.handle.join();
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

async fn index() -> &'static str {
    "myoloop live session: connect a WebSocket to /ws\n"
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(mut socket: WebSocket, state: AppState) {
    let mut rx = state.lines.subscribe();
    let replay = state.last.lock().expect("snapshot lock").clone();
    if let Some(line) = replay {
        if socket.send(Message::Text(line.into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            out = rx.recv() => match out {
                Ok(line) => {
                    if socket.send(Message::Text(line.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        let reply = match ClientMessage::parse(line) {
                            Ok(msg) => state.commands.send(msg).err().map(|_| "session closed".to_string()),
                            Err(e) => Some(e.to_string()),
                        };
                        if let Some(err) = reply {
                            let line = format!("{}\n", json!({ "error": err }));
                            if socket.send(Message::Text(line.into())).await.is_err() {
                                return;
                            }
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Serves `state` on `listener` until the future is dropped.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
