//! WebSocket endpoint at `/session`.
//!
//! The simulation loop owns the [`TeleopSession`] on its own thread and
//! paces it against the wall clock. Connection tasks talk to it through
//! channels only: commands go in over an mpsc queue, telemetry comes out
//! over a broadcast channel whose slow readers skip ahead to the newest
//! frame.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::session::TeleopSession;
use crate::wire::{scene_transfer, Body, ConfigPatch, Hello, InputCommand, Role, SceneMeta, WireMessage, MAX_TRANSMITTED};

enum Command {
    Connect { reply: oneshot::Sender<Joined>, direct: mpsc::UnboundedSender<Body> },
    Leave { conn: u64 },
    Input { conn: u64, client_tick: u64, cmd: InputCommand },
    Config { conn: u64, patch: ConfigPatch },
}

struct Joined {
    conn: u64,
    tick: u64,
    hello: Hello,
}

#[derive(Clone)]
struct Shared {
    id: Arc<str>,
    commands: mpsc::UnboundedSender<Command>,
    frames: broadcast::Sender<Arc<(u64, String)>>,
    tick: Arc<AtomicU64>,
    /// Scene chunks, serialized once; the tick is spliced in per client.
    chunks: Arc<Vec<Body>>,
}

/// A running server. Dropping it does not stop the loop; call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub session_id: String,
    stop: Arc<AtomicBool>,
    shutdown: Option<oneshot::Sender<()>>,
    sim: Option<JoinHandle<TeleopSession>>,
    http: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    /// Stops the loop and the listener and hands back the final session.
    pub async fn shutdown(mut self) -> TeleopSession {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.http).await;
        let sim = self.sim.take().expect("joined once");
        tokio::task::spawn_blocking(move || sim.join().expect("simulation thread panicked")).await.expect("join")
    }

    /// Resolves when the HTTP side stops.
    pub async fn wait(self) -> std::io::Result<()> {
        self.http.await.map_err(std::io::Error::other)?
    }
}

/// Binds `addr` and starts the loop and the endpoint.
pub async fn spawn(session: TeleopSession, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let id: Arc<str> = format!("{:016x}", rand::random::<u64>()).into();
    let (commands, inbox) = mpsc::unbounded_channel();
    let (frames, _) = broadcast::channel(16);
    let tick = Arc::new(AtomicU64::new(0));
    let (meta, chunks) = scene_transfer(&session.scene().scene, MAX_TRANSMITTED);
    let shared = Shared {
        id: id.clone(),
        commands,
        frames: frames.clone(),
        tick: tick.clone(),
        chunks: Arc::new(chunks.into_iter().map(Body::SceneChunk).collect()),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let sim = {
        let stop = stop.clone();
        let id = id.clone();
        std::thread::Builder::new()
            .name("teleop-sim".into())
            .spawn(move || run_loop(session, &id, meta, inbox, frames, tick, stop))?
    };
    let app = Router::new().route("/session", get(upgrade)).with_state(shared);
    let (shutdown, rx) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ServerHandle { addr, session_id: id.to_string(), stop, shutdown: Some(shutdown), sim: Some(sim), http })
}

fn run_loop(
    mut session: TeleopSession,
    id: &str,
    meta: SceneMeta,
    mut inbox: mpsc::UnboundedReceiver<Command>,
    frames: broadcast::Sender<Arc<(u64, String)>>,
    tick: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
) -> TeleopSession {
    let dt = Duration::from_secs_f64(session.config().dt);
    let mut clients: HashMap<u64, mpsc::UnboundedSender<Body>> = HashMap::new();
    let mut pilot: Option<u64> = None;
    let mut next_conn = 1;
    let mut deadline = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        while let Ok(cmd) = inbox.try_recv() {
            match cmd {
                Command::Connect { reply, direct } => {
                    let conn = next_conn;
                    next_conn += 1;
                    let role = if pilot.is_none() {
                        pilot = Some(conn);
                        Role::Pilot
                    } else {
                        Role::Observer
                    };
                    let cfg = session.config();
                    let hello = Hello {
                        role,
                        scene: meta.clone(),
                        config: *session.cbf(),
                        dt: cfg.dt,
                        filter_hz: cfg.filter_hz,
                        broadcast_hz: cfg.broadcast_hz,
                    };
                    if reply.send(Joined { conn, tick: session.tick(), hello }).is_ok() {
                        clients.insert(conn, direct);
                    } else if pilot == Some(conn) {
                        pilot = None;
                    }
                }
                Command::Leave { conn } => {
                    clients.remove(&conn);
                    if pilot == Some(conn) {
                        pilot = None;
                    }
                }
                Command::Input { conn, client_tick, cmd } => {
                    let outcome = if pilot != Some(conn) {
                        Err("observers are read-only".to_string())
                    } else {
                        session.submit_input(&cmd, client_tick).map_err(|e| e.to_string())
                    };
                    if let (Err(message), Some(tx)) = (outcome, clients.get(&conn)) {
                        let _ = tx.send(Body::Error { message });
                    }
                }
                Command::Config { conn, patch } => {
                    if pilot != Some(conn) {
                        if let Some(tx) = clients.get(&conn) {
                            let _ = tx.send(Body::Error { message: "observers are read-only".into() });
                        }
                        continue;
                    }
                    match session.update_config(&patch) {
                        Ok(config) => {
                            let m = WireMessage::new(id, session.tick(), Body::Config { config });
                            let _ = frames.send(Arc::new((session.tick(), m.to_json())));
                        }
                        Err(e) => {
                            if let Some(tx) = clients.get(&conn) {
                                let _ = tx.send(Body::Error { message: e.to_string() });
                            }
                        }
                    }
                }
            }
        }
        let t = session.tick();
        match session.step() {
            Ok(Some(frame)) => {
                let m = WireMessage::new(id, t, Body::State(frame));
                let _ = frames.send(Arc::new((t, m.to_json())));
            }
            Ok(None) => {}
            Err(e) => {
                log::error!("filter failed at tick {t}: {e}");
                let m = WireMessage::new(id, t, Body::Error { message: e.to_string() });
                let _ = frames.send(Arc::new((t, m.to_json())));
            }
        }
        tick.store(session.tick(), Ordering::SeqCst);
        deadline += dt;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > dt * 10 {
            // Fell far behind; drop the backlog rather than sprint.
            deadline = now;
        }
    }
    session
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Shared) {
    let (direct_tx, mut direct) = mpsc::unbounded_channel();
    let (reply, joined) = oneshot::channel();
    if shared.commands.send(Command::Connect { reply, direct: direct_tx }).is_err() {
        return;
    }
    let Ok(joined) = joined.await else { return };
    let mut frames = shared.frames.subscribe();
    let (mut sink, mut stream) = socket.split();
    let mut last_tick = joined.tick;
    let conn = joined.conn;
    let frame = |tick: u64, body: Body| Message::Text(WireMessage::new(&*shared.id, tick, body).to_json().into());

    let mut ok = sink.send(frame(last_tick, Body::Hello(joined.hello))).await.is_ok();
    for chunk in shared.chunks.iter() {
        if !ok {
            break;
        }
        ok = sink.send(frame(last_tick, chunk.clone())).await.is_ok();
    }
    while ok {
        tokio::select! {
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        let now = last_tick.max(shared.tick.load(Ordering::SeqCst));
                        last_tick = now;
                        ok = sink.send(frame(now, Body::Error { message: "binary frames are not accepted".into() })).await.is_ok();
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match WireMessage::parse(text.as_str()) {
                    Err(e) => Some(Body::Error { message: format!("malformed message: {e}") }),
                    Ok(m) => match m.body {
                        Body::Ping { nonce } => Some(Body::Pong { nonce }),
                        Body::Input(cmd) => {
                            let _ = shared.commands.send(Command::Input { conn, client_tick: m.tick, cmd });
                            None
                        }
                        Body::ConfigUpdate(patch) => {
                            let _ = shared.commands.send(Command::Config { conn, patch });
                            None
                        }
                        other => Some(Body::Error { message: format!("unexpected client message {}", kind(&other)) }),
                    },
                };
                if let Some(body) = reply {
                    last_tick = last_tick.max(shared.tick.load(Ordering::SeqCst));
                    ok = sink.send(frame(last_tick, body)).await.is_ok();
                }
            }
            msg = frames.recv() => match msg {
                Ok(f) => {
                    if f.0 >= last_tick {
                        last_tick = f.0;
                        ok = sink.send(Message::Text(f.1.clone().into())).await.is_ok();
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(body) = direct.recv() => {
                last_tick = last_tick.max(shared.tick.load(Ordering::SeqCst));
                ok = sink.send(frame(last_tick, body)).await.is_ok();
            }
        }
    }
    let _ = shared.commands.send(Command::Leave { conn });
}

fn kind(b: &Body) -> &'static str {
    match b {
        Body::Hello(_) => "hello",
        Body::SceneChunk(_) => "scene_chunk",
        Body::State(_) => "state",
        Body::Input(_) => "input",
        Body::ConfigUpdate(_) => "config_update",
        Body::Config { .. } => "config",
        Body::Ping { .. } => "ping",
        Body::Pong { .. } => "pong",
        Body::Error { .. } => "error",
    }
}
