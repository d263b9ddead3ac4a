//! WebSocket transport for live sessions and log replay.
//!
//! One task owns the session and ticks it; each connection runs a reader
//! and a writer task that talk to it over channels.

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;
use tokio::sync::{mpsc, oneshot};
use tokio::time::{Instant, MissedTickBehavior};

use teer_core::gateway::{ClientId, Envelope, Outgoing, ReplayFeed, Role, Session, WireMessage};
use teer_core::trials::{replay as replay_log, verify, TrialLog};
use teer_core::SessionConfig;

/// Per-client outbound queue depth. A client this far behind is dropped,
/// since skipping snapshots would break its gapless stream.
const CLIENT_QUEUE: usize = 1024;

enum Out {
    Text(String),
    Close,
}

enum Inbound {
    Connect { role: Role, tx: mpsc::Sender<Out>, reply: oneshot::Sender<Option<ClientId>> },
    Text { client: ClientId, text: String },
    Gone { client: ClientId },
}

type Hub = mpsc::UnboundedSender<Inbound>;

/// Outbound queues of connected clients.
#[derive(Default)]
struct Clients {
    queues: BTreeMap<ClientId, mpsc::Sender<Out>>,
}

impl Clients {
    /// Queue a message; returns false (and forgets the client) if it cannot keep up.
    fn send(&mut self, client: ClientId, out: Out) -> bool {
        let ok = self.queues.get(&client).is_some_and(|q| q.try_send(out).is_ok());
        if !ok {
            self.queues.remove(&client);
        }
        ok
    }

    fn broadcast(&mut self, text: &str) -> Vec<ClientId> {
        let ids: Vec<ClientId> = self.queues.keys().copied().collect();
        ids.into_iter().filter(|id| !self.send(*id, Out::Text(text.to_string()))).collect()
    }

    fn close(&mut self, client: ClientId) {
        self.send(client, Out::Close);
        self.queues.remove(&client);
    }
}

async fn bind(host: &str, port: u16) -> Result<tokio::net::TcpListener> {
    let listener = tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("cannot listen on {host}:{port} (port busy?)"))?;
    println!("listening on {}", listener.local_addr()?);
    use std::io::Write;
    std::io::stdout().flush()?;
    Ok(listener)
}

fn router(hub: Hub) -> Router {
    Router::new()
        .route("/driver", get(|ws: WebSocketUpgrade, State(hub): State<Hub>| async move { upgrade(ws, hub, Role::Driver) }))
        .route("/observer", get(|ws: WebSocketUpgrade, State(hub): State<Hub>| async move { upgrade(ws, hub, Role::Observer) }))
        .with_state(hub)
}

fn upgrade(ws: WebSocketUpgrade, hub: Hub, role: Role) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, hub, role))
}

async fn connection(socket: WebSocket, hub: Hub, role: Role) {
    let (tx, mut rx) = mpsc::channel(CLIENT_QUEUE);
    let (reply, accepted) = oneshot::channel();
    if hub.send(Inbound::Connect { role, tx, reply }).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let client = accepted.await.ok().flatten();
    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Out::Text(t) => {
                    if sink.send(Message::Text(t)).await.is_err() {
                        break;
                    }
                }
                Out::Close => break,
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });
    if let Some(client) = client {
        while let Some(msg) = stream.next().await {
            let text = match msg {
                Ok(Message::Text(t)) => t,
                Ok(Message::Binary(_)) => String::from("<binary>"),
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            if hub.send(Inbound::Text { client, text }).is_err() {
                break;
            }
        }
        let _ = hub.send(Inbound::Gone { client });
    }
    let _ = writer.await;
}

fn dispatch(session: &mut Session<'_>, clients: &mut Clients, outgoing: Vec<Outgoing>) {
    let mut dropped = Vec::new();
    for out in outgoing {
        match out {
            Outgoing::Broadcast(env) => dropped.extend(clients.broadcast(&env.to_json())),
            Outgoing::To(c, env) => {
                if !clients.send(c, Out::Text(env.to_json())) {
                    dropped.push(c);
                }
            }
            Outgoing::Close(c, env) => {
                log::info!("closing client {c}: {:?}", env.message);
                clients.send(c, Out::Text(env.to_json()));
                clients.close(c);
                dropped.push(c);
            }
        }
    }
    for c in dropped {
        session.disconnect(c);
    }
}

fn rejection(session_id: &str, seq: u64, message: String) -> String {
    Envelope { session_id: session_id.to_string(), seq, message: WireMessage::Error { message } }.to_json()
}

async fn session_loop(config: Arc<SessionConfig>, mut inbox: mpsc::UnboundedReceiver<Inbound>) {
    let id = format!("{:016x}", std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64));
    let mut session = Session::new(&config, id);
    let mut clients = Clients::default();
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(config.dt()));
    ticker.set_missed_tick_behavior(MissedTickBehavior::Burst);
    loop {
        tokio::select! {
            _ = ticker.tick() => {
                let out = session.tick();
                dispatch(&mut session, &mut clients, out);
            }
            msg = inbox.recv() => match msg {
                None => return,
                Some(Inbound::Connect { role, tx, reply }) => match session.connect(role) {
                    Ok((client, first)) => {
                        let _ = tx.try_send(Out::Text(first.to_json()));
                        clients.queues.insert(client, tx);
                        log::info!("client {client} connected as {role:?}");
                        let _ = reply.send(Some(client));
                    }
                    Err(e) => {
                        let seq = session.latest_snapshot().seq;
                        let _ = tx.try_send(Out::Text(rejection(session.id(), seq, e.to_string())));
                        let _ = tx.try_send(Out::Close);
                        let _ = reply.send(None);
                    }
                },
                Some(Inbound::Text { client, text }) => {
                    let out = session.receive(client, &text);
                    dispatch(&mut session, &mut clients, out);
                }
                Some(Inbound::Gone { client }) => {
                    clients.queues.remove(&client);
                    session.disconnect(client);
                    log::info!("client {client} left");
                }
            }
        }
    }
}

/// Run a live session until interrupted.
pub fn serve(config: SessionConfig, host: &str, port: u16) -> Result<()> {
    config.validate()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = bind(host, port).await?;
        let (hub, inbox) = mpsc::unbounded_channel();
        tokio::spawn(session_loop(Arc::new(config), inbox));
        axum::serve(listener, router(hub)).await?;
        Ok(())
    })
}

/// Stream a finished trial to observers: waits for the first observer, plays
/// the log at `speed`, sends the summary and closes every connection.
pub fn replay(config: SessionConfig, path: &Path, speed: f64, host: &str, port: u16) -> Result<()> {
    let log = TrialLog::load(path).with_context(|| format!("loading {}", path.display()))?;
    verify(&log, &config)?;
    replay_log(&log, &config, speed)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = bind(host, port).await?;
        let (hub, inbox) = mpsc::unbounded_channel();
        let server = tokio::spawn(async move { axum::serve(listener, router(hub)).await });
        replay_loop(&config, &log, speed, inbox).await?;
        server.abort();
        Ok(())
    })
}

async fn replay_loop(config: &SessionConfig, log: &TrialLog, speed: f64, mut inbox: mpsc::UnboundedReceiver<Inbound>) -> Result<()> {
    let mut feed = ReplayFeed::new(config, log, "replay");
    let mut clients = Clients::default();
    let mut next_client: ClientId = 1;

    let mut handle = |msg: Inbound, feed: &ReplayFeed<'_>, clients: &mut Clients| match msg {
        Inbound::Connect { role: Role::Driver, tx, reply } => {
            let seq = feed.latest_snapshot().map_or(0, |e| e.seq);
            let _ = tx.try_send(Out::Text(rejection("replay", seq, "replay sessions accept observers only".into())));
            let _ = tx.try_send(Out::Close);
            let _ = reply.send(None);
        }
        Inbound::Connect { role: Role::Observer, tx, reply } => {
            let id = next_client;
            next_client += 1;
            if let Some(env) = feed.latest_snapshot() {
                let _ = tx.try_send(Out::Text(env.to_json()));
            }
            clients.queues.insert(id, tx);
            let _ = reply.send(Some(id));
        }
        Inbound::Text { client, .. } => {
            let seq = feed.latest_snapshot().map_or(0, |e| e.seq);
            clients.send(client, Out::Text(rejection("replay", seq, "observers are receive-only".into())));
            clients.close(client);
        }
        Inbound::Gone { client } => {
            clients.queues.remove(&client);
        }
    };

    while clients.queues.is_empty() {
        match inbox.recv().await {
            Some(msg) => handle(msg, &feed, &mut clients),
            None => return Ok(()),
        }
    }
    let start = Instant::now();
    let mut due = Duration::ZERO;
    for (i, frame) in replay_log(log, config, speed)?.enumerate() {
        due += frame.delay;
        tokio::time::sleep_until(start + due).await;
        while let Ok(msg) = inbox.try_recv() {
            handle(msg, &feed, &mut clients);
        }
        for env in feed.frame(&frame, i as u64) {
            clients.broadcast(&env.to_json());
        }
        if speed == 0.0 && i % 64 == 0 {
            tokio::task::yield_now().await;
        }
    }
    if let Some(env) = feed.summary() {
        clients.broadcast(&env.to_json());
    }
    let ids: Vec<ClientId> = clients.queues.keys().copied().collect();
    for id in ids {
        clients.close(id);
    }
    // Let writer tasks flush before the runtime shuts down.
    tokio::time::sleep(Duration::from_millis(200)).await;
    Ok(())
}
