//! Live session: one environment stepped by a loaded policy at a fixed tick
//! rate, streamed to any number of WebSocket subscribers, with free-text
//! instructions routed through a translator.
//!
//! Every message is a JSON text frame carrying `"version"` and `"type"`.
//! Server to client: `hello`, `frame`, `instruction_status`, `error`.
//! Client to server: `{"type": "instruction", "text": "...", "id": "..."}`
//! (the id is optional and echoed back in status frames).

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use icco_core::env::{EventCounts, Home, InvaderState, ResourceState, Scenario, WorldState};
use icco_core::eval::{confined_walks, Controller, EvalError, GreedyPolicy, Rollout};
use icco_core::instruction::{InstructionVector, Region, WalkNoise};
use icco_core::llm::Translate;
use icco_core::Vec2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames buffered per subscriber before the slowest one starts missing frames.
const SUBSCRIBER_BUFFER: usize = 64;

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub tick_hz: f64,
    pub translator_timeout: Duration,
    /// Seed of the first episode; later episodes count up from it.
    pub seed: u64,
    pub walk_sigma: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            tick_hz: 10.0,
            translator_timeout: Duration::from_secs(60),
            seed: 0,
            walk_sigma: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionSource {
    RandomWalk,
    Instruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Applied,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    TranslatorTimeout,
    TranslationFailed,
    BadRequest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub position: Vec2,
    pub carrying: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardView {
    pub r_task: f64,
    pub r_inst: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cumulative {
    pub picks: u32,
    pub collects: u32,
    pub defenses: u32,
    pub breaches: u32,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        tick_hz: f64,
        n_agents: usize,
        half_extent: f64,
        refresh_interval: usize,
    },
    Frame {
        version: u32,
        tick: u64,
        episode: u64,
        time_step: usize,
        source: InstructionSource,
        /// Text of the instruction currently in force, if any.
        instruction: Option<String>,
        agents: Vec<AgentView>,
        invader: InvaderState,
        resources: Vec<ResourceState>,
        home: Home,
        waypoints: Vec<Vec<Vec2>>,
        reward: RewardView,
        cumulative: Cumulative,
    },
    InstructionStatus {
        version: u32,
        id: String,
        text: String,
        status: Status,
        tick: u64,
        error: Option<String>,
    },
    Error {
        version: u32,
        code: ErrorCode,
        message: String,
        id: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Instruction { text: String, id: Option<String> },
}

#[derive(Debug)]
struct Submitted {
    id: String,
    text: String,
}

struct Translated {
    id: String,
    text: String,
    result: Result<InstructionVector, (ErrorCode, String)>,
}

pub type SharedTranslator = Arc<Mutex<Box<dyn Translate + Send>>>;

/// Cheap handle shared by the HTTP handlers.
#[derive(Clone)]
pub struct SessionHandle {
    frames: broadcast::Sender<Arc<str>>,
    intake: mpsc::UnboundedSender<Submitted>,
    hello: Arc<str>,
    next_id: Arc<std::sync::atomic::AtomicU64>,
}

impl SessionHandle {
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.frames.subscribe()
    }

    /// Queues an instruction; returns the id used in its status frames.
    pub fn submit(&self, text: String, id: Option<String>) -> String {
        let id = id.unwrap_or_else(|| {
            let n = self.next_id.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            format!("i{n}")
        });
        // A closed intake means the loop has stopped; the client sees no
        // further frames either way.
        let _ = self.intake.send(Submitted { id: id.clone(), text });
        id
    }
}

fn encode(msg: &ServerMessage) -> Arc<str> {
    serde_json::to_string(msg).expect("server messages serialize").into()
}

struct Session {
    scenario: Scenario,
    policy: GreedyPolicy,
    rollout: Rollout,
    config: ServeConfig,
    translator: SharedTranslator,
    frames: broadcast::Sender<Arc<str>>,
    intake: mpsc::UnboundedReceiver<Submitted>,
    done_tx: mpsc::UnboundedSender<Translated>,
    done_rx: mpsc::UnboundedReceiver<Translated>,
    pending: Option<(String, String, InstructionVector)>,
    source: InstructionSource,
    instruction_text: Option<String>,
    walk_rng: ChaCha8Rng,
    noise: WalkNoise,
    tick: u64,
    episode: u64,
    cumulative: Cumulative,
}

impl Session {
    fn send(&self, msg: &ServerMessage) {
        // No subscribers is not an error: the session runs regardless.
        let _ = self.frames.send(encode(msg));
    }

    fn status(&self, id: &str, text: &str, status: Status, error: Option<String>) {
        self.send(&ServerMessage::InstructionStatus {
            version: PROTOCOL_VERSION,
            id: id.to_string(),
            text: text.to_string(),
            status,
            tick: self.tick,
            error,
        });
    }

    fn start_translation(&self, s: Submitted) {
        self.status(&s.id, &s.text, Status::Pending, None);
        let world = self.rollout.world.clone();
        let scenario = self.scenario.clone();
        let translator = self.translator.clone();
        let done = self.done_tx.clone();
        let timeout = self.config.translator_timeout;
        tokio::spawn(async move {
            let text = s.text.clone();
            let job = tokio::task::spawn_blocking(move || {
                let mut t = translator.lock().unwrap_or_else(|p| p.into_inner());
                t.translate(&text, &world, &scenario).map(|r| r.instructions)
            });
            let result = match tokio::time::timeout(timeout, job).await {
                Err(_) => Err((ErrorCode::TranslatorTimeout, format!("no translation within {timeout:?}"))),
                Ok(Err(join)) => Err((ErrorCode::TranslationFailed, join.to_string())),
                Ok(Ok(r)) => r.map_err(|e| (ErrorCode::TranslationFailed, e.to_string())),
            };
            let _ = done.send(Translated {
                id: s.id,
                text: s.text,
                result,
            });
        });
    }

    fn next_instructions(&mut self) -> Option<InstructionVector> {
        if !self.rollout.refresh_due() {
            return None;
        }
        if let Some((id, text, iv)) = self.pending.take() {
            self.source = InstructionSource::Instruction;
            self.instruction_text = Some(text.clone());
            self.status(&id, &text, Status::Applied, None);
            return Some(iv);
        }
        match self.source {
            InstructionSource::RandomWalk => {
                let region = Region::square(self.scenario.half_extent());
                Some(confined_walks(&self.rollout.world, self.rollout.instructions.k(), &self.noise, region, &mut self.walk_rng))
            }
            InstructionSource::Instruction => None,
        }
    }

    fn tick(&mut self) -> Result<(), EvalError> {
        while let Ok(s) = self.intake.try_recv() {
            if s.text.trim().is_empty() {
                self.send(&ServerMessage::Error {
                    version: PROTOCOL_VERSION,
                    code: ErrorCode::BadRequest,
                    message: "empty instruction".into(),
                    id: Some(s.id.clone()),
                });
                self.status(&s.id, &s.text, Status::Failed, Some("empty instruction".into()));
                continue;
            }
            self.start_translation(s);
        }
        while let Ok(t) = self.done_rx.try_recv() {
            match t.result {
                Ok(iv) => self.pending = Some((t.id, t.text, iv)),
                Err((code, message)) => {
                    self.send(&ServerMessage::Error {
                        version: PROTOCOL_VERSION,
                        code,
                        message: message.clone(),
                        id: Some(t.id.clone()),
                    });
                    self.status(&t.id, &t.text, Status::Failed, Some(message));
                }
            }
        }
        if self.rollout.finished() {
            self.episode += 1;
            let k = self.rollout.instructions.k();
            self.rollout = Rollout::new(self.scenario.clone(), self.config.seed + self.episode, k, self.policy.model.config.refresh_interval)?;
            self.policy.begin_episode();
            // Waypoints from the previous layout mean nothing in the new one.
            self.source = InstructionSource::RandomWalk;
            self.instruction_text = None;
            self.cumulative = Cumulative::default();
        }
        let next = self.next_instructions();
        let report = self.rollout.step(&mut self.policy, next)?;
        let counts = EventCounts::from_events(&report.outcome.events);
        let r = &report.outcome.reward;
        self.cumulative.picks += counts.picks;
        self.cumulative.collects += counts.collects;
        self.cumulative.defenses += counts.defenses;
        self.cumulative.breaches += counts.breaches;
        self.cumulative.reward += r.r_task + r.r_inst;
        let world: &WorldState = &self.rollout.world;
        let frame = ServerMessage::Frame {
            version: PROTOCOL_VERSION,
            tick: self.tick,
            episode: self.episode,
            time_step: world.time_step,
            source: self.source,
            instruction: self.instruction_text.clone(),
            agents: world
                .agents
                .iter()
                .map(|a| AgentView {
                    position: a.position,
                    carrying: a.carrying,
                })
                .collect(),
            invader: world.invader,
            resources: world.resources.clone(),
            home: world.home,
            waypoints: self.rollout.instructions.waypoints().to_vec(),
            reward: RewardView {
                r_task: r.r_task,
                r_inst: r.r_inst,
                total: r.r_task + r.r_inst,
            },
            cumulative: self.cumulative.clone(),
        };
        self.send(&frame);
        self.tick += 1;
        Ok(())
    }
}

/// Builds the session and spawns its simulation loop on the current runtime.
pub fn start_session(policy: GreedyPolicy, translator: SharedTranslator, config: ServeConfig) -> anyhow::Result<SessionHandle> {
    anyhow::ensure!(config.tick_hz > 0.0, "tick rate must be positive");
    let scenario = Scenario::default();
    policy.check_scenario(&scenario)?;
    let mc = &policy.model.config;
    let rollout = Rollout::new(scenario.clone(), config.seed, mc.waypoints, mc.refresh_interval)?;
    let (frames, _) = broadcast::channel(SUBSCRIBER_BUFFER);
    let (intake_tx, intake) = mpsc::unbounded_channel();
    let (done_tx, done_rx) = mpsc::unbounded_channel();
    let hello = encode(&ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        tick_hz: config.tick_hz,
        n_agents: scenario.n_agents,
        half_extent: scenario.half_extent(),
        refresh_interval: mc.refresh_interval,
    });
    let mut session = Session {
        noise: WalkNoise::new(config.walk_sigma)?,
        walk_rng: ChaCha8Rng::seed_from_u64(config.seed),
        scenario,
        policy,
        rollout,
        translator,
        frames: frames.clone(),
        intake,
        done_tx,
        done_rx,
        pending: None,
        source: InstructionSource::RandomWalk,
        instruction_text: None,
        tick: 0,
        episode: 0,
        cumulative: Cumulative::default(),
        config,
    };
    let period = Duration::from_secs_f64(1.0 / session.config.tick_hz);
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            if let Err(e) = session.tick() {
                tracing::error!(error = %e, "simulation stopped");
                break;
            }
        }
    });
    Ok(SessionHandle {
        frames,
        intake: intake_tx,
        hello,
        next_id: Arc::new(std::sync::atomic::AtomicU64::new(0)),
    })
}

async fn ws_handler(ws: WebSocketUpgrade, State(h): State<SessionHandle>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| subscriber(socket, h))
}

async fn subscriber(socket: WebSocket, h: SessionHandle) {
    let (mut tx, mut rx) = socket.split();
    let mut frames = h.subscribe();
    if tx.send(Message::Text(h.hello.to_string().into())).await.is_err() {
        return;
    }
    let intake = h.clone();
    let reader = tokio::spawn(async move {
        let mut errors = Vec::new();
        while let Some(Ok(msg)) = rx.next().await {
            let Message::Text(text) = msg else { continue };
            match serde_json::from_str::<ClientMessage>(&text) {
                Ok(ClientMessage::Instruction { text, id }) => {
                    intake.submit(text, id);
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
        errors
    });
    loop {
        match frames.recv().await {
            Ok(frame) => {
                if tx.send(Message::Text(frame.to_string().into())).await.is_err() {
                    break;
                }
            }
            // This subscriber fell behind; it skips ahead, nobody else waits.
            Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!(skipped = n, "slow subscriber"),
            Err(broadcast::error::RecvError::Closed) => break,
        }
        if reader.is_finished() {
            break;
        }
    }
    reader.abort();
}

#[derive(Deserialize)]
struct InstructionRequest {
    text: String,
    id: Option<String>,
}

async fn post_instruction(State(h): State<SessionHandle>, Json(req): Json<InstructionRequest>) -> impl IntoResponse {
    let id = h.submit(req.text, req.id);
    (StatusCode::ACCEPTED, Json(serde_json::json!({ "id": id })))
}

async fn hello(State(h): State<SessionHandle>) -> impl IntoResponse {
    ([(axum::http::header::CONTENT_TYPE, "application/json")], h.hello.to_string())
}

pub fn router(handle: SessionHandle) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .route("/instruction", post(post_instruction))
        .route("/session", get(hello))
        .with_state(handle)
}

/// Serves `handle` on an already bound listener until the task is dropped.
pub async fn serve_on(listener: TcpListener, handle: SessionHandle) -> std::io::Result<()> {
    axum::serve(listener, router(handle)).await
}

pub async fn bind(addr: SocketAddr) -> anyhow::Result<TcpListener> {
    TcpListener::bind(addr).await.map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))
}
