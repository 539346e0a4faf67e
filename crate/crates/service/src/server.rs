use crate::pointer::PointerSceneConfig;
use crate::protocol::{ClientMessage, ClockMode, ServerMessage, SessionReport};
use crate::session::{Session, SessionError};
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evgest_core::eval::TrialConfig;
use evgest_core::events::{decode_events, Event, EventStream, SensorGeometry};
use evgest_core::model::GestureModel;
use evgest_core::pipeline::{run_pipeline, DetectionEvent, PipelineConfig, PipelineStats, SurfaceClassifier, ThresholdPolicy};
use evgest_core::representation::{build_time_surface, TimeSurface};
use evgest_core::simulator::{EsimConfig, GestureClass};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use tokio::sync::Notify;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub model_name: String,
    pub pipeline: PipelineConfig,
    pub scene: PointerSceneConfig,
    pub esim: EsimConfig,
    /// Sessions without a connection are dropped after this long.
    pub idle_timeout: Duration,
    /// Wall-clocked sessions evaluate windows this far behind real time so
    /// that pointer batches in flight are not late.
    pub live_delay_us: u64,
    /// Undelivered detections kept per subscriber before the oldest is dropped.
    pub subscriber_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            model_name: "model".into(),
            pipeline: PipelineConfig::default(),
            scene: PointerSceneConfig::default(),
            esim: EsimConfig::default(),
            idle_timeout: Duration::from_secs(300),
            live_delay_us: 150_000,
            subscriber_capacity: 64,
        }
    }
}

pub struct AppState {
    model: Arc<GestureModel>,
    config: ServerConfig,
    sessions: Mutex<HashMap<String, Arc<SessionEntry>>>,
}

impl AppState {
    pub fn new(model: GestureModel, config: ServerConfig) -> Arc<Self> {
        Arc::new(Self { model: Arc::new(model), config, sessions: Mutex::new(HashMap::new()) })
    }

    fn classifier(&self) -> Arc<dyn SurfaceClassifier> {
        self.model.clone()
    }

    fn session(&self, id: &str) -> Option<Arc<SessionEntry>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions that have had no connection for longer than the idle timeout.
    pub fn reap_idle(&self) -> usize {
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, e| {
            let keep = e.connections.load(Ordering::SeqCst) > 0
                || e.last_active.lock().unwrap().elapsed() < self.config.idle_timeout;
            if !keep {
                e.closed.store(true, Ordering::SeqCst);
            }
            keep
        });
        before - sessions.len()
    }
}

/// Per-subscriber queue. Detections beyond the capacity push out the oldest
/// queued detection; other messages are always kept.
struct Outbox {
    inner: Mutex<OutboxInner>,
    notify: Notify,
    capacity: usize,
}

#[derive(Default)]
struct OutboxInner {
    items: VecDeque<ServerMessage>,
    lossy: usize,
    dropped: u64,
}

impl Outbox {
    fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Self { inner: Mutex::default(), notify: Notify::new(), capacity: capacity.max(1) })
    }

    fn push(&self, msg: ServerMessage) {
        let mut q = self.inner.lock().unwrap();
        if msg.is_lossy() {
            if q.lossy >= self.capacity {
                if let Some(i) = q.items.iter().position(ServerMessage::is_lossy) {
                    q.items.remove(i);
                    q.lossy -= 1;
                    q.dropped += 1;
                }
            }
            q.lossy += 1;
        }
        q.items.push_back(msg);
        drop(q);
        self.notify.notify_one();
    }

    fn drain(&self) -> Vec<ServerMessage> {
        let mut q = self.inner.lock().unwrap();
        q.lossy = 0;
        let dropped = q.dropped;
        q.items
            .drain(..)
            .map(|m| match m {
                ServerMessage::Stats(mut s) => {
                    s.dropped_detections = dropped;
                    ServerMessage::Stats(s)
                }
                other => other,
            })
            .collect()
    }
}

struct SessionEntry {
    session: Mutex<Session>,
    subscribers: Mutex<Vec<Arc<Outbox>>>,
    connections: AtomicUsize,
    last_active: Mutex<Instant>,
    closed: AtomicBool,
}

impl SessionEntry {
    fn publish(&self, msgs: Vec<ServerMessage>) {
        if msgs.is_empty() {
            return;
        }
        let subs = self.subscribers.lock().unwrap();
        for m in msgs {
            for s in subs.iter() {
                s.push(m.clone());
            }
        }
    }

    fn touch(&self) {
        *self.last_active.lock().unwrap() = Instant::now();
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/model", get(model_info))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/report", get(session_report))
        .route("/sessions/{id}/surface.pgm", get(session_surface))
        .route("/sessions/{id}/live", get(live))
        .route("/infer", post(infer))
        .route("/surface.pgm", post(surface_from_events))
        .with_state(state)
}

/// Serves until the process is stopped, reaping idle sessions in the background.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    spawn_reaper(state.clone());
    axum::serve(listener, router(state)).await
}

pub fn spawn_reaper(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.config.idle_timeout / 4).max(Duration::from_millis(10));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            state.reap_idle();
        }
    })
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session {id}"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassInfo {
    pub index: usize,
    pub name: GestureClass,
    pub code: String,
    pub emittable: bool,
    pub threshold: Option<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub parameters: usize,
    pub geometry: SensorGeometry,
    pub window_us: u64,
    pub stride_us: u64,
    pub refractory_us: u64,
    pub classes: Vec<ClassInfo>,
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    let p = &state.config.pipeline;
    Json(ModelInfo {
        name: state.config.model_name.clone(),
        parameters: state.model.param_count(),
        geometry: state.model.config().geometry,
        window_us: p.aggregator.window_length,
        stride_us: p.aggregator.stride,
        refractory_us: p.policy.refractory_us,
        classes: GestureClass::ALL
            .into_iter()
            .map(|c| ClassInfo {
                index: c.index(),
                name: c,
                code: c.code().into(),
                emittable: c.is_emittable(),
                threshold: p.policy.threshold(c),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateSession {
    pub trial: TrialConfig,
    pub clock: ClockMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub prompts: usize,
    pub duration_us: u64,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let c = &state.config;
    let session = Session::new(id.clone(), req.trial.clone(), req.clock, state.classifier(), c.pipeline.clone(), c.scene, c.esim)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let entry = Arc::new(SessionEntry {
        session: Mutex::new(session),
        subscribers: Mutex::new(Vec::new()),
        connections: AtomicUsize::new(0),
        last_active: Mutex::new(Instant::now()),
        closed: AtomicBool::new(false),
    });
    state.sessions.lock().unwrap().insert(id.clone(), entry);
    let created = SessionCreated {
        id,
        prompts: req.trial.gestures.len() * req.trial.repetitions,
        duration_us: req.trial.total_duration_us(),
    };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn session_report(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionReport>, ApiError> {
    let entry = state.session(&id).ok_or_else(|| not_found(&id))?;
    let report = entry.session.lock().unwrap().report();
    Ok(Json(report))
}

#[derive(Debug, Deserialize)]
struct SurfaceQuery {
    #[serde(default)]
    channel: Option<usize>,
    #[serde(default)]
    t_us: Option<u64>,
}

fn pgm_response(surface: &TimeSurface, channel: Option<usize>) -> Result<Response, ApiError> {
    let bytes = match channel {
        Some(c @ 0..=1) => surface.to_pgm(c),
        Some(c) => return Err(ApiError(StatusCode::BAD_REQUEST, format!("channel {c} out of range"))),
        None => side_by_side_pgm(surface),
    };
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes).into_response())
}

/// Negative channel on the left, positive on the right.
fn side_by_side_pgm(surface: &TimeSurface) -> Vec<u8> {
    let w = surface.geometry.width as usize;
    let h = surface.geometry.height as usize;
    let mut out = format!("P5\n{} {}\n255\n", 2 * w, h).into_bytes();
    let (neg, pos) = (surface.channel(0), surface.channel(1));
    let px = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for y in 0..h {
        out.extend(neg[y * w..(y + 1) * w].iter().copied().map(px));
        out.extend(pos[y * w..(y + 1) * w].iter().copied().map(px));
    }
    out
}

async fn session_surface(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SurfaceQuery>,
) -> Result<Response, ApiError> {
    let entry = state.session(&id).ok_or_else(|| not_found(&id))?;
    let surface = entry.session.lock().unwrap().last_surface().cloned();
    let surface = surface.ok_or_else(|| ApiError(StatusCode::NOT_FOUND, "no window evaluated yet".into()))?;
    pgm_response(&surface, q.channel)
}

fn decode_upload(state: &AppState, body: &[u8]) -> Result<EventStream, ApiError> {
    let stream = decode_events(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let g = state.model.config().geometry;
    if stream.geometry != g {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!(
                "stream is {}x{}, model expects {}x{}",
                stream.geometry.width, stream.geometry.height, g.width, g.height
            ),
        ));
    }
    Ok(stream)
}

/// Time surface of an uploaded stream at `t_us` (default: its last timestamp).
async fn surface_from_events(
    State(state): State<Arc<AppState>>,
    Query(q): Query<SurfaceQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let stream = decode_upload(&state, &body)?;
    let t = q.t_us.or(stream.last_timestamp()).unwrap_or(0);
    let surface = build_time_surface(&stream, t, state.config.pipeline.aggregator.window_length);
    pgm_response(&surface, q.channel)
}

#[derive(Debug, Deserialize)]
struct InferQuery {
    threshold: Option<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferResponse {
    pub detections: Vec<DetectionEvent>,
    pub stats: PipelineStats,
}

async fn infer(
    State(state): State<Arc<AppState>>,
    Query(q): Query<InferQuery>,
    body: Bytes,
) -> Result<Json<InferResponse>, ApiError> {
    let stream = decode_upload(&state, &body)?;
    let mut config = state.config.pipeline.clone();
    if let Some(t) = q.threshold {
        config.policy = ThresholdPolicy { refractory_us: config.policy.refractory_us, ..ThresholdPolicy::uniform(t) };
    }
    let classifier = state.classifier();
    let run = tokio::task::spawn_blocking(move || run_pipeline(classifier, &stream, &config))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Ok(Json(InferResponse { detections: run.detections, stats: run.stats }))
}

async fn live(
    ws: WebSocketUpgrade,
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let entry = state.session(&id).ok_or_else(|| not_found(&id))?;
    Ok(ws.on_upgrade(move |socket| handle_socket(socket, state, entry)))
}

enum Input {
    Client(ClientMessage),
    Events(Vec<Event>),
}

async fn apply(entry: &Arc<SessionEntry>, input: Input) -> Result<Vec<ServerMessage>, SessionError> {
    let entry = entry.clone();
    tokio::task::spawn_blocking(move || {
        let mut s = entry.session.lock().unwrap();
        match input {
            Input::Events(events) => s.push_events(&events),
            Input::Client(ClientMessage::PointerBatch { samples }) => s.push_pointer(&samples),
            Input::Client(ClientMessage::Advance { t_us }) => s.advance(t_us),
            Input::Client(ClientMessage::Finish {}) => s.finish(),
        }
    })
    .await
    .expect("session task panicked")
}

fn parse_binary(state: &AppState, bytes: &[u8]) -> Result<Vec<Event>, String> {
    decode_upload(state, bytes).map(|s| s.events).map_err(|e| e.1)
}

fn start_wall_clock(state: &Arc<AppState>, entry: &Arc<SessionEntry>) {
    {
        let mut s = entry.session.lock().unwrap();
        if s.clock() != ClockMode::Wall || !s.start_wall_clock() {
            return;
        }
    }
    let stride = Duration::from_micros(state.config.pipeline.aggregator.stride);
    let delay = state.config.live_delay_us;
    let entry = entry.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(stride);
        loop {
            tick.tick().await;
            if entry.closed.load(Ordering::SeqCst) {
                break;
            }
            let e = entry.clone();
            let result = tokio::task::spawn_blocking(move || {
                let mut s = e.session.lock().unwrap();
                if s.is_finished() {
                    return None;
                }
                let t = s.wall_time_us().unwrap_or(0).saturating_sub(delay);
                Some(s.advance_to(t))
            })
            .await;
            match result {
                Ok(Some(Ok(msgs))) => entry.publish(msgs),
                _ => break,
            }
        }
    });
}

async fn handle_socket(mut socket: WebSocket, state: Arc<AppState>, entry: Arc<SessionEntry>) {
    let outbox = Outbox::new(state.config.subscriber_capacity);
    entry.connections.fetch_add(1, Ordering::SeqCst);
    entry.subscribers.lock().unwrap().push(outbox.clone());
    for m in entry.session.lock().unwrap().greeting() {
        outbox.push(m);
    }
    start_wall_clock(&state, &entry);

    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let input = match incoming {
                    Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientMessage>(&text) {
                        Ok(m) => Input::Client(m),
                        Err(e) => {
                            outbox.push(ServerMessage::error(format!("bad message: {e}")));
                            continue;
                        }
                    },
                    Some(Ok(Message::Binary(bytes))) => match parse_binary(&state, &bytes) {
                        Ok(events) => Input::Events(events),
                        Err(e) => {
                            outbox.push(ServerMessage::error(format!("bad event batch: {e}")));
                            continue;
                        }
                    },
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                };
                entry.touch();
                match apply(&entry, input).await {
                    Ok(msgs) => entry.publish(msgs),
                    Err(e) => outbox.push(ServerMessage::error(e.to_string())),
                }
            }
            _ = outbox.notify.notified() => {
                for m in outbox.drain() {
                    let text = serde_json::to_string(&m).expect("server messages serialize");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
            }
        }
    }

    entry.subscribers.lock().unwrap().retain(|s| !Arc::ptr_eq(s, &outbox));
    entry.connections.fetch_sub(1, Ordering::SeqCst);
    entry.touch();
}
