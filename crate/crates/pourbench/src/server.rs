//! Interactive pouring sessions over a websocket.
//!
//! Each connection owns one simulator at a time. The client starts a run,
//! streams velocity commands (the latest one is applied at every step) and
//! receives the scale reading at the simulation rate. Finished runs are
//! written to `<out>/<session>/` as trial files together with a running
//! error summary.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use pourbench_core::control::UPRIGHT_TOL;
use pourbench_core::seed::derive_seed;
use pourbench_core::{
    error_stats, ContainerRegistry, ErrorStats, LiquidSpec, PourRun, RunConfig, RunResult, SensorModel, SimConfig,
    StopReason,
};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::format::{self, FormatError, FORMAT_VERSION};
use crate::report::PHYSICAL_REFERENCE_HUMAN;
use crate::trials::trial_to_line;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start { container: String, liquid: String, vol_total: f64, vol_2pour: f64 },
    Velocity { omega: f64 },
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session: String,
        containers: Vec<String>,
        liquids: Vec<String>,
        dt: f64,
    },
    State {
        t: f64,
        theta: f64,
        sensor_vol: f64,
        target_vol: f64,
        done: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        final_error: Option<f64>,
    },
    Summary {
        session: String,
        errors: Vec<f64>,
        stats: ErrorStats,
        reference_mu_e: f64,
        reference_sigma_e: f64,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub registry: ContainerRegistry,
    pub liquids: Vec<LiquidSpec>,
    pub sim: SimConfig,
    pub sensor: SensorModel,
    pub timeout: f64,
    pub out: PathBuf,
    pub seed: u64,
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    pub ui: Option<PathBuf>,
}

impl ServeOptions {
    /// Default physics, the three standard liquids, real-time pacing.
    pub fn new(registry: ContainerRegistry, out: impl Into<PathBuf>) -> Self {
        Self {
            registry,
            liquids: pourbench_core::eval::default_liquids().to_vec(),
            sim: SimConfig::default(),
            sensor: SensorModel::default(),
            timeout: pourbench_core::control::DEFAULT_TIMEOUT,
            out: out.into(),
            seed: 0,
            speed: 1.0,
            ui: None,
        }
    }
}

pub struct AppState {
    opts: ServeOptions,
    session_prefix: String,
    next_session: AtomicU64,
    active: AtomicUsize,
}

impl AppState {
    pub fn new(opts: ServeOptions) -> Self {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self { opts, session_prefix: format!("session-{started}"), next_session: AtomicU64::new(1), active: AtomicUsize::new(0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub service: String,
    pub version: String,
    pub format_version: u32,
    pub active_sessions: usize,
    pub containers: Vec<String>,
    pub liquids: Vec<String>,
    pub dt: f64,
    pub speed: f64,
}

pub fn router(state: Arc<AppState>) -> Router {
    let app = Router::new().route("/health", get(health)).route("/ws", get(ws_upgrade));
    let app = match state.opts.ui.as_ref().filter(|p| p.is_dir()) {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(placeholder)),
    };
    app.with_state(state)
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    opts: ServeOptions,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(Arc::new(AppState::new(opts)));
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let o = &state.opts;
    Json(Health {
        status: "ok".into(),
        service: "pourbench".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        format_version: FORMAT_VERSION,
        active_sessions: state.active.load(Ordering::Relaxed),
        containers: o.registry.containers.iter().map(|e| e.container.name.clone()).collect(),
        liquids: o.liquids.iter().map(|l| l.name.clone()).collect(),
        dt: o.sim.dt,
        speed: o.speed,
    })
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>pourbench</title></head>\
         <body><p>pourbench session server. No UI bundle configured; connect a client to <code>/ws</code>.</p></body></html>",
    )
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| session(socket, state)).into_response()
}

struct ActiveRun {
    run: PourRun,
    container: String,
    liquid: String,
    omega: f64,
    retracting: bool,
}

impl ActiveRun {
    /// Command applied this step. Once the subject has pulled back to upright
    /// after pouring, tilting forward again is ignored.
    fn effective_omega(&mut self) -> f64 {
        if self.run.pour_entered() && self.omega < 0.0 {
            self.retracting = true;
        }
        let upright = self.run.simulator().state().theta <= UPRIGHT_TOL;
        if self.retracting && upright {
            self.omega.min(0.0)
        } else {
            self.omega
        }
    }
}

struct Session {
    id: String,
    dir: PathBuf,
    records: Vec<TrialSummary>,
    runs_started: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub file: String,
    pub container: String,
    pub liquid: String,
    pub vol_total: f64,
    pub vol_2pour: f64,
    pub error: f64,
    pub overpoured: bool,
    pub stop_reason: StopReason,
}

/// Contents of `<session>/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub format_version: u32,
    pub session: String,
    pub trials: Vec<TrialSummary>,
    pub stats: ErrorStats,
}

impl Session {
    fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    fn record(&mut self, active: &ActiveRun, result: &RunResult) -> Result<ServerMessage, FormatError> {
        let index = self.records.len() + 1;
        let file = format!("trial_{index:03}.jsonl");
        let mut line = trial_to_line(&result.trajectory);
        line.push('\n');
        format::write_file(&self.dir.join(&file), line.as_bytes())?;
        self.records.push(TrialSummary {
            index,
            file,
            container: active.container.clone(),
            liquid: active.liquid.clone(),
            vol_total: result.trajectory.vol_total,
            vol_2pour: result.trajectory.vol_2pour,
            error: result.final_error,
            overpoured: result.overpoured,
            stop_reason: result.stop_reason,
        });
        let errors = self.errors();
        let stats = error_stats(&errors).expect("at least one trial recorded");
        let summary =
            SessionSummary { format_version: FORMAT_VERSION, session: self.id.clone(), trials: self.records.clone(), stats };
        format::write_file(&self.dir.join("summary.json"), &format::to_json_bytes(&summary))?;
        Ok(ServerMessage::Summary {
            session: self.id.clone(),
            errors,
            stats,
            reference_mu_e: PHYSICAL_REFERENCE_HUMAN.0,
            reference_sigma_e: PHYSICAL_REFERENCE_HUMAN.1,
        })
    }
}

fn state_message(active: &ActiveRun, done: Option<&RunResult>) -> ServerMessage {
    let s = active.run.simulator().state();
    ServerMessage::State {
        t: s.t,
        theta: s.theta,
        sensor_vol: s.sensor,
        target_vol: active.run.config().vol_2pour,
        done: done.is_some(),
        final_error: done.map(|r| r.final_error),
    }
}

fn start_run(
    opts: &ServeOptions,
    session_no: u64,
    run_no: u64,
    container: &str,
    liquid: &str,
    vol_total: f64,
    vol_2pour: f64,
) -> Result<ActiveRun, String> {
    let entry = opts.registry.get(container).map_err(|e| e.to_string())?;
    let liquid_spec = opts
        .liquids
        .iter()
        .find(|l| l.name == liquid)
        .ok_or_else(|| format!("unknown liquid `{liquid}`"))?
        .clone();
    let mut rc = RunConfig::new(entry.container.clone(), liquid_spec, vol_total, vol_2pour);
    rc.sim = opts.sim.clone();
    rc.sensor = opts.sensor.with_seed(derive_seed(opts.seed, &[session_no, run_no]));
    rc.timeout = opts.timeout;
    let run = PourRun::new(rc).map_err(|e| e.to_string())?;
    Ok(ActiveRun { run, container: container.to_string(), liquid: liquid.to_string(), omega: 0.0, retracting: false })
}

async fn send(tx: &mut (impl SinkExt<Message> + Unpin), msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("in-memory JSON serialisation");
    tx.send(Message::Text(text.into())).await.is_ok()
}

async fn session(socket: WebSocket, state: Arc<AppState>) {
    state.active.fetch_add(1, Ordering::Relaxed);
    let session_no = state.next_session.fetch_add(1, Ordering::Relaxed);
    let id = format!("{}-{session_no:04}", state.session_prefix);
    let opts = &state.opts;
    let mut sess = Session { dir: opts.out.join(&id), id: id.clone(), records: Vec::new(), runs_started: 0 };
    let (mut tx, mut rx) = socket.split();

    let hello = ServerMessage::Hello {
        session: id,
        containers: opts.registry.containers.iter().map(|e| e.container.name.clone()).collect(),
        liquids: opts.liquids.iter().map(|l| l.name.clone()).collect(),
        dt: opts.sim.dt,
    };
    let mut open = send(&mut tx, &hello).await;

    let period = Duration::from_secs_f64(opts.sim.dt / opts.speed);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut active: Option<ActiveRun> = None;

    while open {
        tokio::select! {
            incoming = rx.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let msg: ClientMessage = match serde_json::from_str(&text) {
                    Ok(m) => m,
                    Err(e) => {
                        open = send(&mut tx, &ServerMessage::Error { message: format!("bad message: {e}") }).await;
                        continue;
                    }
                };
                match msg {
                    ClientMessage::Start { container, liquid, vol_total, vol_2pour } => {
                        if active.is_some() {
                            open = send(&mut tx, &ServerMessage::Error { message: "a run is already active".into() }).await;
                            continue;
                        }
                        sess.runs_started += 1;
                        match start_run(opts, session_no, sess.runs_started, &container, &liquid, vol_total, vol_2pour) {
                            Ok(run) => {
                                open = send(&mut tx, &state_message(&run, None)).await;
                                active = Some(run);
                                ticker.reset();
                            }
                            Err(message) => open = send(&mut tx, &ServerMessage::Error { message }).await,
                        }
                    }
                    ClientMessage::Velocity { omega } => {
                        if let Some(run) = active.as_mut().filter(|_| omega.is_finite()) {
                            run.omega = omega;
                        }
                    }
                    ClientMessage::End => {
                        if let Some(mut run) = active.take() {
                            run.run.abort();
                            open = finish(&mut tx, &mut sess, run).await;
                        }
                    }
                }
            }
            _ = ticker.tick(), if active.is_some() => {
                let mut run = active.take().expect("guarded by select condition");
                let omega = run.effective_omega();
                if run.run.advance(omega).is_some() {
                    open = finish(&mut tx, &mut sess, run).await;
                } else {
                    open = send(&mut tx, &state_message(&run, None)).await;
                    active = Some(run);
                }
            }
        }
    }
    state.active.fetch_sub(1, Ordering::Relaxed);
}

async fn finish(tx: &mut (impl SinkExt<Message> + Unpin), sess: &mut Session, active: ActiveRun) -> bool {
    let result = active.run.clone().finish();
    if !send(tx, &state_message(&active, Some(&result))).await {
        return false;
    }
    if result.trajectory.len() < 2 {
        return send(tx, &ServerMessage::Error { message: "run too short to record".into() }).await;
    }
    match sess.record(&active, &result) {
        Ok(summary) => send(tx, &summary).await,
        Err(e) => send(tx, &ServerMessage::Error { message: format!("could not record trial: {e}") }).await,
    }
}

/// Error lists from every `summary.json` below `dir`, ordered by session
/// directory name.
pub fn collect_session_errors(dir: &Path) -> Result<Vec<SessionSummary>, FormatError> {
    let mut sessions = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path().join("summary.json"))).collect();
    paths.sort();
    for path in paths.into_iter().filter(|p| p.is_file()) {
        let text = format::read_to_string(&path)?;
        sessions.push(serde_json::from_str(&text).map_err(|e| FormatError::parse(&path.display().to_string(), 0, &e))?);
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_tilt_is_ignored_once_back_upright() {
        let opts = ServeOptions::new(crate::registry::default_registry(), "unused");
        let mut run = start_run(&opts, 1, 1, "red", "water", 300.0, 120.0).unwrap();
        run.omega = 1.0;
        while !run.run.pour_entered() {
            let w = run.effective_omega();
            assert_eq!(w, 1.0);
            run.run.advance(w);
        }
        run.omega = -1.5;
        while run.run.simulator().state().theta > UPRIGHT_TOL {
            let w = run.effective_omega();
            run.run.advance(w);
        }
        run.omega = 0.8;
        assert_eq!(run.effective_omega(), 0.0);
        run.omega = -0.3;
        assert_eq!(run.effective_omega(), -0.3);
    }

    #[test]
    fn tilting_before_pouring_is_unrestricted() {
        let opts = ServeOptions::new(crate::registry::default_registry(), "unused");
        let mut run = start_run(&opts, 1, 1, "red", "water", 300.0, 120.0).unwrap();
        run.omega = -0.5;
        assert_eq!(run.effective_omega(), -0.5);
        run.omega = 0.5;
        assert_eq!(run.effective_omega(), 0.5);
    }

    #[test]
    fn client_messages_use_snake_case_tags() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"velocity","omega":0.25}"#).unwrap();
        assert_eq!(m, ClientMessage::Velocity { omega: 0.25 });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"end"}"#).unwrap();
        assert_eq!(m, ClientMessage::End);
        let state = ServerMessage::State { t: 0.5, theta: 0.1, sensor_vol: 3.0, target_vol: 100.0, done: false, final_error: None };
        let v: serde_json::Value = serde_json::to_value(&state).unwrap();
        assert_eq!(v["type"], "state");
        assert!(v.get("final_error").is_none());
    }
}
