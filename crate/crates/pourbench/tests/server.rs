use std::io::{BufRead, BufReader, Read, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures_util::{SinkExt, StreamExt};
use pourbench::cli::human_report;
use pourbench::core::seed::derive_seed;
use pourbench::core::{error_stats, LiquidSpec, SensorModel, SimConfig, Simulator};
use pourbench::registry::default_registry;
use pourbench::server::{self, collect_session_errors, AppState, ClientMessage, Health, ServeOptions, ServerMessage};
use pourbench::trials::load_trials;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};
use tower::ServiceExt;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn get(app: axum::Router, path: &str) -> (StatusCode, String) {
    let res = app.oneshot(Request::get(path).body(Body::empty()).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = axum::body::to_bytes(res.into_body(), 1 << 20).await.unwrap();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

#[tokio::test]
async fn health_reports_the_session_configuration() {
    let opts = ServeOptions::new(default_registry(), "unused");
    let app = server::router(Arc::new(AppState::new(opts)));
    let (status, body) = get(app.clone(), "/health").await;
    assert_eq!(status, StatusCode::OK);
    let h: Health = serde_json::from_str(&body).unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.active_sessions, 0);
    assert_eq!(h.liquids, ["water", "oil", "syrup"]);
    assert!(h.containers.contains(&"red".to_string()));
    assert_eq!(h.dt, 1.0 / 60.0);
    let (status, body) = get(app, "/").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.contains("/ws"));
}

#[tokio::test]
async fn serves_the_ui_bundle_when_configured() {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>bundle</html>").unwrap();
    std::fs::create_dir(ui.path().join("assets")).unwrap();
    std::fs::write(ui.path().join("assets/app.js"), "console.log(1)").unwrap();
    let mut opts = ServeOptions::new(default_registry(), "unused");
    opts.ui = Some(ui.path().to_path_buf());
    let app = server::router(Arc::new(AppState::new(opts)));
    assert_eq!(get(app.clone(), "/").await, (StatusCode::OK, "<html>bundle</html>".to_string()));
    assert_eq!(get(app.clone(), "/assets/app.js").await.1, "console.log(1)");
    assert_eq!(get(app.clone(), "/missing.js").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(app, "/health").await.0, StatusCode::OK);
}

struct Running {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    async fn start(opts: ServeOptions) -> Self {
        let listener = server::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let task = tokio::spawn(server::serve(listener, opts, async {
            let _ = rx.await;
        }));
        Self { addr, stop: Some(tx), task }
    }

    async fn connect(&self) -> Ws {
        tokio_tungstenite::connect_async(format!("ws://{}/ws", self.addr)).await.unwrap().0
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        tokio::time::timeout(Duration::from_secs(5), self.task).await.unwrap().unwrap().unwrap();
    }
}

async fn send(ws: &mut Ws, msg: &ClientMessage) {
    ws.send(Message::Text(serde_json::to_string(msg).unwrap().into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.expect("server message").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

fn start(container: &str, vol_total: f64, vol_2pour: f64) -> ClientMessage {
    ClientMessage::Start { container: container.into(), liquid: "water".into(), vol_total, vol_2pour }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn a_driven_pour_finishes_once_and_is_recorded() {
    let out = tempfile::tempdir().unwrap();
    let mut opts = ServeOptions::new(default_registry(), out.path());
    opts.speed = 8.0;
    opts.seed = 21;
    let server = Running::start(opts).await;
    let mut ws = server.connect().await;
    let ServerMessage::Hello { session, containers, dt, .. } = recv(&mut ws).await else { panic!("expected hello") };
    assert!(containers.contains(&"red".to_string()));

    send(&mut ws, &start("red", 300.0, 120.0)).await;
    let mut done_states = 0;
    let mut final_error = None;
    let mut last_t = -1.0;
    let summary = loop {
        match recv(&mut ws).await {
            ServerMessage::State { t, sensor_vol, target_vol, done, final_error: fe, .. } => {
                assert_eq!(target_vol, 120.0);
                assert!(t >= last_t);
                last_t = t;
                if done {
                    done_states += 1;
                    final_error = fe;
                    continue;
                }
                // A crude subject: tilt until close, then pull back.
                let omega = if sensor_vol < 105.0 { 0.6 } else { -1.0 };
                send(&mut ws, &ClientMessage::Velocity { omega }).await;
            }
            ServerMessage::Summary { session: s, errors, stats, reference_mu_e, .. } => {
                assert_eq!(s, session);
                assert!(reference_mu_e > 0.0);
                break (errors, stats);
            }
            other => panic!("unexpected {other:?}"),
        }
    };
    assert_eq!(done_states, 1);
    let (errors, stats) = summary;
    assert_eq!(errors.len(), 1);
    let final_error = final_error.unwrap();
    assert_eq!(errors[0], final_error);
    let expected = error_stats(&errors).unwrap();
    assert!((stats.mu_e - expected.mu_e).abs() <= 1e-9 && (stats.sigma_e - expected.sigma_e).abs() <= 1e-9);

    // No further updates once the pour is over.
    send(&mut ws, &ClientMessage::Velocity { omega: 1.0 }).await;
    let quiet = tokio::time::timeout(Duration::from_millis(300), ws.next()).await;
    assert!(quiet.is_err(), "unexpected message after the run ended: {quiet:?}");

    // The recorded trial validates and replays to the reported error.
    let trial_path = out.path().join(&session).join("trial_001.jsonl");
    let trial = load_trials(&trial_path).unwrap().remove(0);
    assert_eq!(trial.dt, dt);
    let red = default_registry().get("red").unwrap().container.clone();
    let sensor = SensorModel::default().with_seed(derive_seed(21, &[1, 1]));
    let mut sim = Simulator::new(red, LiquidSpec::water(), 300.0, SimConfig::default(), &sensor).unwrap();
    for (k, &w) in trial.omega.iter().enumerate() {
        assert!((sim.state().theta - trial.theta[k]).abs() <= 1e-9);
        assert_eq!(sim.state().sensor, trial.vol[k]);
        sim.step(w);
    }
    assert!(((sim.state().v_poured - 120.0).abs() - final_error).abs() <= 1e-9);

    let sessions = collect_session_errors(out.path()).unwrap();
    assert_eq!(sessions.len(), 1);
    assert_eq!(sessions[0].trials[0].error, final_error);
    let doc = human_report(out.path(), &default_registry(), 0).unwrap();
    assert_eq!(doc.rows[0].condition, "human");
    assert_eq!(doc.rows[0].container, "red");
    assert_eq!(doc.rows[0].n, 1);

    drop(ws);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn state_updates_arrive_at_the_simulation_rate() {
    let out = tempfile::tempdir().unwrap();
    let server = Running::start(ServeOptions::new(default_registry(), out.path())).await;
    let mut ws = server.connect().await;
    recv(&mut ws).await;
    send(&mut ws, &start("red", 250.0, 100.0)).await;
    let began = Instant::now();
    let mut updates = 0;
    while began.elapsed() < Duration::from_secs(1) {
        if let ServerMessage::State { done, .. } = recv(&mut ws).await {
            assert!(!done);
            updates += 1;
        }
    }
    let rate = updates as f64 / began.elapsed().as_secs_f64();
    assert!(rate >= 30.0, "{rate} Hz");

    // Ending early records the run with nothing poured.
    send(&mut ws, &ClientMessage::End).await;
    let mut saw_done = false;
    let summary = loop {
        match recv(&mut ws).await {
            ServerMessage::State { done: true, final_error, .. } => {
                saw_done = true;
                assert_eq!(final_error, Some(100.0));
            }
            ServerMessage::State { .. } => {}
            ServerMessage::Summary { errors, .. } => break errors,
            other => panic!("unexpected {other:?}"),
        }
    };
    assert!(saw_done);
    assert_eq!(summary, [100.0]);
    drop(ws);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn protocol_errors_are_reported_without_closing() {
    let out = tempfile::tempdir().unwrap();
    let server = Running::start(ServeOptions::new(default_registry(), out.path())).await;
    let mut ws = server.connect().await;
    recv(&mut ws).await;

    ws.send(Message::Text("{\"type\":\"tilt\"}".into())).await.unwrap();
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));
    send(&mut ws, &start("teapot", 300.0, 100.0)).await;
    let ServerMessage::Error { message } = recv(&mut ws).await else { panic!() };
    assert!(message.contains("teapot"), "{message}");
    send(&mut ws, &start("red", 300.0, 300.0)).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::Error { .. }));

    send(&mut ws, &start("red", 300.0, 100.0)).await;
    assert!(matches!(recv(&mut ws).await, ServerMessage::State { done: false, .. }));
    send(&mut ws, &start("red", 300.0, 100.0)).await;
    loop {
        match recv(&mut ws).await {
            ServerMessage::State { .. } => continue,
            ServerMessage::Error { message } => {
                assert!(message.contains("already active"));
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    drop(ws);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_counts_open_sessions() {
    let out = tempfile::tempdir().unwrap();
    let server = Running::start(ServeOptions::new(default_registry(), out.path())).await;
    let mut ws = server.connect().await;
    recv(&mut ws).await;
    let body = http_get(server.addr, "/health");
    let h: Health = serde_json::from_str(&body).unwrap();
    assert_eq!(h.active_sessions, 1);
    drop(ws);
    server.shutdown().await;
}

fn http_get(addr: SocketAddr, path: &str) -> String {
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut text = String::new();
    s.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("HTTP/1.1 200"), "{text}");
    text.split("\r\n\r\n").nth(1).unwrap().to_string()
}

fn spawn_serve(args: &[&str], out: &Path) -> std::process::Child {
    Command::new(env!("CARGO_BIN_EXE_pourbench"))
        .arg("serve")
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .env_remove("POURBENCH_CONFIG")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

#[test]
fn serve_binary_announces_its_address() {
    let out = tempfile::tempdir().unwrap();
    let mut child = spawn_serve(&["--port", "0"], out.path());
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr: SocketAddr = line.trim().strip_prefix("listening on http://").expect(&line).parse().unwrap();
    let h: Health = serde_json::from_str(&http_get(addr, "/health")).unwrap();
    assert_eq!(h.service, "pourbench");
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn serve_binary_fails_when_the_port_is_taken() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = tempfile::tempdir().unwrap();
    let child = spawn_serve(&["--port", &port], out.path());
    let output = child.wait_with_output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("cannot bind"));
}
