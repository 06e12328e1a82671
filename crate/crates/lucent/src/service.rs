//! Live editing over HTTP and WebSocket.
//!
//! One owner thread holds the [`Scene`] and applies commands in arrival order.
//! Each applied command produces exactly one immutable [`Snapshot`] with the
//! next sequence number, published to every session. A command that fails
//! validation changes nothing and produces an error for its sender only.
//!
//! Wire format (all server messages are binary, first byte is the tag):
//! - `1`: frame, `u32 seq`, `u32 vertex count`, then per-vertex RGB as
//!   sRGB `u8` (default), `f16` or `f32` linear radiance, chosen with
//!   `/session?format=`;
//! - `2`: UTF-8 JSON stats for the frame with the same `seq`;
//! - `3`: UTF-8 JSON error for a command from this client.
//!
//! See `docs/protocol.md` for the command schema.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use lucent_core::dipole::OpticalMaterial;
use lucent_core::lighting::{Light, LightRig};
use lucent_core::math::Rgb;
use lucent_core::runtime::{encode_srgb8, render_image, Camera, FrameResult, Scene, StageTimings};
use lucent_core::surface::TriangleMesh;

use crate::config::{default_light, CameraSpec, LightSpec, MaterialSpec, RunConfig};
use crate::error::{LucentError, Result};
use crate::imageio::encode_png;
use crate::scene::StdClock;

pub const TAG_FRAME: u8 = 1;
pub const TAG_STATS: u8 = 2;
pub const TAG_ERROR: u8 = 3;

/// Frames buffered per session before the oldest is dropped.
const SESSION_BUFFER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    #[default]
    Rgb,
    R,
    G,
    B,
}

/// A scalar applies to every selected channel; a triple needs `channel = "rgb"`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ChannelValues {
    Scalar(f64),
    Triple([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetMaterial {
        #[serde(default)]
        channel: Channel,
        #[serde(default)]
        sigma_s_prime: Option<ChannelValues>,
        #[serde(default)]
        sigma_a: Option<ChannelValues>,
        #[serde(default)]
        g: Option<f64>,
        #[serde(default)]
        eta: Option<f64>,
    },
    SetLight {
        lights: Vec<LightSpec>,
    },
    SetCamera {
        position: [f64; 3],
        look_at: [f64; 3],
        #[serde(default)]
        up: Option<[f64; 3]>,
        #[serde(default)]
        fov_y: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetMaterial { .. } => "set_material",
            Command::SetLight { .. } => "set_light",
            Command::SetCamera { .. } => "set_camera",
        }
    }
}

fn patch(target: &mut Rgb, channel: Channel, values: ChannelValues) -> std::result::Result<(), String> {
    let idx: &[usize] = match channel {
        Channel::Rgb => &[0, 1, 2],
        Channel::R => &[0],
        Channel::G => &[1],
        Channel::B => &[2],
    };
    match values {
        ChannelValues::Scalar(v) => idx.iter().for_each(|&i| target[i] = v),
        ChannelValues::Triple(t) if channel == Channel::Rgb => *target = t,
        ChannelValues::Triple(_) => return Err("a three-value array needs channel \"rgb\"".into()),
    }
    Ok(())
}

/// The material a `set_material` command asks for, given the current one.
pub fn patched_material(current: &OpticalMaterial, cmd: &Command) -> std::result::Result<OpticalMaterial, String> {
    let Command::SetMaterial { channel, sigma_s_prime, sigma_a, g, eta } = cmd else {
        return Ok(*current);
    };
    let mut m = *current;
    if let Some(v) = sigma_s_prime {
        patch(&mut m.sigma_s_prime, *channel, *v)?;
    }
    if let Some(v) = sigma_a {
        patch(&mut m.sigma_a, *channel, *v)?;
    }
    if let Some(v) = g {
        m.g = *v;
    }
    if let Some(v) = eta {
        m.eta = *v;
    }
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

/// State after one applied command.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub seq: u32,
    pub radiance: Vec<Rgb>,
    pub camera: Camera,
    /// JSON stats message body.
    pub stats: String,
    pub material: MaterialSpec,
    pub lights: Vec<LightSpec>,
    pub timings: StageTimings,
}

fn snapshot(seq: u32, command: &str, frame: FrameResult, scene: &Scene, lights: &[LightSpec]) -> Snapshot {
    let t = frame.timings;
    let material = MaterialSpec::from_material(scene.material());
    let stats = json!({
        "tag": TAG_STATS,
        "seq": seq,
        "command": command,
        "timings_ms": {
            "irradiance": t.irradiance,
            "transfer": t.transfer,
            "weighting": t.weighting,
            "inverse_wavelet": t.inverse_wavelet,
            "shading": t.shading,
            "raster": t.raster,
        },
        "irradiance_energy": frame.stats.irradiance_energy,
        "clamped_samples": frame.stats.clamped_samples,
        "min_unclamped": frame.stats.min_unclamped,
        "material_clamped": frame.stats.material_clamped,
        "warnings": frame.stats.warnings,
        "material": material,
    });
    Snapshot {
        seq,
        radiance: frame.radiance,
        camera: *scene.camera(),
        stats: stats.to_string(),
        material,
        lights: lights.to_vec(),
        timings: t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    U8,
    F16,
    F32,
}

/// Binary frame message for one snapshot.
pub fn encode_frame(snap: &Snapshot, format: FrameFormat, exposure: f64) -> Vec<u8> {
    let width = match format {
        FrameFormat::U8 => 3,
        FrameFormat::F16 => 6,
        FrameFormat::F32 => 12,
    };
    let mut out = Vec::with_capacity(9 + width * snap.radiance.len());
    out.push(TAG_FRAME);
    out.extend(snap.seq.to_le_bytes());
    out.extend((snap.radiance.len() as u32).to_le_bytes());
    for v in &snap.radiance {
        for &c in v {
            match format {
                FrameFormat::U8 => out.push(encode_srgb8(c * exposure)),
                FrameFormat::F16 => out.extend(half::f16::from_f64(c).to_le_bytes()),
                FrameFormat::F32 => out.extend((c as f32).to_le_bytes()),
            }
        }
    }
    out
}

/// `u32` vertex count, `u32` triangle count, `f32` positions, `f32` normals, `u32` indices.
pub fn encode_mesh(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 24 * mesh.vertex_count() + 12 * mesh.triangles.len());
    out.extend((mesh.vertex_count() as u32).to_le_bytes());
    out.extend((mesh.triangles.len() as u32).to_le_bytes());
    for v in mesh.positions.iter().chain(&mesh.normals) {
        for c in [v.x, v.y, v.z] {
            out.extend((c as f32).to_le_bytes());
        }
    }
    for t in &mesh.triangles {
        for i in t {
            out.extend(i.to_le_bytes());
        }
    }
    out
}

fn error_message(command: Option<&str>, message: &str) -> Vec<u8> {
    let mut out = vec![TAG_ERROR];
    out.extend(json!({ "tag": TAG_ERROR, "command": command, "error": message }).to_string().into_bytes());
    out
}

fn stats_message(snap: &Snapshot) -> Vec<u8> {
    let mut out = vec![TAG_STATS];
    out.extend(snap.stats.as_bytes());
    out
}

struct Job {
    command: Command,
    /// Where a rejection is reported.
    origin: Option<mpsc::Sender<Vec<u8>>>,
}

fn light_spec(light: &Light) -> LightSpec {
    let a = |v: lucent_core::math::Vec3| [v.x, v.y, v.z];
    match light {
        Light::Point { position, intensity } => LightSpec::Point { position: a(*position), intensity: *intensity },
        Light::Directional { direction, irradiance } => {
            LightSpec::Directional { direction: a(*direction), irradiance: *irradiance }
        }
        Light::LocalSphere { center, radius, radiance } => {
            LightSpec::Sphere { center: a(*center), radius: *radius, radiance: *radiance }
        }
        Light::Ambient { environment } => {
            let n = environment.texels.len().max(1) as f64;
            let mean = [0, 1, 2].map(|c| environment.texels.iter().map(|t| t[c]).sum::<f64>() / n);
            LightSpec::Ambient { constant: Some(mean), path: None, faces: None, side: environment.side, scale: 1.0 }
        }
    }
}

fn apply(scene: &mut Scene, cmd: &Command, clock: &StdClock, lights: &mut Vec<LightSpec>) -> std::result::Result<FrameResult, String> {
    match cmd {
        Command::SetMaterial { .. } => {
            let m = patched_material(scene.material(), cmd)?;
            scene.set_material(m, clock).map_err(|e| e.to_string())
        }
        Command::SetLight { lights: specs } => {
            let mut out = Vec::with_capacity(specs.len());
            for s in specs {
                if let LightSpec::Ambient { path: Some(_), .. } | LightSpec::Ambient { faces: Some(_), .. } = s {
                    return Err("file-based environments are not accepted over a session; use constant".into());
                }
                out.push(s.to_light(Path::new(".")).map_err(|e| e.to_string())?);
            }
            let rig = LightRig::new(out).map_err(|e| e.to_string())?;
            if rig.ambient().is_some() && scene.ambient.is_none() {
                return Err(lucent_core::Error::MissingVisibility.to_string());
            }
            let previous = scene.rig().clone();
            match scene.set_lights(rig, clock) {
                Ok(f) => {
                    *lights = specs.clone();
                    Ok(f)
                }
                Err(e) => {
                    // restore caches for the old rig
                    scene.set_lights(previous, clock).map_err(|e| e.to_string())?;
                    Err(e.to_string())
                }
            }
        }
        Command::SetCamera { position, look_at, up, fov_y } => {
            let c = CameraSpec {
                position: *position,
                look_at: *look_at,
                up: up.unwrap_or([0.0, 1.0, 0.0]),
                fov_y: fov_y.unwrap_or(scene.camera().fov_y),
            };
            scene.set_camera(c.to_camera(), clock).map_err(|e| e.to_string())
        }
    }
}

fn owner_loop(
    mut scene: Scene,
    mut lights: Vec<LightSpec>,
    mut jobs: mpsc::Receiver<Job>,
    latest: watch::Sender<Arc<Snapshot>>,
    frames: broadcast::Sender<Arc<Snapshot>>,
) {
    let clock = StdClock::new();
    let mut seq = latest.borrow().seq;
    while let Some(job) = jobs.blocking_recv() {
        match apply(&mut scene, &job.command, &clock, &mut lights) {
            Ok(frame) => {
                seq += 1;
                let snap = Arc::new(snapshot(seq, job.command.name(), frame, &scene, &lights));
                latest.send_replace(snap.clone());
                let _ = frames.send(snap);
            }
            Err(msg) => {
                if let Some(o) = job.origin {
                    let _ = o.try_send(error_message(Some(job.command.name()), &msg));
                }
            }
        }
    }
}

struct AppState {
    jobs: mpsc::Sender<Job>,
    latest: watch::Receiver<Arc<Snapshot>>,
    frames: broadcast::Sender<Arc<Snapshot>>,
    mesh: Arc<TriangleMesh>,
    mesh_bytes: Bytes,
    info: serde_json::Value,
    exposure: f64,
    image_size: (usize, usize),
}

pub struct ServiceHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub async fn shutdown(mut self) -> Result<()> {
        if let Some(s) = self.shutdown.take() {
            let _ = s.send(());
        }
        self.task
            .await
            .map_err(|e| LucentError::Service(e.to_string()))?
            .map_err(|e| LucentError::Service(e.to_string()))
    }

    /// Runs until the process receives Ctrl-C.
    pub async fn run_until_signal(self) -> Result<()> {
        let _ = tokio::signal::ctrl_c().await;
        self.shutdown().await
    }
}

/// Relights `scene`, starts the owner thread and serves on `listener`.
pub async fn start(
    mut scene: Scene,
    config: &RunConfig,
    listener: tokio::net::TcpListener,
) -> Result<ServiceHandle> {
    let addr = listener.local_addr().map_err(|e| LucentError::Service(e.to_string()))?;
    let lights = if config.lights.is_empty() && config.render.default_light {
        vec![light_spec(&default_light(scene.mesh.bounds()))]
    } else {
        config.lights.clone()
    };
    let clock = StdClock::new();
    let frame = scene.relight(&clock)?;
    let first = Arc::new(snapshot(0, "load", frame, &scene, &lights));
    let b = scene.mesh.bounds();
    let info = json!({
        "vertex_count": scene.mesh.vertex_count(),
        "triangle_count": scene.mesh.triangles.len(),
        "bbox": { "min": [b.min.x, b.min.y, b.min.z], "max": [b.max.x, b.max.y, b.max.z] },
        "basis_count": scene.basis.count,
        "sigma_box": {
            "sigma_s_prime": [scene.basis.sigma_box.sigma_s_prime.0, scene.basis.sigma_box.sigma_s_prime.1],
            "sigma_a": [scene.basis.sigma_box.sigma_a.0, scene.basis.sigma_box.sigma_a.1],
        },
        "atlas": { "parts": scene.atlas.part_count, "level": scene.atlas.level },
        "compression": {
            "step1_n": scene.transfer.step1_n,
            "step2_fraction": scene.transfer.step2_fraction,
            "step1_entries": scene.transfer.step1_nnz(),
            "stored_entries": scene.transfer.nnz(),
            "step2_ratio": scene.transfer.step2_ratio(),
            "lossless": scene.transfer.is_lossless(),
        },
        "has_visibility": scene.ambient.is_some(),
    });
    let mesh = Arc::new(scene.mesh.clone());
    let (jobs_tx, jobs_rx) = mpsc::channel(256);
    let (latest_tx, latest_rx) = watch::channel(first);
    let (frames_tx, _) = broadcast::channel(SESSION_BUFFER);
    let owner_frames = frames_tx.clone();
    std::thread::Builder::new()
        .name("scene-owner".into())
        .spawn(move || owner_loop(scene, lights, jobs_rx, latest_tx, owner_frames))
        .map_err(|e| LucentError::Service(e.to_string()))?;

    let state = Arc::new(AppState {
        jobs: jobs_tx,
        latest: latest_rx,
        frames: frames_tx,
        mesh_bytes: Bytes::from(encode_mesh(&mesh)),
        mesh,
        info,
        exposure: config.render.exposure,
        image_size: (config.render.width, config.render.height),
    });
    let app = router(state, config.serve.ui_dir.as_deref());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ServiceHandle { addr, shutdown: Some(tx), task })
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| LucentError::Service(format!("cannot bind {addr}: {e}")))
}

fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let r = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/scene", get(scene_info))
        .route("/mesh", get(mesh_bytes))
        .route("/frame.png", get(frame_png))
        .route("/session", get(session));
    let r = match ui_dir {
        Some(dir) => r.fallback_service(tower_http::services::ServeDir::new(PathBuf::from(dir))),
        None => r.route("/", get(|| async { Html(INDEX_HTML) })),
    };
    r.with_state(state)
}

const INDEX_HTML: &str = "<!doctype html><html><head><meta charset=\"utf-8\"><title>lucent</title></head>\
<body><h1>lucent service</h1><p>No editor bundle configured (start with <code>--ui-dir</code>).</p>\
<ul><li><a href=\"/health\">/health</a></li><li><a href=\"/scene\">/scene</a></li>\
<li>/mesh</li><li><a href=\"/frame.png\">/frame.png</a></li><li>WebSocket /session</li></ul></body></html>";

async fn scene_info(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snap = s.latest.borrow().clone();
    let mut v = s.info.clone();
    v["seq"] = json!(snap.seq);
    v["material"] = json!(snap.material);
    v["lights"] = json!(snap.lights);
    v["camera"] = json!(CameraSpec::from_camera(&snap.camera));
    v["stats"] = serde_json::from_str(&snap.stats).unwrap_or_default();
    Json(v)
}

async fn mesh_bytes(State(s): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], s.mesh_bytes.clone()).into_response()
}

#[derive(Debug, Deserialize)]
struct ImageQuery {
    width: Option<usize>,
    height: Option<usize>,
    exposure: Option<f64>,
}

async fn frame_png(State(s): State<Arc<AppState>>, Query(q): Query<ImageQuery>) -> Response {
    let snap = s.latest.borrow().clone();
    let (w, h) = (q.width.unwrap_or(s.image_size.0).min(4096), q.height.unwrap_or(s.image_size.1).min(4096));
    let exposure = q.exposure.unwrap_or(s.exposure);
    let mesh = s.mesh.clone();
    let png = tokio::task::spawn_blocking(move || {
        let img = render_image(&mesh, &snap.radiance, &snap.camera, w, h, exposure)?;
        encode_png(&img)
    })
    .await;
    match png {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Ok(Err(e)) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    #[serde(default)]
    format: FrameFormat,
}

async fn session(ws: WebSocketUpgrade, State(s): State<Arc<AppState>>, Query(q): Query<SessionQuery>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, s, q.format))
}

async fn run_session(socket: WebSocket, s: Arc<AppState>, format: FrameFormat) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = s.frames.subscribe();
    let (err_tx, mut err_rx) = mpsc::channel::<Vec<u8>>(32);
    let exposure = s.exposure;
    let current = s.latest.borrow().clone();

    let writer = tokio::spawn(async move {
        let send = |snap: Arc<Snapshot>| [encode_frame(&snap, format, exposure), stats_message(&snap)];
        for m in send(current) {
            if sink.send(Message::Binary(m.into())).await.is_err() {
                return;
            }
        }
        loop {
            let out = tokio::select! {
                f = frames.recv() => match f {
                    Ok(snap) => send(snap).to_vec(),
                    // dropped the oldest frames for this session; carry on with newer ones
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return,
                },
                e = err_rx.recv() => match e {
                    Some(m) => vec![m],
                    None => return,
                },
            };
            for m in out {
                if sink.send(Message::Binary(m.into())).await.is_err() {
                    return;
                }
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(b) => match String::from_utf8(b.to_vec()) {
                Ok(t) => t,
                Err(_) => {
                    let _ = err_tx.try_send(error_message(None, "commands must be UTF-8 JSON"));
                    continue;
                }
            },
            Message::Close(_) => break,
            _ => continue,
        };
        match serde_json::from_str::<Command>(&text) {
            Ok(command) => {
                if s.jobs.send(Job { command, origin: Some(err_tx.clone()) }).await.is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = err_tx.try_send(error_message(None, &format!("invalid command: {e}")));
            }
        }
    }
    drop(err_tx);
    writer.abort();
}

/// Loads the scene named by `config`, binds and serves until Ctrl-C.
pub fn serve_blocking(config: &RunConfig, base: &Path) -> Result<()> {
    let scene = crate::scene::load_scene(config, base)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| LucentError::Service(e.to_string()))?;
    rt.block_on(async {
        let listener = bind(&config.serve.bind).await?;
        let handle = start(scene, config, listener).await?;
        eprintln!("serving on http://{}", handle.addr);
        handle.run_until_signal().await
    })
}
