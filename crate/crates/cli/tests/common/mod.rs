//! Fixtures and an in-process server harness for the service suites.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use langmap::affordance::{AffordanceRequest, ChatClient, RecordedChatClient, DEFAULT_SYSTEM_PROMPT};
use langmap::embedding::EmbeddingProvider;
use langmap::geometry::{Cell, GridSpec, RotoTranslation};
use langmap::map::{build_map, FeatureMap, MapConfig, Occupancy};
use langmap::synthetic::{two_peak_scene, SceneSpec};
use langmap::{PosedFrame, SyntheticProvider};
use langmap_cli::service::{AppState, ServiceConfig};
use langmap_cli::serve_with_shutdown;
use tokio::sync::oneshot;

pub const D_CLIP: usize = 64;
pub const D_RNR: usize = 8;

/// The three appendix queries with their recorded assistant replies.
pub const APPENDIX: [(&str, &str); 3] = [
    ("Find me a drink to wake me up", "kitchen, dining room, living room, office"),
    ("Where can I wash my hands", "bathroom, kitchen, utility room"),
    ("Where can I watch the tv?", "living room, bedroom, basement, media room"),
];

/// A query whose recorded reply contains no targets.
pub const UNPARSEABLE: (&str, &str) = ("Tell me a joke", " , ");

pub fn provider() -> SyntheticProvider {
    SyntheticProvider::new(D_CLIP, D_RNR)
}

pub fn build_scene(scene: &SceneSpec, provider: &dyn EmbeddingProvider) -> FeatureMap {
    let frames: Vec<PosedFrame> = scene
        .frames()
        .unwrap()
        .into_iter()
        .map(|r| PosedFrame::from_record(r, provider).unwrap())
        .collect();
    build_map(&frames, &MapConfig::new(scene.grid, D_RNR, D_CLIP)).unwrap().0
}

pub fn two_peak_map() -> FeatureMap {
    build_scene(&two_peak_scene("chair").unwrap(), &provider())
}

pub fn three_object_scene() -> SceneSpec {
    SceneSpec::new("m", 40, 0.1, 3.5)
        .unwrap()
        .with_object("chair", Cell::new(5, 5), 3)
        .with_object("couch", Cell::new(25, 8), 3)
        .with_object("cabinet", Cell::new(12, 28), 3)
}

/// A 12×12 room split by an obstacle wall at x = 6, with a chair-like patch
/// at (9..=10, 5..=6) on the far side.
pub fn walled_map() -> FeatureMap {
    let p = provider();
    let spec = GridSpec::new(12, 0.1, RotoTranslation::identity()).unwrap();
    let mut m = FeatureMap::new(spec, D_RNR, D_CLIP).unwrap();
    let floor = p.embed_text("floor").unwrap();
    let chair = p.embed_text("chair").unwrap();
    let vector = |e: &langmap::Embedding| {
        let mut v = vec![0.0f32; D_RNR];
        v.extend_from_slice(e.values());
        v
    };
    for i in 0..spec.cell_count() {
        let c = spec.cell_at(i);
        let occ = if c.x == 6 { Occupancy::Obstacle } else { Occupancy::Free };
        m.set_cell(c, &vector(&floor), occ).unwrap();
    }
    for (x, y) in [(9, 5), (10, 5), (9, 6), (10, 6)] {
        m.set_cell(Cell::new(x, y), &vector(&chair), Occupancy::Free).unwrap();
    }
    m
}

pub fn recorded_chat() -> RecordedChatClient {
    let mut c = RecordedChatClient::new();
    for (q, a) in APPENDIX.iter().chain([&UNPARSEABLE]) {
        c.record(&AffordanceRequest::new(*q).chat_request(DEFAULT_SYSTEM_PROMPT), a);
    }
    c
}

pub fn state(chat: bool) -> Arc<AppState> {
    let chat: Option<Arc<dyn ChatClient>> = chat.then(|| Arc::new(recorded_chat()) as Arc<dyn ChatClient>);
    Arc::new(AppState::new(Arc::new(provider()), chat, ServiceConfig::default()))
}

/// A service bound to an ephemeral port, stopped on drop.
pub struct Server {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(state: Arc<AppState>) -> Server {
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let s = state.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                serve_with_shutdown(listener, s, async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
            });
        });
        Server {
            addr: addr_rx.recv().unwrap(),
            state,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| {
            panic!("{e}: {}", String::from_utf8_lossy(&self.body))
        })
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn reply(resp: ureq::http::Response<ureq::Body>) -> Reply {
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_owned();
    let body = resp
        .into_body()
        .into_with_config()
        .limit(64 << 20)
        .read_to_vec()
        .unwrap();
    Reply {
        status,
        content_type,
        body,
    }
}

pub fn get(url: &str) -> Reply {
    reply(agent().get(url).call().unwrap())
}

pub fn post_json(url: &str, body: &serde_json::Value) -> Reply {
    post_raw(url, "application/json", &serde_json::to_vec(body).unwrap())
}

pub fn post_raw(url: &str, content_type: &str, body: &[u8]) -> Reply {
    reply(
        agent()
            .post(url)
            .header("content-type", content_type)
            .send(body)
            .unwrap(),
    )
}

/// Uploads `map` as a map file and returns its id.
pub fn upload(server: &Server, map: &FeatureMap) -> String {
    let r = post_raw(
        &server.url("/maps"),
        "application/octet-stream",
        &langmap::io::mapfile::to_bytes(map),
    );
    assert_eq!(r.status, 200, "{}", String::from_utf8_lossy(&r.body));
    r.json()["map_id"].as_str().unwrap().to_owned()
}
