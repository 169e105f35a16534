#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use geolambda::gameday::{generate, GamedayConfig, Scenario};
use geolambda::Engine;
use tokio::sync::oneshot;

/// A running HTTP server on an ephemeral port; stops when dropped.
pub struct Server {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(engine: Arc<Engine>) -> Server {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                geolambda::gateway::serve(engine, listener, async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
            });
        });
        Server {
            addr: addr_rx.recv().unwrap(),
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

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

pub fn get(url: &str) -> (u16, String) {
    let mut resp = agent().get(url).call().expect("request");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().expect("body"))
}

pub fn post(url: &str, body: &str) -> (u16, String) {
    let mut resp = agent()
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .expect("request");
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_to_string().expect("body"))
}

pub fn json(body: &str) -> serde_json::Value {
    serde_json::from_str(body).unwrap_or_else(|e| panic!("not JSON ({e}): {body}"))
}

/// In-memory engine holding the scenario's baseline, views and events.
pub fn gameday_engine(cfg: &GamedayConfig) -> (Engine, Scenario) {
    let scenario = generate(cfg);
    let engine = Engine::in_memory();
    engine
        .store()
        .references
        .register(
            geolambda::gameday::BASELINE_NAME,
            scenario.baseline.clone(),
            Default::default(),
        )
        .unwrap();
    for d in &scenario.descriptors {
        engine.register_view(d.clone()).unwrap();
    }
    for e in &scenario.events {
        engine.ingest(e.clone()).unwrap();
    }
    (engine, scenario)
}
