//! Start the HTTP API on an ephemeral port and talk to it.

use std::sync::Arc;

use geolambda::gateway::serve;
use geolambda::Engine;

const VIEW: &str = r#"{"name":"plaza","spec":{"bbox":{"min_lat":35.95,"min_lon":-83.93,"max_lat":35.96,"max_lon":-83.92}},"window":{"start":1,"end":2000000000}}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let engine = Arc::new(Engine::in_memory());
    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = rt.spawn(serve(engine, listener, async {
        let _ = stopped.await;
    }));

    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let post = |path: &str, body: &str| -> Result<String, ureq::Error> {
        let mut resp = agent.post(&format!("{base}{path}")).header("content-type", "application/json").send(body)?;
        Ok(format!("{} {}", resp.status(), resp.body_mut().read_to_string()?))
    };
    println!("POST /views  -> {}", post("/views", VIEW)?);
    let events = (0..5)
        .map(|i| format!(r#"{{"event_id":"p{i}","source":"tweet","ts":{},"lat":35.955,"lon":-83.925}}"#, 1_383_400_000 + i))
        .collect::<Vec<_>>()
        .join("\n");
    println!("POST /events -> {}", post("/events", &events)?);
    println!("POST /query  -> {}", post("/query", r#"{"view":"plaza","aggregate":"total"}"#)?);
    println!("POST /query  -> {}", post("/query", r#"{"view":"nowhere","aggregate":"total"}"#)?);

    let _ = stop.send(());
    rt.block_on(server)??;
    Ok(())
}
