//! Replay a generated event file into a persistent engine while the
//! background recompute loop keeps batch views fresh.

use std::sync::Arc;
use std::time::Duration;

use geolambda::gameday::{self, GamedayConfig};
use geolambda::ingestion::{replay, ReplaySpec};
use geolambda::{Engine, EngineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let scenario = gameday::generate(&GamedayConfig::default());
    scenario.write(dir.path())?;

    let engine = Arc::new(Engine::open(EngineConfig::persistent(dir.path().join("data")))?);
    for d in &scenario.descriptors {
        engine.register_view(d.clone())?;
    }
    let loop_handle = engine.spawn_recompute_loop(Duration::from_millis(200));
    let report = replay(
        &ReplaySpec { path: dir.path().join("events.ndjson"), speed_factor: 0.0, r#loop: false },
        engine.as_ref(),
    )?;
    println!("replayed: {report:?}");
    std::thread::sleep(Duration::from_millis(500));
    loop_handle.stop();
    for v in engine.views().iter().take(3) {
        println!("{:>28}: batch at {} of {}", v.descriptor.name, v.batch_watermark, engine.high_watermark());
    }
    drop(engine);

    let reopened = Engine::open(EngineConfig::persistent(dir.path().join("data")))?;
    println!("reopened with {} events and {} views", reopened.high_watermark(), reopened.views().len());
    Ok(())
}
