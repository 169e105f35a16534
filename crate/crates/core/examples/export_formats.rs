//! Write a view as ESRI ASCII grid, venue CSV and NDJSON.

use geolambda::gameday::{self, GamedayConfig};
use geolambda::gateway::{export, ExportFormat, ExportRequest, Layer};
use geolambda::Engine;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = gameday::generate(&GamedayConfig::default());
    let engine = Engine::in_memory();
    for d in &scenario.descriptors {
        engine.register_view(d.clone())?;
    }
    for e in &scenario.events {
        engine.ingest(e.clone())?;
    }
    let dir = std::env::temp_dir().join("geolambda-exports");
    std::fs::create_dir_all(&dir)?;

    let mut kde = ExportRequest::new("gameday", ExportFormat::Asc);
    kde.layer = Layer::Kde;
    for (req, file) in [
        (ExportRequest::new("gameday", ExportFormat::Asc), "counts.asc"),
        (kde, "density.asc"),
        (ExportRequest::new("gameday", ExportFormat::Csv), "venues.csv"),
        (ExportRequest::new("game-hours", ExportFormat::Ndjson), "game-hours.ndjson"),
    ] {
        let path = dir.join(file);
        let n = export(&engine, &req, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        println!("{n:>6} records -> {}", path.display());
    }
    let head: Vec<String> = std::fs::read_to_string(dir.join("counts.asc"))?.lines().take(6).map(String::from).collect();
    println!("{}", head.join("\n"));
    Ok(())
}
