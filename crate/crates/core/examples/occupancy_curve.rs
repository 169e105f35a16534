//! Typical daily occupancy of one venue with bootstrap confidence bands.

use geolambda::engine::OccupancyQuery;
use geolambda::gameday::{self, GamedayConfig};
use geolambda::Engine;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GamedayConfig { days: 8, ..GamedayConfig::default() };
    let scenario = gameday::generate(&cfg);
    let engine = Engine::in_memory();
    for e in &scenario.events {
        engine.ingest(e.clone())?;
    }
    let venue = &scenario.manifest.venues[0].venue_id;
    let mut q = OccupancyQuery::new(venue);
    q.day_start = cfg.day_window(0).start;
    let curve = engine.occupancy(&q)?;
    println!("{venue}: {} days, {:.0}% bands", curve.n_days, 100.0 * curve.confidence);
    for (i, b) in curve.bins.iter().enumerate().step_by(2) {
        let bar = "#".repeat((b.estimate * 40.0).round() as usize);
        println!("{:>5.1}h {:.2} [{:.2}, {:.2}] {bar}", i as f64 * 0.5, b.estimate, b.ci_low, b.ci_high);
    }
    Ok(())
}
