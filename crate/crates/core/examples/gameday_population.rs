//! Synthetic game-day city: estimate where people are during the game
//! versus earlier in the day.

use geolambda::analytics::population_surface;
use geolambda::gameday::{self, GamedayConfig, GAME_HOURS, NON_GAME_HOURS};
use geolambda::{Engine, Source};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = GamedayConfig::default();
    let scenario = gameday::generate(&cfg);
    let engine = Engine::in_memory();
    for d in &scenario.descriptors {
        engine.register_view(d.clone())?;
    }
    for e in &scenario.events {
        engine.ingest(e.clone())?;
    }
    engine.recompute_once();

    let stadium = scenario.manifest.stadium_bbox;
    for name in [NON_GAME_HOURS, GAME_HOURS] {
        let tweets = engine.merge(&gameday::scenario_view(name, Source::Tweet))?.counts;
        let checkins = engine.merge(&gameday::scenario_view(name, Source::Checkin))?.counts;
        let surface = population_surface(&scenario.baseline, &[(&tweets, 1.0), (&checkins, 1.0)], 2, cfg.attendance)?;
        let spec = *surface.spec();
        let mut at_stadium = 0.0;
        for r in 0..spec.nrows {
            for c in 0..spec.ncols {
                let (lat, lon) = spec.cell_center(r, c);
                if stadium.contains(lat, lon) {
                    at_stadium += surface.get(r, c);
                }
            }
        }
        println!(
            "{name:>15}: {:>7} tweets, {:>6} checkins, {:.0} people total, {:.0} in the stadium box",
            tweets.sum(),
            checkins.sum(),
            surface.sum(),
            at_stadium
        );
    }
    Ok(())
}
