//! Batch views lag behind; the speed layer covers the gap so that every
//! merged answer equals a full recompute.

use geolambda::batch::ViewDescriptor;
use geolambda::{BoundingBox, Engine, GeoEvent, GridSpec, Source, TimeWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let engine = Engine::in_memory();
    let spec = GridSpec::new(BoundingBox::new(0.0, 0.0, 1.0, 1.0)?, 0.05)?;
    engine.register_view(ViewDescriptor::new("square", spec, TimeWindow::new(0, 10_000)?).with_venue_bins(1000, vec![]))?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..20_000 {
        engine.ingest(GeoEvent {
            event_id: format!("e{i}"),
            source: Source::Checkin,
            ts: rng.random_range(1..10_000),
            lat: rng.random_range(0.0..1.0),
            lon: rng.random_range(0.0..1.0),
            venue_id: Some(format!("v{}", rng.random_range(0..10))),
            attributes: Default::default(),
        })?;
        if i % 5000 == 4999 {
            let merged = engine.merge("square")?;
            let (full, _) = engine.build_view("square")?;
            println!(
                "seq {:>5}: batch watermark {:>5}, realtime holds {:>5}, merged == recompute: {}",
                merged.as_of_seq,
                merged.batch_watermark,
                engine.speed().footprint("square")?,
                merged.counts == full.counts
            );
            engine.recompute_once();
        }
    }
    Ok(())
}
