//! Register a view, ingest a few events and query the merged result.

use geolambda::batch::ViewDescriptor;
use geolambda::serving::{Aggregate, QueryRequest, QueryResult};
use geolambda::{BoundingBox, Engine, GeoEvent, GridSpec, Source, TimeWindow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let engine = Engine::in_memory();
    let spec = GridSpec::three_arc_second(BoundingBox::around(35.955, -83.925, 1000.0)?)?;
    let window = TimeWindow::new(1_383_400_000, 1_383_500_000)?;
    engine.register_view(ViewDescriptor::new("downtown", spec, window))?;

    let spots = [(35.955, -83.925), (35.9551, -83.9249), (35.952, -83.93), (36.5, -84.0)];
    for (i, &(lat, lon)) in spots.iter().enumerate() {
        engine.ingest(GeoEvent {
            event_id: format!("evt-{i}"),
            source: Source::Tweet,
            ts: 1_383_400_100 + i as i64,
            lat,
            lon,
            venue_id: None,
            attributes: Default::default(),
        })?;
    }

    let resp = engine.query(&QueryRequest::new("downtown", Aggregate::Total))?;
    if let QueryResult::Total { total } = resp.result {
        println!("grid {}x{}, {total} of {} events inside, as of seq {}", spec.ncols, spec.nrows, spots.len(), resp.as_of_seq);
    }
    let top = engine.query(&QueryRequest::new("downtown", Aggregate::TopKCells(2)))?;
    println!("{}", serde_json::to_string_pretty(&top.result)?);
    Ok(())
}
