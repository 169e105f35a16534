//! Lambda-style spatio-temporal analytics over geo-tagged event streams.
//!
//! Events enter through [`ingestion`], land in an append-only archive
//! ([`store`]) and are applied to a small in-memory [`speed`] layer in the
//! same step. The [`batch`] layer periodically recomputes count rasters and
//! per-venue bins from scratch over the archive up to a watermark, and the
//! [`serving`] layer merges both into one consistent view. [`analytics`]
//! turns merged counts into KDE density surfaces, dasymetric population grids
//! and venue occupancy curves; [`gateway`] exposes everything over HTTP and
//! as file exports.
//!
//! The [`Engine`] wires the layers together. Runnable walkthroughs live in
//! the crate's `examples/` directory:
//!
//! ```text
//! cargo run -p geolambda --example quickstart
//! cargo run -p geolambda --example lambda_merge
//! cargo run -p geolambda --example kde_smoothing
//! cargo run -p geolambda --example gameday_population
//! cargo run -p geolambda --example occupancy_curve
//! cargo run -p geolambda --example replay_and_recompute
//! cargo run -p geolambda --example export_formats
//! cargo run -p geolambda --example http_service
//! ```

pub mod analytics;
pub mod batch;
pub mod engine;
pub mod formats;
pub mod gameday;
pub mod gateway;
pub mod ingestion;
pub mod model;
pub mod serving;
pub mod speed;
pub mod store;

pub use engine::{Engine, EngineConfig, EngineError};
pub use model::{BoundingBox, GeoEvent, GridSpec, RasterGrid, Source, TimeWindow};

/// Current wall-clock time as epoch seconds.
pub fn now_epoch() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or_default()
}
