//! Wires archive, batch, speed and serving layers into one engine.
//!
//! Ingestion is the single serialization point: an event is appended to the
//! archive and applied to the speed layer under one lock, so archive seqs
//! reach the speed layer in order. The recompute loop publishes a new batch
//! view per registered view and only then compacts the speed layer to the
//! same watermark, so no event is ever covered by neither layer.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::analytics::{occupancy_curve, AnalyticsError, OccupancyCurve, OccupancyOptions};
use crate::batch::{build_batch_view, build_venue_view, BatchError, BatchView, VenueView, ViewDescriptor, ViewRegistry};
use crate::formats::FormatError;
use crate::ingestion::{EventSink, IngestError};
use crate::model::{GeoEvent, TimeWindow};
use crate::serving::{self, MergedView, QueryRequest, QueryResponse, ServingError, ServingLayer};
use crate::speed::{SpeedError, SpeedLayer};
use crate::store::{GeoDataStore, StoreError, SyncMode, DEFAULT_SEGMENT_LEN};

pub const DEFAULT_RECOMPUTE_INTERVAL: Duration = Duration::from_secs(30);
const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Speed(#[from] SpeedError),
    #[error(transparent)]
    Serving(#[from] ServingError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub segment_len: u64,
    pub sync: SyncMode,
    pub recompute_interval: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            data_dir: None,
            segment_len: DEFAULT_SEGMENT_LEN,
            sync: SyncMode::Flush,
            recompute_interval: DEFAULT_RECOMPUTE_INTERVAL,
        }
    }
}

impl EngineConfig {
    pub fn persistent(data_dir: impl Into<PathBuf>) -> Self {
        EngineConfig {
            data_dir: Some(data_dir.into()),
            ..Default::default()
        }
    }
}

/// Summary of a registered view for listings.
#[derive(Debug, Clone, Serialize)]
pub struct ViewStatus {
    pub descriptor: ViewDescriptor,
    pub batch_watermark: u64,
    pub built_at: i64,
    pub realtime_ceiling: u64,
}

/// Parameters for an occupancy curve computed from the archive.
#[derive(Debug, Clone)]
pub struct OccupancyQuery {
    pub venue_id: String,
    pub bin_width: i64,
    /// Any instant at a day boundary; days are `[day_start + k * 86400, ..)`.
    pub day_start: i64,
    pub confidence: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl OccupancyQuery {
    pub fn new(venue_id: &str) -> Self {
        let d = OccupancyOptions::default();
        OccupancyQuery {
            venue_id: venue_id.to_string(),
            bin_width: d.bin_width,
            day_start: 0,
            confidence: d.confidence,
            resamples: d.resamples,
            seed: d.seed,
        }
    }
}

pub struct Engine {
    store: GeoDataStore,
    registry: ViewRegistry,
    speed: SpeedLayer,
    serving: ServingLayer,
    ingest_lock: Mutex<()>,
    config: EngineConfig,
}

impl Engine {
    pub fn in_memory() -> Self {
        Engine::open(EngineConfig::default()).expect("in-memory engine cannot fail to open")
    }

    /// Open (or create) an engine, recover the archive and rebuild every
    /// registered view at the recovered high watermark.
    pub fn open(config: EngineConfig) -> Result<Self, EngineError> {
        let (store, registry) = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(StoreError::Io)?;
                (
                    GeoDataStore::open(dir, config.segment_len, config.sync)?,
                    ViewRegistry::open(dir.join("views.json"))?,
                )
            }
            None => (GeoDataStore::in_memory(), ViewRegistry::in_memory()),
        };
        let hw = store.archive.high_watermark();
        let engine = Engine {
            speed: SpeedLayer::new(hw),
            serving: ServingLayer::new(),
            ingest_lock: Mutex::new(()),
            store,
            registry,
            config,
        };
        for d in engine.registry.list() {
            let (batch, venues) = engine.build_at(&d, hw)?;
            engine.serving.publish(batch, venues)?;
            engine.speed.register(d, hw)?;
        }
        tracing::info!(high_watermark = hw, views = engine.registry.list().len(), "engine opened");
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.config.data_dir.as_deref()
    }

    pub fn store(&self) -> &GeoDataStore {
        &self.store
    }

    pub fn speed(&self) -> &SpeedLayer {
        &self.speed
    }

    pub fn serving(&self) -> &ServingLayer {
        &self.serving
    }

    pub fn high_watermark(&self) -> u64 {
        self.store.archive.high_watermark()
    }

    /// Append to the archive and apply to the speed layer. On archive
    /// failure nothing is applied.
    pub fn ingest(&self, event: GeoEvent) -> Result<u64, EngineError> {
        let _guard = self.ingest_lock.lock().expect("ingest lock poisoned");
        let seq = self.store.archive.append(event.clone())?;
        self.speed.apply(&event, seq)?;
        Ok(seq)
    }

    fn build_at(&self, d: &ViewDescriptor, up_to: u64) -> Result<(BatchView, Option<VenueView>), EngineError> {
        let batch = build_batch_view(&self.store.archive, d, up_to)?;
        let venues = match d.venue_bin_width {
            Some(bw) => Some(build_venue_view(&self.store.archive, d, bw, up_to)?),
            None => None,
        };
        Ok((batch, venues))
    }

    pub fn register_view(&self, descriptor: ViewDescriptor) -> Result<(), EngineError> {
        descriptor.validate()?;
        let _guard = self.ingest_lock.lock().expect("ingest lock poisoned");
        if self.registry.contains(&descriptor.name) {
            return Err(BatchError::NameTaken(descriptor.name).into());
        }
        let hw = self.store.archive.high_watermark();
        let (batch, venues) = self.build_at(&descriptor, hw)?;
        self.registry.register(descriptor.clone())?;
        self.serving.publish(batch, venues)?;
        self.speed.register(descriptor, hw)?;
        Ok(())
    }

    pub fn descriptor(&self, name: &str) -> Result<ViewDescriptor, EngineError> {
        Ok(self.registry.get(name)?)
    }

    pub fn views(&self) -> Vec<ViewStatus> {
        self.registry
            .list()
            .into_iter()
            .filter_map(|d| {
                let p = self.serving.get(&d.name).ok()?;
                Some(ViewStatus {
                    batch_watermark: p.watermark(),
                    built_at: p.batch.built_at,
                    realtime_ceiling: self.speed.ceiling(),
                    descriptor: d,
                })
            })
            .collect()
    }

    /// One-shot rebuild of a single view at the current high watermark,
    /// without publishing it.
    pub fn build_view(&self, name: &str) -> Result<(BatchView, Option<VenueView>), EngineError> {
        let d = self.registry.get(name)?;
        self.build_at(&d, self.high_watermark())
    }

    /// Rebuild and publish every registered view at the current high
    /// watermark, then compact the speed layer to it. Views whose build
    /// fails keep their previous published version. Returns the watermark.
    pub fn recompute_once(&self) -> u64 {
        let hw = {
            let _guard = self.ingest_lock.lock().expect("ingest lock poisoned");
            self.store.archive.high_watermark()
        };
        for d in self.registry.list() {
            let published = self
                .build_at(&d, hw)
                .and_then(|(batch, venues)| Ok(self.serving.publish(batch, venues)?));
            match published {
                Ok(()) => {
                    if let Err(e) = self.speed.compact(&d.name, hw) {
                        tracing::warn!(view = %d.name, error = %e, "compaction skipped");
                    }
                }
                Err(e) => tracing::error!(view = %d.name, error = %e, "batch rebuild failed"),
            }
        }
        tracing::debug!(watermark = hw, "recompute cycle done");
        hw
    }

    /// Run [`recompute_once`](Self::recompute_once) every `interval` on a
    /// background thread until the handle is stopped or dropped.
    pub fn spawn_recompute_loop(self: &Arc<Self>, interval: Duration) -> RecomputeHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let engine = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let thread = std::thread::Builder::new()
            .name("recompute".into())
            .spawn(move || {
                while !flag.load(Ordering::Acquire) {
                    std::thread::park_timeout(interval);
                    if flag.load(Ordering::Acquire) {
                        break;
                    }
                    engine.recompute_once();
                }
            })
            .expect("spawn recompute thread");
        RecomputeHandle {
            stop,
            thread: Some(thread),
        }
    }

    pub fn merge(&self, name: &str) -> Result<MergedView, EngineError> {
        Ok(serving::merge(&self.serving, &self.speed, name)?)
    }

    pub fn query(&self, req: &QueryRequest) -> Result<QueryResponse, EngineError> {
        let merged = self.merge(&req.view)?;
        Ok(serving::query(&merged, &self.store.archive, req)?)
    }

    /// Events of the archive up to `up_to` (all when `None`) that the view
    /// counts, in seq order.
    pub fn view_events(&self, name: &str, up_to: Option<u64>, mut f: impl FnMut(&GeoEvent)) -> Result<(), EngineError> {
        let d = self.registry.get(name)?;
        if let Some(w) = d.effective_window() {
            self.store.archive.for_each(w, Some(&d.spec.bbox), up_to, |e| {
                if d.cell_for(&e.event).is_some() {
                    f(&e.event);
                }
            });
        }
        Ok(())
    }

    /// Per-day bin counts of one venue's events, days starting at
    /// `day_start + k * 86400`. Days run from the first to the last observed
    /// day, so quiet days in between appear as all-zero rows.
    pub fn venue_daily_bins(&self, venue_id: &str, bin_width: i64, day_start: i64) -> Result<Vec<Vec<u64>>, EngineError> {
        if bin_width <= 0 || SECONDS_PER_DAY % bin_width != 0 {
            return Err(AnalyticsError::InvalidArgument {
                field: "bin",
                message: "bin width must divide 86400".into(),
            }
            .into());
        }
        let nbins = (SECONDS_PER_DAY / bin_width) as usize;
        let mut days: std::collections::BTreeMap<i64, Vec<u64>> = Default::default();
        self.store.archive.for_each(TimeWindow::all(), None, None, |e| {
            if e.event.venue_id.as_deref() == Some(venue_id) {
                let rel = e.event.ts - day_start;
                let day = rel.div_euclid(SECONDS_PER_DAY);
                let bin = (rel.rem_euclid(SECONDS_PER_DAY) / bin_width) as usize;
                days.entry(day).or_insert_with(|| vec![0; nbins])[bin] += 1;
            }
        });
        let (Some(&first), Some(&last)) = (days.keys().next(), days.keys().last()) else {
            return Ok(Vec::new());
        };
        Ok((first..=last)
            .map(|d| days.remove(&d).unwrap_or_else(|| vec![0; nbins]))
            .collect())
    }

    pub fn occupancy(&self, q: &OccupancyQuery) -> Result<OccupancyCurve, EngineError> {
        let per_day = self.venue_daily_bins(&q.venue_id, q.bin_width, q.day_start)?;
        let opts = OccupancyOptions {
            venue_id: q.venue_id.clone(),
            start: q.day_start.rem_euclid(SECONDS_PER_DAY),
            bin_width: q.bin_width,
            confidence: q.confidence,
            resamples: q.resamples,
            seed: q.seed,
        };
        Ok(occupancy_curve(&per_day, &opts)?)
    }
}

impl EventSink for Engine {
    fn ingest(&self, event: GeoEvent) -> Result<u64, IngestError> {
        Engine::ingest(self, event).map_err(|e| match e {
            EngineError::Store(StoreError::DuplicateEvent(id)) => IngestError::DuplicateEvent(id),
            other => IngestError::IngestFailed(other.to_string()),
        })
    }
}

/// Stops the background recompute loop when dropped.
pub struct RecomputeHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl RecomputeHandle {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            t.thread().unpark();
            let _ = t.join();
        }
    }
}

impl Drop for RecomputeHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
