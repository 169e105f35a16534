//! Serving layer: published batch views, the batch + realtime merge, and
//! structured queries over one merged snapshot.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{BatchView, ViewDescriptor, VenueView};
use crate::model::{BoundingBox, GridSpec, RasterGrid, TimeWindow, VenueBins};
use crate::speed::{SpeedError, SpeedLayer};
use crate::store::Archive;

const MERGE_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServingError {
    #[error("unknown view {0:?}")]
    UnknownView(String),
    #[error("realtime floor does not match batch watermark {watermark} of view {view:?}")]
    WatermarkMismatch { view: String, watermark: u64 },
    #[error("watermark regression for view {view:?}: {published} -> {offered}")]
    WatermarkRegression { view: String, published: u64, offered: u64 },
    #[error("{field} out of bounds: {message}")]
    OutOfBounds { field: &'static str, message: String },
    #[error("view {0:?} has no venue bins")]
    NoVenueBins(String),
}

/// A batch view together with its venue view, published as one unit.
#[derive(Debug, Clone)]
pub struct Published {
    pub batch: Arc<BatchView>,
    pub venues: Option<Arc<VenueView>>,
}

impl Published {
    pub fn watermark(&self) -> u64 {
        self.batch.watermark
    }
}

/// Registry of the latest published batch view per name. Publishing is an
/// atomic pointer swap.
#[derive(Debug, Default)]
pub struct ServingLayer {
    published: RwLock<HashMap<String, Arc<Published>>>,
}

impl ServingLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, batch: BatchView, venues: Option<VenueView>) -> Result<(), ServingError> {
        let name = batch.descriptor.name.clone();
        let mut map = self.published.write().expect("serving registry poisoned");
        if let Some(old) = map.get(&name) {
            if batch.watermark < old.watermark() {
                return Err(ServingError::WatermarkRegression {
                    view: name,
                    published: old.watermark(),
                    offered: batch.watermark,
                });
            }
        }
        map.insert(
            name,
            Arc::new(Published {
                batch: Arc::new(batch),
                venues: venues.map(Arc::new),
            }),
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Arc<Published>, ServingError> {
        self.published
            .read()
            .expect("serving registry poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| ServingError::UnknownView(name.to_string()))
    }

    pub fn remove(&self, name: &str) {
        self.published.write().expect("serving registry poisoned").remove(name);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedView {
    pub descriptor: ViewDescriptor,
    pub counts: RasterGrid,
    pub venue_bins: Option<VenueBins>,
    /// Realtime ceiling the merge covers: every event with seq <= as_of_seq
    /// is counted exactly once.
    pub as_of_seq: u64,
    pub batch_watermark: u64,
    /// Wall-clock time of the merge, epoch seconds.
    pub freshness: i64,
}

/// Merge the published batch view of `name` with a realtime snapshot
/// pinned to that batch's watermark.
pub fn merge(serving: &ServingLayer, speed: &SpeedLayer, name: &str) -> Result<MergedView, ServingError> {
    let mut last_watermark = 0;
    for _ in 0..MERGE_ATTEMPTS {
        let published = serving.get(name)?;
        last_watermark = published.watermark();
        let rt = match speed.snapshot_at_floor(name, published.watermark()) {
            Ok(rt) => rt,
            // Compaction overtook this batch view; a newer one is published.
            Err(SpeedError::FloorPassed { .. }) => {
                std::thread::yield_now();
                continue;
            }
            Err(_) => return Err(ServingError::UnknownView(name.to_string())),
        };
        let batch = &published.batch;
        let mut counts = batch.counts.clone();
        for (&(r, c), &n) in &rt.cells {
            counts.add_at(r, c, n as f64);
        }
        let venue_bins = published.venues.as_ref().map(|vv| {
            let mut bins = vv.bins.clone();
            for ((venue, bin), &n) in &rt.venue_bins {
                bins.add(venue, *bin, n);
            }
            bins
        });
        return Ok(MergedView {
            descriptor: batch.descriptor.clone(),
            counts,
            venue_bins,
            as_of_seq: rt.ceiling,
            batch_watermark: batch.watermark,
            freshness: crate::now_epoch(),
        });
    }
    Err(ServingError::WatermarkMismatch {
        view: name.to_string(),
        watermark: last_watermark,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Grid,
    Total,
    PerVenue,
    TopKCells(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub view: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeWindow>,
    pub aggregate: Aggregate,
}

impl QueryRequest {
    pub fn new(view: &str, aggregate: Aggregate) -> Self {
        QueryRequest {
            view: view.to_string(),
            bbox: None,
            window: None,
            aggregate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCell {
    pub row: usize,
    pub col: usize,
    pub lat: f64,
    pub lon: f64,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryResult {
    Grid {
        spec: GridSpec,
        nodata: f64,
        rows: Vec<Vec<f64>>,
    },
    Total {
        total: f64,
    },
    PerVenue {
        window_start: i64,
        bin_width: i64,
        venues: BTreeMap<String, Vec<u64>>,
    },
    TopKCells {
        cells: Vec<RankedCell>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub view: String,
    pub as_of_seq: u64,
    pub batch_watermark: u64,
    pub freshness: i64,
    pub result: QueryResult,
}

/// Answer `req` from one merged snapshot. Sub-window queries are counted
/// from the archive pinned at the snapshot's `as_of_seq`, which covers the
/// same events as the merge. A sub-bbox selects the cells whose centers lie
/// inside it.
pub fn query(merged: &MergedView, archive: &Archive, req: &QueryRequest) -> Result<QueryResponse, ServingError> {
    let d = &merged.descriptor;
    let cells = match &req.bbox {
        Some(b) => {
            if !d.spec.bbox.contains_box(b, d.spec.cellsize * 1e-6) {
                return Err(ServingError::OutOfBounds {
                    field: "bbox",
                    message: "sub-bbox must lie within the view bbox".into(),
                });
            }
            Some(d.spec.cells_within(b).ok_or_else(|| ServingError::OutOfBounds {
                field: "bbox",
                message: "sub-bbox contains no cell center".into(),
            })?)
        }
        None => None,
    };
    if let Some(w) = &req.window {
        if !d.window.contains_window(w) {
            return Err(ServingError::OutOfBounds {
                field: "window",
                message: "sub-window must lie within the view window".into(),
            });
        }
    }

    let (counts, venue_bins) = match (&req.window, &cells, req.aggregate) {
        (None, None, _) | (None, Some(_), Aggregate::Grid | Aggregate::Total | Aggregate::TopKCells(_)) => {
            (merged.counts.clone(), merged.venue_bins.clone())
        }
        _ => recount(merged, archive, req.window, cells.clone()),
    };

    let (counts, row0, col0) = match cells {
        Some((rows, cols)) => {
            let (r0, c0) = (*rows.start(), *cols.start());
            (counts.crop(rows, cols), r0, c0)
        }
        None => (counts, 0, 0),
    };

    let result = match req.aggregate {
        Aggregate::Grid => QueryResult::Grid {
            spec: *counts.spec(),
            nodata: counts.nodata(),
            rows: counts.rows().map(<[f64]>::to_vec).collect(),
        },
        Aggregate::Total => QueryResult::Total { total: counts.sum() },
        Aggregate::PerVenue => {
            let bins = venue_bins.ok_or_else(|| ServingError::NoVenueBins(d.name.clone()))?;
            QueryResult::PerVenue {
                window_start: bins.window_start,
                bin_width: bins.bin_width,
                venues: bins.venues,
            }
        }
        Aggregate::TopKCells(k) => QueryResult::TopKCells {
            cells: top_k(&counts, k)
                .into_iter()
                .map(|(r, c, count)| {
                    let (lat, lon) = d.spec.cell_center(r + row0, c + col0);
                    RankedCell {
                        row: r + row0,
                        col: c + col0,
                        lat,
                        lon,
                        count,
                    }
                })
                .collect(),
        },
    };
    Ok(QueryResponse {
        view: d.name.clone(),
        as_of_seq: merged.as_of_seq,
        batch_watermark: merged.batch_watermark,
        freshness: merged.freshness,
        result,
    })
}

type CellRanges = (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>);

/// Counts and venue bins over archived events with seq <= as_of_seq,
/// restricted to a sub-window and to a block of cells.
fn recount(
    merged: &MergedView,
    archive: &Archive,
    window: Option<TimeWindow>,
    cells: Option<CellRanges>,
) -> (RasterGrid, Option<VenueBins>) {
    let d = &merged.descriptor;
    let mut counts = RasterGrid::zeros(d.spec);
    let mut venues = d.empty_venue_bins();
    let scan_window = match (d.effective_window(), window) {
        (Some(a), Some(b)) => a.intersect(&b),
        (a, None) => a,
        (None, _) => None,
    };
    if let Some(w) = scan_window {
        archive.for_each(w, Some(&d.spec.bbox), Some(merged.as_of_seq), |entry| {
            let Some((r, c)) = d.cell_for(&entry.event) else {
                return;
            };
            if let Some((rows, cols)) = &cells {
                if !rows.contains(&r) || !cols.contains(&c) {
                    return;
                }
            }
            counts.add_at(r, c, 1.0);
            if let (Some(bins), Some((venue, bin))) = (venues.as_mut(), d.venue_bin_for(&entry.event)) {
                bins.add(venue, bin, 1);
            }
        });
    }
    (counts, venues)
}

/// The `k` largest data cells, ties broken by `(row, col)` ascending.
pub fn top_k(raster: &RasterGrid, k: usize) -> Vec<(usize, usize, f64)> {
    let ncols = raster.ncols();
    let mut cells: Vec<(usize, f64)> = raster
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| !raster.is_nodata(v))
        .map(|(i, &v)| (i, v))
        .collect();
    cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cells.truncate(k);
    cells.into_iter().map(|(i, v)| (i / ncols, i % ncols, v)).collect()
}
