//! Case-study analytics on merged views: count rasters, KDE smoothing,
//! population scaling, dasymetric addition onto a baseline, scenario
//! splitting and venue occupancy curves.

mod kde;
mod occupancy;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GeoEvent, GridSpec, RasterGrid, TimeWindow};

pub use kde::{kde, quartic_offsets, DEFAULT_RADIUS_CELLS};
pub use occupancy::{occupancy_curve, OccupancyBin, OccupancyCurve, OccupancyOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },
    #[error("density has no mass to distribute a positive population over")]
    DegenerateDensity,
    #[error("rasters are not on the same grid")]
    SpecMismatch,
    #[error("scenario windows overlap: {0} and {1}")]
    OverlappingScenarios(String, String),
    #[error("no observations")]
    NoObservations,
}

/// A labeled absolute time window, e.g. game hours around a kickoff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub window: TimeWindow,
}

impl ScenarioSpec {
    /// Window `[anchor + from_secs, anchor + to_secs)`.
    pub fn relative(name: &str, anchor: i64, from_secs: i64, to_secs: i64) -> Result<Self, AnalyticsError> {
        let window = TimeWindow::new(anchor + from_secs, anchor + to_secs).map_err(|e| AnalyticsError::InvalidArgument {
            field: "window",
            message: e.to_string(),
        })?;
        Ok(ScenarioSpec {
            name: name.to_string(),
            window,
        })
    }
}

/// Count events per cell. Events outside the grid are ignored.
pub fn rasterize<'a>(events: impl IntoIterator<Item = &'a GeoEvent>, spec: &GridSpec) -> RasterGrid {
    let mut out = RasterGrid::zeros(*spec);
    for e in events {
        if let Some((r, c)) = spec.cell_of(e.lat, e.lon) {
            out.add_at(r, c, 1.0);
        }
    }
    out
}

pub fn scale_to_population(density: &RasterGrid, total_population: f64) -> Result<RasterGrid, AnalyticsError> {
    if !(total_population >= 0.0) || !total_population.is_finite() {
        return Err(AnalyticsError::InvalidArgument {
            field: "total_population",
            message: "must be a non-negative finite number".into(),
        });
    }
    if total_population == 0.0 {
        return Ok(density.map_data(|_| 0.0));
    }
    let mass = density.sum();
    if !(mass > 0.0) {
        return Err(AnalyticsError::DegenerateDensity);
    }
    let factor = total_population / mass;
    Ok(density.map_data(|v| v * factor))
}

/// Cellwise `baseline + modeled`. Baseline nodata cells stay nodata; modeled
/// nodata cells add nothing.
pub fn dasymetric_add(baseline: &RasterGrid, modeled: &RasterGrid) -> Result<RasterGrid, AnalyticsError> {
    if !baseline.spec().is_aligned_with(modeled.spec()) {
        return Err(AnalyticsError::SpecMismatch);
    }
    let values = baseline
        .values()
        .iter()
        .zip(modeled.values())
        .map(|(&b, &m)| {
            if baseline.is_nodata(b) {
                b
            } else if modeled.is_nodata(m) {
                b
            } else {
                b + m
            }
        })
        .collect();
    Ok(RasterGrid::from_values(*baseline.spec(), values, baseline.nodata()).expect("same shape as baseline"))
}

/// Combine several density layers into one modeled population raster:
/// layer `i` receives `total * weight_i / sum(weights)` people.
pub fn model_population(layers: &[(&RasterGrid, f64)], total: f64) -> Result<RasterGrid, AnalyticsError> {
    let Some((first, _)) = layers.first() else {
        return Err(AnalyticsError::InvalidArgument {
            field: "layers",
            message: "at least one layer is required".into(),
        });
    };
    let weight_sum: f64 = layers.iter().map(|l| l.1).sum();
    if !(weight_sum > 0.0) || layers.iter().any(|l| !(l.1 >= 0.0)) {
        return Err(AnalyticsError::InvalidArgument {
            field: "weights",
            message: "weights must be non-negative with a positive sum".into(),
        });
    }
    let mut out = first.map_data(|_| 0.0);
    for (layer, w) in layers {
        if !layer.spec().is_aligned_with(first.spec()) {
            return Err(AnalyticsError::SpecMismatch);
        }
        let part = scale_to_population(layer, total * w / weight_sum)?;
        out = dasymetric_add(&out, &part)?;
    }
    Ok(out)
}

/// Smooth each count layer with [`kde`], spread `total` people over the
/// smoothed layers by weight and add the result onto `baseline`.
pub fn population_surface(
    baseline: &RasterGrid,
    count_layers: &[(&RasterGrid, f64)],
    radius_cells: usize,
    total: f64,
) -> Result<RasterGrid, AnalyticsError> {
    let smoothed = count_layers
        .iter()
        .map(|(r, w)| Ok((kde(r, radius_cells)?, *w)))
        .collect::<Result<Vec<_>, AnalyticsError>>()?;
    let refs: Vec<(&RasterGrid, f64)> = smoothed.iter().map(|(r, w)| (r, *w)).collect();
    dasymetric_add(baseline, &model_population(&refs, total)?)
}

/// Assign each event to the scenario whose window holds its timestamp.
/// Every scenario appears in the output, possibly with no events.
pub fn split_by_scenario<'a>(
    events: impl IntoIterator<Item = &'a GeoEvent>,
    scenarios: &[ScenarioSpec],
) -> Result<BTreeMap<String, Vec<GeoEvent>>, AnalyticsError> {
    for (i, a) in scenarios.iter().enumerate() {
        for b in &scenarios[i + 1..] {
            if a.window.overlaps(&b.window) || a.name == b.name {
                return Err(AnalyticsError::OverlappingScenarios(a.name.clone(), b.name.clone()));
            }
        }
    }
    let mut out: BTreeMap<String, Vec<GeoEvent>> = scenarios.iter().map(|s| (s.name.clone(), Vec::new())).collect();
    for e in events {
        if let Some(s) = scenarios.iter().find(|s| s.window.contains(e.ts)) {
            out.get_mut(&s.name).expect("seeded above").push(e.clone());
        }
    }
    Ok(out)
}

/// Per-interval counts from cumulative snapshots; dips clamp to 0.
pub fn cumulative_to_interval(cumulative: &[u64]) -> Vec<u64> {
    let mut prev = 0u64;
    cumulative
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let d = if i == 0 { c } else { c.saturating_sub(prev) };
            prev = c;
            d
        })
        .collect()
}
