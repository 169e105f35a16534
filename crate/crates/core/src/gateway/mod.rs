//! The machine-facing surface: HTTP API, dataset export and service
//! configuration. The operator CLI in `src/bin` is a thin shell over these.

pub mod config;
pub mod http;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::analytics::{dasymetric_add, kde, scale_to_population, AnalyticsError, DEFAULT_RADIUS_CELLS};
use crate::batch::BatchError;
use crate::engine::{Engine, EngineError};
use crate::formats::{self, FormatError};
use crate::model::RasterGrid;
use crate::serving::{MergedView, ServingError};
use crate::speed::SpeedError;
use crate::store::StoreError;

pub use config::ServiceConfig;
pub use http::{router, serve};

/// Structured error returned by every endpoint and CLI command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn bad_param(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            field: Some(field.to_string()),
            ..ApiError::new(400, "invalid_argument", message)
        }
    }

    fn with_field(mut self, field: &str) -> Self {
        self.field = Some(field.to_string());
        self
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(field) = &self.field {
            write!(f, " (field {field})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ApiError {}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::Store(s) => match s {
                StoreError::DuplicateEvent(_) => ApiError::new(409, "duplicate_event", msg),
                StoreError::NameTaken(_) => ApiError::new(409, "name_taken", msg),
                StoreError::NotFound(_) => ApiError::new(404, "not_found", msg),
                StoreError::InvalidName(_) => ApiError::new(400, "invalid_name", msg).with_field("name"),
                _ => ApiError::new(500, "storage_failure", msg),
            },
            EngineError::Batch(b) => match b {
                BatchError::UnknownView(_) => ApiError::new(404, "unknown_view", msg).with_field("view"),
                BatchError::NameTaken(_) => ApiError::new(409, "name_taken", msg).with_field("name"),
                BatchError::BinMismatch { .. } => ApiError::new(422, "bin_mismatch", msg).with_field("venue_bin_width"),
                BatchError::InvalidDescriptor(_) => ApiError::new(400, "invalid_descriptor", msg),
                _ => ApiError::new(500, "internal", msg),
            },
            EngineError::Speed(SpeedError::UnknownView(_)) => ApiError::new(404, "unknown_view", msg).with_field("view"),
            EngineError::Speed(_) => ApiError::new(500, "internal", msg),
            EngineError::Serving(s) => match s {
                ServingError::UnknownView(_) => ApiError::new(404, "unknown_view", msg).with_field("view"),
                ServingError::OutOfBounds { field, .. } => ApiError::new(422, "out_of_bounds", msg).with_field(field),
                ServingError::NoVenueBins(_) => ApiError::new(422, "no_venue_bins", msg).with_field("aggregate"),
                ServingError::WatermarkMismatch { .. } => ApiError::new(503, "watermark_mismatch", msg),
                ServingError::WatermarkRegression { .. } => ApiError::new(500, "internal", msg),
            },
            EngineError::Analytics(a) => match a {
                AnalyticsError::InvalidArgument { field, .. } => ApiError::bad_param(field, msg),
                AnalyticsError::NoObservations => ApiError::new(404, "no_observations", msg),
                AnalyticsError::DegenerateDensity => ApiError::new(422, "degenerate_density", msg),
                AnalyticsError::SpecMismatch => ApiError::new(422, "spec_mismatch", msg),
                AnalyticsError::OverlappingScenarios(..) => ApiError::new(422, "overlapping_scenarios", msg),
            },
            EngineError::Format(_) => ApiError::new(500, "format_error", msg),
        }
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        EngineError::from(e).into()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        EngineError::from(e).into()
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        EngineError::from(e).into()
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::new(500, "io_error", e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Asc,
    Csv,
    Ndjson,
}

impl FromStr for ExportFormat {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asc" => Ok(ExportFormat::Asc),
            "csv" => Ok(ExportFormat::Csv),
            "ndjson" => Ok(ExportFormat::Ndjson),
            other => Err(ApiError::bad_param("format", format!("unknown format {other:?}; expected asc, csv or ndjson"))),
        }
    }
}

impl ExportFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Asc => "text/plain; charset=utf-8",
            ExportFormat::Csv => "text/csv; charset=utf-8",
            ExportFormat::Ndjson => "application/x-ndjson",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Raw,
    Kde,
    Final,
}

impl FromStr for Layer {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Layer::Raw),
            "kde" => Ok(Layer::Kde),
            "final" => Ok(Layer::Final),
            other => Err(ApiError::bad_param("layer", format!("unknown layer {other:?}; expected raw, kde or final"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExportRequest {
    pub view: String,
    pub format: ExportFormat,
    pub layer: Layer,
    pub radius: usize,
    pub population: Option<f64>,
    pub baseline: Option<String>,
}

impl ExportRequest {
    pub fn new(view: &str, format: ExportFormat) -> Self {
        ExportRequest {
            view: view.to_string(),
            format,
            layer: Layer::Raw,
            radius: DEFAULT_RADIUS_CELLS,
            population: None,
            baseline: None,
        }
    }
}

/// The raster of `layer` for a merged view: raw counts, their KDE, or the
/// KDE scaled to `population` and added onto a reference baseline.
pub fn layer_raster(engine: &Engine, merged: &MergedView, req: &ExportRequest) -> Result<RasterGrid, ApiError> {
    match req.layer {
        Layer::Raw => Ok(merged.counts.clone()),
        Layer::Kde => Ok(kde(&merged.counts, req.radius)?),
        Layer::Final => {
            let population = req
                .population
                .ok_or_else(|| ApiError::bad_param("population", "layer=final needs a population"))?;
            let name = req
                .baseline
                .as_deref()
                .ok_or_else(|| ApiError::bad_param("baseline", "layer=final needs a baseline raster name"))?;
            let baseline = engine.store().references.get(name).map_err(|e| ApiError::from(e).with_field("baseline"))?;
            let modeled = scale_to_population(&kde(&merged.counts, req.radius)?, population)?;
            Ok(dasymetric_add(baseline.raster(), &modeled)?)
        }
    }
}

/// An export whose inputs are resolved and validated; writing it can only
/// fail on I/O.
#[derive(Debug, Clone)]
pub enum PreparedExport {
    Raster(RasterGrid),
    Venues(crate::model::VenueBins),
    Events { view: String, as_of_seq: u64 },
}

pub fn prepare_export(engine: &Engine, req: &ExportRequest) -> Result<PreparedExport, ApiError> {
    let merged = engine.merge(&req.view)?;
    if req.format != ExportFormat::Asc && req.layer != Layer::Raw {
        return Err(ApiError::bad_param("layer", "csv and ndjson exports take only layer=raw"));
    }
    match req.format {
        ExportFormat::Asc => Ok(PreparedExport::Raster(layer_raster(engine, &merged, req)?)),
        ExportFormat::Csv => merged.venue_bins.map(PreparedExport::Venues).ok_or_else(|| {
            ApiError::new(422, "no_venue_bins", format!("view {:?} has no venue bins", req.view)).with_field("format")
        }),
        ExportFormat::Ndjson => Ok(PreparedExport::Events {
            view: req.view.clone(),
            as_of_seq: merged.as_of_seq,
        }),
    }
}

/// Write a prepared export. Returns the number of records written: raster
/// rows, CSV data rows or events.
pub fn write_export(engine: &Engine, prepared: &PreparedExport, mut out: impl Write) -> Result<usize, ApiError> {
    match prepared {
        PreparedExport::Raster(raster) => {
            formats::write_asc(raster, &mut out)?;
            Ok(raster.nrows())
        }
        PreparedExport::Venues(bins) => {
            formats::write_venue_csv(bins, &mut out)?;
            Ok(bins.venues.len() * bins.nbins)
        }
        PreparedExport::Events { view, as_of_seq } => {
            let mut n = 0;
            let mut result = Ok(());
            engine.view_events(view, Some(*as_of_seq), |e| {
                if result.is_ok() {
                    result = out.write_all(formats::event_line(e).as_bytes());
                    n += 1;
                }
            })?;
            result?;
            out.flush()?;
            Ok(n)
        }
    }
}

/// Prepare and write an export of `req` to `out`.
pub fn export(engine: &Engine, req: &ExportRequest, out: impl Write) -> Result<usize, ApiError> {
    let prepared = prepare_export(engine, req)?;
    write_export(engine, &prepared, out)
}
