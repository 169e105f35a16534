//! Shared domain types: events, bounding boxes, arc-second grids and rasters.
//!
//! All grid arithmetic happens in WGS84 degrees. A grid is anchored at the
//! north-west corner of its bounding box; row 0 is the northernmost row and
//! column 0 the westernmost. Cell extents are half-open measured from that
//! corner, so a point on the northern or western outer edge belongs to row 0 /
//! column 0 while the southern and eastern outer edges are excluded.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 3 arc-seconds, in degrees.
pub const THREE_ARC_SECONDS: f64 = 1.0 / 1200.0;

/// Default sentinel for cells without data.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Slack (in cell units) applied before taking the ceiling of span/cellsize,
/// so decimal spans such as 0.05 deg at 1/1200 deg give 60 cells, not 61.
const SPAN_EPS: f64 = 1e-9;

/// Mean earth radius in meters used for the spherical meters-per-degree helpers.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },
}

impl ModelError {
    fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        ModelError::InvalidArgument {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Checkin,
    Tweet,
    Sensor,
    OpenData,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Checkin, Source::Tweet, Source::Sensor, Source::OpenData];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Checkin => "checkin",
            Source::Tweet => "tweet",
            Source::Sensor => "sensor",
            Source::OpenData => "open_data",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL.into_iter().find(|src| src.as_str() == s).ok_or(())
    }
}

/// One geo-tagged, timestamped observation.
///
/// The serialized form is exactly one NDJSON event record, so archive
/// segments, ndjson exports and replay files share a format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoEvent {
    pub event_id: String,
    pub source: Source,
    /// UTC epoch seconds.
    pub ts: i64,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBoundingBox")]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

#[derive(Deserialize)]
struct RawBoundingBox {
    min_lat: f64,
    min_lon: f64,
    max_lat: f64,
    max_lon: f64,
}

impl TryFrom<RawBoundingBox> for BoundingBox {
    type Error = ModelError;

    fn try_from(raw: RawBoundingBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.min_lat, raw.min_lon, raw.max_lat, raw.max_lon)
    }
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, ModelError> {
        let all = [min_lat, min_lon, max_lat, max_lon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::invalid("bbox", "coordinates must be finite"));
        }
        if min_lat < -90.0 || max_lat > 90.0 {
            return Err(ModelError::invalid("bbox", "latitude outside [-90, 90]"));
        }
        if min_lon < -180.0 || max_lon > 180.0 {
            return Err(ModelError::invalid(
                "bbox",
                "longitude outside [-180, 180] (antimeridian crossing is not supported)",
            ));
        }
        if min_lat >= max_lat {
            return Err(ModelError::invalid("bbox", "min_lat must be < max_lat"));
        }
        if min_lon >= max_lon {
            return Err(ModelError::invalid("bbox", "min_lon must be < max_lon"));
        }
        Ok(BoundingBox {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }

    /// Square (in meters) box circumscribing a circle of `radius_m` around a
    /// center point, on a spherical earth.
    pub fn around(lat: f64, lon: f64, radius_m: f64) -> Result<Self, ModelError> {
        let dlat = radius_m / meters_per_degree_lat();
        let dlon = radius_m / meters_per_degree_lon(lat);
        BoundingBox::new(lat - dlat, lon - dlon, lat + dlat, lon + dlon)
    }

    /// Box with equal half-extents in degrees: `radius_m` converted with the
    /// latitude scale only.
    pub fn square_degrees_around(lat: f64, lon: f64, radius_m: f64) -> Result<Self, ModelError> {
        let d = radius_m / meters_per_degree_lat();
        BoundingBox::new(lat - d, lon - d, lat + d, lon + d)
    }

    /// Closed containment test.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }

    /// Whether `other` lies inside `self`, allowing `tol` degrees of slack.
    pub fn contains_box(&self, other: &BoundingBox, tol: f64) -> bool {
        other.min_lat >= self.min_lat - tol
            && other.max_lat <= self.max_lat + tol
            && other.min_lon >= self.min_lon - tol
            && other.max_lon <= self.max_lon + tol
    }

    pub fn lat_span(&self) -> f64 {
        self.max_lat - self.min_lat
    }

    pub fn lon_span(&self) -> f64 {
        self.max_lon - self.min_lon
    }
}

pub fn meters_per_degree_lat() -> f64 {
    std::f64::consts::PI * EARTH_RADIUS_M / 180.0
}

pub fn meters_per_degree_lon(lat: f64) -> f64 {
    meters_per_degree_lat() * lat.to_radians().cos()
}

/// Number of columns and rows needed to cover `bbox` at `cellsize` degrees.
pub fn grid_dims(bbox: &BoundingBox, cellsize: f64) -> Result<(usize, usize), ModelError> {
    if !(cellsize > 0.0) || !cellsize.is_finite() {
        return Err(ModelError::invalid("cellsize", "must be a positive finite number"));
    }
    let cells = |span: f64| ((span / cellsize - SPAN_EPS).ceil() as usize).max(1);
    Ok((cells(bbox.lon_span()), cells(bbox.lat_span())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec")]
pub struct GridSpec {
    pub bbox: BoundingBox,
    pub cellsize: f64,
    pub ncols: usize,
    pub nrows: usize,
}

#[derive(Deserialize)]
struct RawGridSpec {
    bbox: BoundingBox,
    #[serde(default = "default_cellsize")]
    cellsize: f64,
}

fn default_cellsize() -> f64 {
    THREE_ARC_SECONDS
}

impl TryFrom<RawGridSpec> for GridSpec {
    type Error = ModelError;

    fn try_from(raw: RawGridSpec) -> Result<Self, Self::Error> {
        GridSpec::new(raw.bbox, raw.cellsize)
    }
}

impl GridSpec {
    /// Grid covering `bbox`. The stored box is snapped outward (south and
    /// east) to whole cells, keeping the north-west corner fixed.
    pub fn new(bbox: BoundingBox, cellsize: f64) -> Result<Self, ModelError> {
        let (ncols, nrows) = grid_dims(&bbox, cellsize)?;
        let snapped = BoundingBox::new(
            bbox.max_lat - nrows as f64 * cellsize,
            bbox.min_lon,
            bbox.max_lat,
            bbox.min_lon + ncols as f64 * cellsize,
        )?;
        Ok(GridSpec {
            bbox: snapped,
            cellsize,
            ncols,
            nrows,
        })
    }

    pub fn three_arc_second(bbox: BoundingBox) -> Result<Self, ModelError> {
        GridSpec::new(bbox, THREE_ARC_SECONDS)
    }

    /// Grid described by an ESRI ASCII style header (lower-left corner).
    pub fn from_corner(
        xllcorner: f64,
        yllcorner: f64,
        ncols: usize,
        nrows: usize,
        cellsize: f64,
    ) -> Result<Self, ModelError> {
        if ncols == 0 || nrows == 0 {
            return Err(ModelError::invalid("ncols/nrows", "must be positive"));
        }
        if !(cellsize > 0.0) || !cellsize.is_finite() {
            return Err(ModelError::invalid("cellsize", "must be a positive finite number"));
        }
        let bbox = BoundingBox::new(
            yllcorner,
            xllcorner,
            yllcorner + nrows as f64 * cellsize,
            xllcorner + ncols as f64 * cellsize,
        )?;
        Ok(GridSpec {
            bbox,
            cellsize,
            ncols,
            nrows,
        })
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Western edge of column 0.
    pub fn west(&self) -> f64 {
        self.bbox.min_lon
    }

    /// Northern edge of row 0.
    pub fn north(&self) -> f64 {
        self.bbox.max_lat
    }

    pub fn south(&self) -> f64 {
        self.north() - self.nrows as f64 * self.cellsize
    }

    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let b = &self.bbox;
        if !(lon >= b.min_lon && lon < b.max_lon && lat > b.min_lat && lat <= b.max_lat) {
            return None;
        }
        let col = ((lon - b.min_lon) / self.cellsize).floor() as usize;
        let row = ((b.max_lat - lat) / self.cellsize).floor() as usize;
        Some((row.min(self.nrows - 1), col.min(self.ncols - 1)))
    }

    /// Geographic center `(lat, lon)` of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.north() - (row as f64 + 0.5) * self.cellsize,
            self.west() + (col as f64 + 0.5) * self.cellsize,
        )
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    /// Same lattice: equal dimensions, cellsize and north-west anchor.
    pub fn is_aligned_with(&self, other: &GridSpec) -> bool {
        let tol = self.cellsize * 1e-6;
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && (self.cellsize - other.cellsize).abs() <= tol
            && (self.west() - other.west()).abs() <= tol
            && (self.north() - other.north()).abs() <= tol
    }

    /// Inclusive row/column ranges of the cells whose centers fall inside
    /// `sub` (closed test), or `None` when no center does.
    pub fn cells_within(&self, sub: &BoundingBox) -> Option<(std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>)> {
        let rows: Vec<usize> = (0..self.nrows)
            .filter(|&r| {
                let (lat, _) = self.cell_center(r, 0);
                lat >= sub.min_lat && lat <= sub.max_lat
            })
            .collect();
        let cols: Vec<usize> = (0..self.ncols)
            .filter(|&c| {
                let (_, lon) = self.cell_center(0, c);
                lon >= sub.min_lon && lon <= sub.max_lon
            })
            .collect();
        match (rows.first(), rows.last(), cols.first(), cols.last()) {
            (Some(&r0), Some(&r1), Some(&c0), Some(&c1)) => Some((r0..=r1, c0..=c1)),
            _ => None,
        }
    }
}

/// Free-function form of [`GridSpec::cell_of`].
pub fn cell_of(lat: f64, lon: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    spec.cell_of(lat, lon)
}

/// Row-major raster over a [`GridSpec`], row 0 northernmost.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    spec: GridSpec,
    values: Vec<f64>,
    nodata: f64,
}

impl RasterGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        RasterGrid {
            values: vec![0.0; spec.len()],
            spec,
            nodata: DEFAULT_NODATA,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>, nodata: f64) -> Result<Self, ModelError> {
        if values.len() != spec.len() {
            return Err(ModelError::invalid(
                "values",
                format!("expected {} values, got {}", spec.len(), values.len()),
            ));
        }
        if values.iter().any(|&v| v != nodata && !v.is_finite()) {
            return Err(ModelError::invalid("values", "non-nodata values must be finite"));
        }
        Ok(RasterGrid { spec, values, nodata })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    pub fn ncols(&self) -> usize {
        self.spec.ncols
    }

    pub fn nrows(&self) -> usize {
        self.spec.nrows
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.spec.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let i = self.spec.index(row, col);
        self.values[i] = v;
    }

    pub fn add_at(&mut self, row: usize, col: usize, v: f64) {
        let i = self.spec.index(row, col);
        self.values[i] += v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let start = row * self.spec.ncols;
        &self.values[start..start + self.spec.ncols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.spec.ncols)
    }

    /// Sum over data cells.
    pub fn sum(&self) -> f64 {
        self.values.iter().filter(|&&v| v != self.nodata).sum()
    }

    /// `(row, col, value)` of the largest data cell; ties go to the lowest
    /// `(row, col)`.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v == self.nodata {
                continue;
            }
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, v)| (i / self.spec.ncols, i % self.spec.ncols, v))
    }

    pub fn map_data(&self, f: impl Fn(f64) -> f64) -> RasterGrid {
        let nodata = self.nodata;
        RasterGrid {
            spec: self.spec,
            values: self
                .values
                .iter()
                .map(|&v| if v == nodata { v } else { f(v) })
                .collect(),
            nodata,
        }
    }

    /// Sub-raster covering rows `r0..=r1` and columns `c0..=c1`.
    pub fn crop(&self, rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> RasterGrid {
        let (r0, r1, c0, c1) = (*rows.start(), *rows.end(), *cols.start(), *cols.end());
        let ncols = c1 - c0 + 1;
        let nrows = r1 - r0 + 1;
        let cs = self.spec.cellsize;
        let west = self.spec.west() + c0 as f64 * cs;
        let north = self.spec.north() - r0 as f64 * cs;
        let spec = GridSpec::from_corner(west, north - nrows as f64 * cs, ncols, nrows, cs)
            .expect("crop of a valid grid is valid");
        let mut values = Vec::with_capacity(ncols * nrows);
        for r in r0..=r1 {
            values.extend_from_slice(&self.row(r)[c0..=c1]);
        }
        RasterGrid {
            spec,
            values,
            nodata: self.nodata,
        }
    }
}

/// Dense per-venue event counts over bins that tile a time window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VenueBins {
    pub window_start: i64,
    pub bin_width: i64,
    pub nbins: usize,
    pub venues: BTreeMap<String, Vec<u64>>,
}

impl VenueBins {
    pub fn new(window_start: i64, bin_width: i64, nbins: usize) -> Self {
        VenueBins {
            window_start,
            bin_width,
            nbins,
            venues: BTreeMap::new(),
        }
    }

    pub fn bin_of(&self, ts: i64) -> Option<usize> {
        if ts < self.window_start {
            return None;
        }
        let b = ((ts - self.window_start) / self.bin_width) as usize;
        (b < self.nbins).then_some(b)
    }

    pub fn bin_start(&self, bin: usize) -> i64 {
        self.window_start + bin as i64 * self.bin_width
    }

    /// Make sure `venue` has a (possibly all-zero) row.
    pub fn ensure(&mut self, venue: &str) -> &mut Vec<u64> {
        let nbins = self.nbins;
        self.venues
            .entry(venue.to_string())
            .or_insert_with(|| vec![0; nbins])
    }

    pub fn add(&mut self, venue: &str, bin: usize, n: u64) {
        self.ensure(venue)[bin] += n;
    }

    pub fn total(&self) -> u64 {
        self.venues.values().flatten().sum()
    }
}

/// Half-open `[start, end)` interval of epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTimeWindow")]
pub struct TimeWindow {
    pub start: i64,
    pub end: i64,
}

#[derive(Deserialize)]
struct RawTimeWindow {
    start: i64,
    end: i64,
}

impl TryFrom<RawTimeWindow> for TimeWindow {
    type Error = ModelError;

    fn try_from(raw: RawTimeWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(raw.start, raw.end)
    }
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Result<Self, ModelError> {
        if start >= end {
            return Err(ModelError::invalid("window", "start must be < end"));
        }
        Ok(TimeWindow { start, end })
    }

    /// Window that admits every positive timestamp.
    pub fn all() -> Self {
        TimeWindow {
            start: 0,
            end: i64::MAX,
        }
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start && ts < self.end
    }

    pub fn len_secs(&self) -> i64 {
        self.end - self.start
    }

    pub fn contains_window(&self, other: &TimeWindow) -> bool {
        other.start >= self.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn intersect(&self, other: &TimeWindow) -> Option<TimeWindow> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(TimeWindow { start, end })
    }
}
