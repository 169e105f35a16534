//! Export/import formats: ESRI ASCII grids, CSV tables and NDJSON events.
//!
//! ```text
//! NCOLS 2
//! NROWS 2
//! XLLCORNER -83.95
//! YLLCORNER 35.93
//! CELLSIZE 0.0008333333333333334
//! NODATA_VALUE -9999
//! 1 2
//! 3 4
//! ```
//!
//! Grid rows are written north-first. Header numbers use the shortest
//! representation that round-trips exactly; cell values are rounded to 10
//! significant digits.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::analytics::OccupancyCurve;
use crate::model::{GeoEvent, GridSpec, ModelError, RasterGrid, VenueBins};

/// Significant digits used for raster cell values.
pub const ASC_SIGNIFICANT_DIGITS: usize = 10;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed {format} input: {message}")]
    Malformed { format: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn malformed(format: &'static str, message: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        format,
        message: message.into(),
    }
}

/// Format `v` rounded to `digits` significant digits, without trailing noise.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let rounded: f64 = format!("{:.*e}", digits.saturating_sub(1), v)
        .parse()
        .expect("scientific output of format! parses");
    let mag = rounded.abs();
    if (1e-6..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

pub fn asc_header(spec: &GridSpec, nodata: f64) -> String {
    format!(
        "NCOLS {}\nNROWS {}\nXLLCORNER {}\nYLLCORNER {}\nCELLSIZE {}\nNODATA_VALUE {}\n",
        spec.ncols,
        spec.nrows,
        spec.west(),
        spec.south(),
        spec.cellsize,
        nodata
    )
}

pub fn asc_row(values: &[f64], nodata: f64) -> String {
    let mut line = values
        .iter()
        .map(|&v| {
            if v == nodata {
                format!("{nodata}")
            } else {
                format_significant(v, ASC_SIGNIFICANT_DIGITS)
            }
        })
        .collect::<Vec<_>>()
        .join(" ");
    line.push('\n');
    line
}

pub fn write_asc<W: Write>(raster: &RasterGrid, mut out: W) -> io::Result<()> {
    out.write_all(asc_header(raster.spec(), raster.nodata()).as_bytes())?;
    for row in raster.rows() {
        out.write_all(asc_row(row, raster.nodata()).as_bytes())?;
    }
    out.flush()
}

/// Parse an ESRI ASCII grid. Header keys are case-insensitive; both
/// `XLLCORNER` and `XLLCENTER` forms are accepted.
pub fn read_asc<R: BufRead>(input: R) -> Result<RasterGrid, FormatError> {
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut values: Vec<f64> = Vec::new();
    let mut in_body = false;
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !in_body {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or_default();
            if key.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
                let val = parts
                    .next()
                    .ok_or_else(|| malformed("asc", format!("header key {key} without value")))?;
                header.insert(key.to_ascii_lowercase(), val.to_string());
                continue;
            }
            in_body = true;
        }
        for tok in trimmed.split_whitespace() {
            values.push(
                tok.parse()
                    .map_err(|_| malformed("asc", format!("bad cell value {tok:?}")))?,
            );
        }
    }

    let get = |k: &str| header.get(k).map(String::as_str);
    let num = |k: &'static str| -> Result<f64, FormatError> {
        get(k)
            .ok_or_else(|| malformed("asc", format!("missing {k}")))?
            .parse::<f64>()
            .map_err(|_| malformed("asc", format!("bad {k}")))
    };
    let count = |k: &'static str| -> Result<usize, FormatError> {
        get(k)
            .ok_or_else(|| malformed("asc", format!("missing {k}")))?
            .parse::<usize>()
            .map_err(|_| malformed("asc", format!("bad {k}")))
    };
    let ncols = count("ncols")?;
    let nrows = count("nrows")?;
    let cellsize = num("cellsize")?;
    let xll = if header.contains_key("xllcorner") {
        num("xllcorner")?
    } else {
        num("xllcenter")? - cellsize / 2.0
    };
    let yll = if header.contains_key("yllcorner") {
        num("yllcorner")?
    } else {
        num("yllcenter")? - cellsize / 2.0
    };
    let nodata = if header.contains_key("nodata_value") {
        num("nodata_value")?
    } else {
        crate::model::DEFAULT_NODATA
    };
    if values.len() != ncols * nrows {
        return Err(malformed(
            "asc",
            format!("expected {} cell values, found {}", ncols * nrows, values.len()),
        ));
    }
    let spec = GridSpec::from_corner(xll, yll, ncols, nrows, cellsize)?;
    Ok(RasterGrid::from_values(spec, values, nodata)?)
}

/// Long-format venue table: `venue_id,bin,bin_start,count`.
pub fn write_venue_csv<W: Write>(bins: &VenueBins, out: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["venue_id", "bin", "bin_start", "bin_width", "count"])?;
    for (venue, row) in &bins.venues {
        for (i, count) in row.iter().enumerate() {
            w.write_record([
                venue.clone(),
                i.to_string(),
                bins.bin_start(i).to_string(),
                bins.bin_width.to_string(),
                count.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_venue_csv<R: io::Read>(input: R) -> Result<VenueBins, FormatError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows: Vec<(String, usize, i64, i64, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(malformed("csv", "venue table rows have 5 fields"));
        }
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let parse_err = |what: &str| malformed("csv", format!("bad {what}"));
        rows.push((
            field(0).to_string(),
            field(1).parse().map_err(|_| parse_err("bin"))?,
            field(2).parse().map_err(|_| parse_err("bin_start"))?,
            field(3).parse().map_err(|_| parse_err("bin_width"))?,
            field(4).parse().map_err(|_| parse_err("count"))?,
        ));
    }
    let Some(&(_, _, _, bin_width, _)) = rows.first() else {
        return Err(malformed("csv", "empty venue table"));
    };
    let nbins = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let window_start = rows
        .iter()
        .map(|r| r.2 - r.1 as i64 * bin_width)
        .next()
        .unwrap_or_default();
    let mut bins = VenueBins::new(window_start, bin_width, nbins);
    for (venue, bin, _, _, count) in rows {
        bins.add(&venue, bin, count);
    }
    Ok(bins)
}

pub fn write_occupancy_csv<W: Write>(curve: &OccupancyCurve, out: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["venue_id", "bin_start", "estimate", "ci_low", "ci_high"])?;
    for b in &curve.bins {
        w.write_record([
            curve.venue_id.clone(),
            b.start.to_string(),
            b.estimate.to_string(),
            b.ci_low.to_string(),
            b.ci_high.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of an occupancy table as `(bin_start, estimate, ci_low, ci_high)`.
pub fn read_occupancy_csv<R: io::Read>(input: R) -> Result<Vec<(i64, f64, f64, f64)>, FormatError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, FormatError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed("csv", format!("bad occupancy field {i}")))
        };
        let start = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("csv", "bad bin_start"))?;
        out.push((start, f(2)?, f(3)?, f(4)?));
    }
    Ok(out)
}

pub fn event_line(event: &GeoEvent) -> String {
    let mut s = serde_json::to_string(event).expect("events always serialize");
    s.push('\n');
    s
}

pub fn write_events_ndjson<'a, W: Write>(
    events: impl IntoIterator<Item = &'a GeoEvent>,
    mut out: W,
) -> io::Result<usize> {
    let mut n = 0;
    for e in events {
        out.write_all(event_line(e).as_bytes())?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Strict reader: every non-blank line must be a valid event.
pub fn read_events_ndjson<R: BufRead>(input: R) -> Result<Vec<GeoEvent>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw = crate::ingestion::RawRecord::parse(&line)
            .map_err(|e| malformed("ndjson", format!("line {}: {e}", i + 1)))?;
        let ev = crate::ingestion::validate(&raw)
            .map_err(|e| malformed("ndjson", format!("line {}: {e}", i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}
