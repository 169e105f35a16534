//! Truncated quartic kernel density smoothing on a raster.
//!
//! Each source cell spreads its value over the offsets within `h` cells
//! (strictly closer than `h`, measured between cell centers) with weights
//! `(1 - (d/h)^2)^2`, normalized to sum to 1. Where part of that footprint
//! falls off the grid or onto nodata cells, the remaining in-grid weights are
//! renormalized so the source's full mass stays on the grid.

use super::AnalyticsError;
use crate::model::RasterGrid;

pub const DEFAULT_RADIUS_CELLS: usize = 2;

/// Kernel offsets `(dr, dc, weight)` with weights normalized over the full
/// (unclipped) footprint.
pub fn quartic_offsets(radius_cells: usize) -> Vec<(isize, isize, f64)> {
    let h = radius_cells as f64;
    let r = radius_cells as isize;
    let mut offsets = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            let d2 = (dr * dr + dc * dc) as f64;
            if d2 < h * h {
                let u = 1.0 - d2 / (h * h);
                offsets.push((dr, dc, u * u));
            }
        }
    }
    let total: f64 = offsets.iter().map(|o| o.2).sum();
    for o in &mut offsets {
        o.2 /= total;
    }
    offsets
}

pub fn kde(raster: &RasterGrid, radius_cells: usize) -> Result<RasterGrid, AnalyticsError> {
    if radius_cells < 1 {
        return Err(AnalyticsError::InvalidArgument {
            field: "radius_cells",
            message: "must be >= 1".into(),
        });
    }
    let offsets = quartic_offsets(radius_cells);
    let (nrows, ncols) = (raster.nrows() as isize, raster.ncols() as isize);
    let nodata = raster.nodata();
    let mut out = raster.map_data(|_| 0.0);
    let has_nodata = raster.values().iter().any(|&v| v == nodata);

    let target = |r: isize, c: isize| -> Option<(usize, usize)> {
        (r >= 0 && r < nrows && c >= 0 && c < ncols && !raster.is_nodata(raster.get(r as usize, c as usize)))
            .then_some((r as usize, c as usize))
    };

    for r in 0..nrows {
        for c in 0..ncols {
            let v = raster.get(r as usize, c as usize);
            if v == nodata || v == 0.0 {
                continue;
            }
            let interior = !has_nodata
                && r >= radius_cells as isize
                && c >= radius_cells as isize
                && r < nrows - radius_cells as isize
                && c < ncols - radius_cells as isize;
            let in_grid: f64 = if interior {
                1.0
            } else {
                offsets
                    .iter()
                    .filter(|(dr, dc, _)| target(r + dr, c + dc).is_some())
                    .map(|o| o.2)
                    .sum()
            };
            for &(dr, dc, w) in &offsets {
                if let Some((tr, tc)) = target(r + dr, c + dc) {
                    out.add_at(tr, tc, v * w / in_grid);
                }
            }
        }
    }
    Ok(out)
}
