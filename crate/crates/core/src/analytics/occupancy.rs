//! Unit occupancy curves with percentile-bootstrap confidence bands.
//!
//! Each observed day is divided by its own peak bin, days are averaged, and
//! the averaged curve is rescaled so its maximum is 1. Confidence bounds come
//! from resampling whole days with replacement and recomputing the curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyBin {
    pub start: i64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCurve {
    pub venue_id: String,
    pub bin_width: i64,
    pub bins: Vec<OccupancyBin>,
    /// Days that contributed (all-zero days are excluded).
    pub n_days: usize,
    pub confidence: f64,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct OccupancyOptions {
    pub venue_id: String,
    /// Timestamp of the first bin; bin `i` starts at `start + i * bin_width`.
    pub start: i64,
    pub bin_width: i64,
    pub confidence: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for OccupancyOptions {
    fn default() -> Self {
        OccupancyOptions {
            venue_id: String::new(),
            start: 0,
            bin_width: 1800,
            confidence: 0.95,
            resamples: 1000,
            seed: 0,
        }
    }
}

/// Mean of peak-normalized days, rescaled to a maximum of 1.
fn unit_curve(days: &[&[u64]], nbins: usize) -> Vec<f64> {
    let mut acc = vec![0.0; nbins];
    for day in days {
        let peak = *day.iter().max().expect("non-empty day") as f64;
        for (a, &c) in acc.iter_mut().zip(day.iter()) {
            *a += c as f64 / peak;
        }
    }
    let n = days.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    let max = acc.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for a in &mut acc {
            *a /= max;
        }
    }
    acc
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn occupancy_curve(per_day_bins: &[Vec<u64>], opts: &OccupancyOptions) -> Result<OccupancyCurve, AnalyticsError> {
    let Some(first) = per_day_bins.first() else {
        return Err(AnalyticsError::NoObservations);
    };
    let nbins = first.len();
    if per_day_bins.iter().any(|d| d.len() != nbins) {
        return Err(AnalyticsError::InvalidArgument {
            field: "per_day_bins",
            message: "all days must have the same number of bins".into(),
        });
    }
    if !(opts.confidence > 0.0 && opts.confidence < 1.0) {
        return Err(AnalyticsError::InvalidArgument {
            field: "confidence",
            message: "must be in (0, 1)".into(),
        });
    }
    if opts.resamples == 0 {
        return Err(AnalyticsError::InvalidArgument {
            field: "resamples",
            message: "must be positive".into(),
        });
    }
    let days: Vec<&[u64]> = per_day_bins
        .iter()
        .filter(|d| d.iter().any(|&c| c > 0))
        .map(Vec::as_slice)
        .collect();
    if days.is_empty() {
        return Err(AnalyticsError::NoObservations);
    }

    let estimate = unit_curve(&days, nbins);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut replicates: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.resamples); nbins];
    let mut sample: Vec<&[u64]> = Vec::with_capacity(days.len());
    for _ in 0..opts.resamples {
        sample.clear();
        sample.extend((0..days.len()).map(|_| days[rng.random_range(0..days.len())]));
        for (bin, v) in unit_curve(&sample, nbins).into_iter().enumerate() {
            replicates[bin].push(v);
        }
    }

    let lo_q = (1.0 - opts.confidence) / 2.0;
    let hi_q = (1.0 + opts.confidence) / 2.0;
    let bins = replicates
        .iter_mut()
        .zip(&estimate)
        .enumerate()
        .map(|(i, (reps, &est))| {
            reps.sort_by(f64::total_cmp);
            // Percentile bounds can exclude the point estimate for skewed
            // replicate distributions; widen to keep ci_low <= estimate <= ci_high.
            let lo = quantile(reps, lo_q).min(est).clamp(0.0, 1.0);
            let hi = quantile(reps, hi_q).max(est).clamp(0.0, 1.0);
            OccupancyBin {
                start: opts.start + i as i64 * opts.bin_width,
                estimate: est,
                ci_low: lo,
                ci_high: hi,
            }
        })
        .collect();

    Ok(OccupancyCurve {
        venue_id: opts.venue_id.clone(),
        bin_width: opts.bin_width,
        bins,
        n_days: days.len(),
        confidence: opts.confidence,
        resamples: opts.resamples,
        seed: opts.seed,
    })
}
